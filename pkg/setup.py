import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python fallback is used at runtime
    cythonize = None

extensions = []
if cythonize is not None and not os.environ.get("DIRNET_NO_EXT"):
    extensions = cythonize(
        [
            Extension(
                "dirnet._ckernels",
                ["src/dirnet/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=extensions)
