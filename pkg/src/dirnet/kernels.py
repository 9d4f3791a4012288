"""Backend selection for the hot inner loops.

The compiled extension is used when it was built; setting
``DIRNET_PURE_PYTHON=1`` forces the pure-Python implementation.
"""
import os

from . import _pykernels

if os.environ.get("DIRNET_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

cd_column = _impl.cd_column
cd_columns = _impl.cd_columns
shift_cd_column = _impl.shift_cd_column
csr_matvec = _impl.csr_matvec
csr_matmat = _impl.csr_matmat


def backend_module(name):
    """Return the kernel module for ``name`` ('cython' or 'python')."""
    if name == "python":
        return _pykernels
    from . import _ckernels

    return _ckernels
