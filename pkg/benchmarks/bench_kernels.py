"""Time the compiled kernels against their pure-Python twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--json]

Each case runs both backends on identical inputs, checks that the outputs
agree, and reports the best-of-N wall time and the speedup.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from dirnet.kernels import backend_module
from dirnet.matcore import CsrMatrix


def _best(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def case_cd_columns(mod, rng_seed=0, n=64, p=32, m=64, lam=0.1):
    rng = np.random.default_rng(rng_seed)
    D = rng.standard_normal((n, p))
    W = rng.standard_normal((n, m))
    Dt = np.ascontiguousarray(D.T)
    col_sq = np.einsum("ij,ij->j", D, D)
    pen = np.full(p, lam)

    def run():
        Zt = np.zeros((m, p))
        Rt = np.ascontiguousarray(W.T).copy()
        mod.cd_columns(Dt, col_sq, pen, Zt, Rt, 200, 1e-10)
        return Zt
    return run


def case_shift_cd(mod, rng_seed=0, n=64, p=16, m=64, S=5, lam=0.1):
    rng = np.random.default_rng(rng_seed)
    A = rng.standard_normal((S, p, n))
    q = np.einsum("spn,spn->sp", A, A)
    G = np.ascontiguousarray(np.einsum("spn,tpn->pst", A, A))
    W = rng.standard_normal((m, n))
    pen = np.full(p, lam)

    def run():
        Zt = np.zeros((m, p))
        St = np.zeros((m, p), dtype=np.int64)
        Rt = W.copy()
        for j in range(m):
            mod.shift_cd_column(A, q, G, pen, Zt[j], St[j], Rt[j], True, 3)
        return Zt
    return run


def case_csr_matmat(mod, rng_seed=0, rows=256, cols=256, k=32, density=0.15):
    rng = np.random.default_rng(rng_seed)
    M = rng.standard_normal((rows, cols)) * (rng.random((rows, cols)) < density)
    Z = CsrMatrix.from_dense(M)
    X = rng.standard_normal((cols, k))
    return lambda: mod.csr_matmat(Z.row_ptr, Z.col_idx, Z.vals, X)


CASES = {"cd_columns": case_cd_columns, "shift_cd_column": case_shift_cd,
         "csr_matmat": case_csr_matmat}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    try:
        cy = backend_module("cython")
    except ImportError:
        raise SystemExit("compiled extension not built; run pip install -e . first")
    py = backend_module("python")
    rows = []
    for name, make in CASES.items():
        t_c, out_c = _best(make(cy), args.repeat)
        t_p, out_p = _best(make(py), max(1, args.repeat // 2))
        rows.append({"case": name, "cython_s": t_c, "python_s": t_p, "speedup": t_p / t_c,
                     "max_abs_diff": float(np.max(np.abs(out_c - out_p)))})
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print(f"{'case':<18}{'cython s':>12}{'python s':>12}{'speedup':>10}{'max diff':>12}")
        for r in rows:
            print(f"{r['case']:<18}{r['cython_s']:>12.5f}{r['python_s']:>12.5f}"
                  f"{r['speedup']:>10.1f}{r['max_abs_diff']:>12.2e}")
    return rows


if __name__ == "__main__":
    main()
