"""Pure-Python twins of the compiled kernels in ``_ckernels.pyx``.

Semantics (including sweep order and tie-breaking) match the compiled
versions so that either backend produces the same iterates.
"""
import numpy as np


def _shrink(b, lam):
    if b > lam:
        return b - lam
    if b < -lam:
        return b + lam
    return 0.0


def cd_column(Dt, col_sq, lam, z, r, max_cycles, tol):
    p = Dt.shape[0]
    cycle = 0
    change = 0.0
    while cycle < max_cycles:
        change = 0.0
        for j in range(p):
            if col_sq[j] <= 0.0:
                if z[j] != 0.0:
                    r += z[j] * Dt[j]
                    z[j] = 0.0
                continue
            b = float(Dt[j] @ r) + col_sq[j] * z[j]
            znew = _shrink(b, lam[j]) / col_sq[j]
            delta = znew - z[j]
            if delta != 0.0:
                r -= delta * Dt[j]
                z[j] = znew
                change = max(change, abs(delta))
        cycle += 1
        if change < tol:
            break
    return cycle, change


def cd_columns(Dt, col_sq, lam, Zt, Rt, max_cycles, tol):
    m = Zt.shape[0]
    cycles = np.zeros(m, dtype=np.int64)
    changes = np.zeros(m, dtype=np.float64)
    for c in range(m):
        cycles[c], changes[c] = cd_column(Dt, col_sq, lam, Zt[c], Rt[c], max_cycles, tol)
    return cycles, changes


def shift_cd_column(A, q, G, lam, z, sidx, r, select, cycles):
    S, p, _ = A.shape
    if select:
        for i in range(p):
            cur = int(sidx[i])
            if q[cur, i] <= 0.0:
                continue
            zold = z[i]
            bcur = float(A[cur, i] @ r) + zold * G[i, cur, cur]
            best = cur
            bestval = _shrink(abs(bcur), lam[i]) ** 2 / q[cur, i]
            c = bcur
            for s in range(S):
                if s == cur or q[s, i] <= 0.0:
                    continue
                val = float(A[s, i] @ r) + zold * G[i, s, cur]
                gain = _shrink(abs(val), lam[i]) ** 2 / q[s, i]
                if gain > bestval * (1.0 + 1e-12) and gain > 0.0:
                    bestval = gain
                    best = s
                    c = val
            znew = _shrink(c, lam[i]) / q[best, i]
            if zold != 0.0:
                r += zold * A[cur, i]
            if znew != 0.0:
                r -= znew * A[best, i]
            z[i] = znew
            sidx[i] = best
    change = 0.0
    for _ in range(cycles):
        change = 0.0
        for i in range(p):
            s = int(sidx[i])
            if q[s, i] <= 0.0:
                continue
            c = float(A[s, i] @ r) + q[s, i] * z[i]
            znew = _shrink(c, lam[i]) / q[s, i]
            delta = znew - z[i]
            if delta != 0.0:
                r -= delta * A[s, i]
                z[i] = znew
                change = max(change, abs(delta))
    return change


def csr_matvec(row_ptr, col_idx, vals, x):
    rows = row_ptr.shape[0] - 1
    y = np.zeros(rows, dtype=np.float64)
    for r in range(rows):
        lo, hi = row_ptr[r], row_ptr[r + 1]
        if hi > lo:
            y[r] = vals[lo:hi] @ x[col_idx[lo:hi]]
    return y


def csr_matmat(row_ptr, col_idx, vals, X):
    rows = row_ptr.shape[0] - 1
    Y = np.zeros((rows, X.shape[1]), dtype=np.float64)
    for r in range(rows):
        lo, hi = row_ptr[r], row_ptr[r + 1]
        if hi > lo:
            Y[r] = vals[lo:hi] @ X[col_idx[lo:hi]]
    return Y
