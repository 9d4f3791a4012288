"""LASSO by cyclic coordinate descent, with an ISTA reference solver.

All objectives use the ``1/2`` data-fit convention::

    F(z) = 0.5 * ||target - D z||^2 + lam * sum_j w_j |z_j|
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import DomainError, ShapeError

COLUMN_NORM_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class LassoProblem:
    dict: np.ndarray
    target: np.ndarray
    lam: float
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        D = np.ascontiguousarray(self.dict, dtype=np.float64)
        t = np.ascontiguousarray(self.target, dtype=np.float64)
        if D.ndim != 2 or t.ndim != 1 or D.shape[0] != t.shape[0]:
            raise ShapeError(f"dictionary {D.shape} incompatible with target {t.shape}")
        if self.lam < 0:
            raise DomainError("lam must be non-negative")
        norms = np.linalg.norm(D, axis=0)
        if np.any(norms > 1.0 + COLUMN_NORM_SLACK):
            raise DomainError("dictionary columns must have l2 norm <= 1")
        object.__setattr__(self, "dict", D)
        object.__setattr__(self, "target", t)
        if self.weights is not None:
            w = np.ascontiguousarray(self.weights, dtype=np.float64)
            if w.shape != (D.shape[1],):
                raise ShapeError("weights must have one entry per column")
            # +inf is allowed: it pins the coordinate at zero
            if np.any(~(w > 0)) or np.any(np.isnan(w)):
                raise DomainError("weights must be strictly positive")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.dict.shape[0]

    @property
    def p(self) -> int:
        return self.dict.shape[1]

    def penalties(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.p, float(self.lam))
        pen = self.lam * self.weights
        # 0 * inf: an unpenalised problem stays unpenalised
        pen[np.isnan(pen)] = 0.0
        return pen

    def objective(self, z) -> float:
        r = self.target - self.dict @ z
        pen = self.penalties()
        nz = z != 0
        return 0.5 * float(r @ r) + float(np.sum(pen[nz] * np.abs(z[nz])))


@dataclass
class CdState:
    code: np.ndarray
    residual: np.ndarray
    steps_done: int = 0

    @classmethod
    def zeros(cls, problem: LassoProblem) -> "CdState":
        return cls(np.zeros(problem.p), problem.target.copy(), 0)

    @classmethod
    def warm(cls, problem: LassoProblem, code) -> "CdState":
        code = np.array(code, dtype=np.float64)
        if code.shape != (problem.p,):
            raise ShapeError("warm-start code has the wrong length")
        return cls(code, problem.target - problem.dict @ code, 0)

    def residual_drift(self, problem: LassoProblem) -> float:
        exact = problem.target - problem.dict @ self.code
        return float(np.max(np.abs(exact - self.residual), initial=0.0))


class LassoSolution(NamedTuple):
    code: np.ndarray
    converged: bool
    cycles: int


def _check_state(problem: LassoProblem, state: CdState):
    if state.code.shape != (problem.p,) or state.residual.shape != (problem.n,):
        raise ShapeError("state dimensions do not match the problem")


def cd_steps(problem: LassoProblem, state: CdState, num_steps: int) -> CdState:
    """Run ``num_steps`` full ascending-order CD cycles from ``state``.

    Each coordinate update is
    ``z_j <- s_{lam w_j}(d_j^T r + |d_j|^2 z_j) / |d_j|^2`` with the residual
    updated incrementally. Returns a new state; the input is not modified.
    """
    if num_steps < 1:
        raise DomainError("num_steps must be >= 1")
    _check_state(problem, state)
    z = state.code.copy()
    r = state.residual.copy()
    Dt = np.ascontiguousarray(problem.dict.T)
    col_sq = np.einsum("ij,ij->i", Dt, Dt)
    kernels.cd_column(Dt, col_sq, problem.penalties(), z, r, int(num_steps), -1.0)
    return CdState(z, r, state.steps_done + num_steps)


def solve_lasso(problem: LassoProblem, tol: float = 1e-7, max_cycles: int = 10000,
                init: Optional[np.ndarray] = None) -> LassoSolution:
    """Cycle CD from zero (or ``init``) until the largest coordinate change in
    a cycle is below ``tol``."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    state = CdState.zeros(problem) if init is None else CdState.warm(problem, init)
    z, r = state.code, state.residual
    Dt = np.ascontiguousarray(problem.dict.T)
    col_sq = np.einsum("ij,ij->i", Dt, Dt)
    cycles, change = kernels.cd_column(Dt, col_sq, problem.penalties(), z, r,
                                       int(max_cycles), float(tol))
    return LassoSolution(z, bool(change < tol), int(cycles))


def solve_lasso_columns(D, W, penalties, tol: float = 1e-7, max_cycles: int = 10000,
                        init=None):
    """Solve one LASSO per column of ``W`` sharing dictionary ``D``.

    ``penalties`` holds the per-coefficient threshold ``lam * w_j`` (may be
    ``inf``). Returns ``(Z, cycles_per_column)``; ``Z`` is ``p x m``.
    """
    D = np.ascontiguousarray(D, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != D.shape[0]:
        raise ShapeError(f"targets {W.shape} incompatible with dictionary {D.shape}")
    Dt = np.ascontiguousarray(D.T)
    col_sq = np.einsum("ij,ij->i", Dt, Dt)
    if init is None:
        Zt = np.zeros((W.shape[1], D.shape[1]))
        Rt = np.ascontiguousarray(W.T)
    else:
        Zt = np.ascontiguousarray(np.asarray(init, dtype=np.float64).T)
        Rt = np.ascontiguousarray((W - D @ Zt.T).T)
    pen = np.ascontiguousarray(penalties, dtype=np.float64)
    cycles, _ = kernels.cd_columns(Dt, col_sq, pen, Zt, Rt, int(max_cycles), float(tol))
    return np.ascontiguousarray(Zt.T), cycles


def _power_iteration(D, iters: int = 500, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(D.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = D.T @ (D @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nrm
        if abs(new - lam) <= 1e-15 * max(new, 1.0):
            lam = new
            break
        lam = new
    return lam


def ista_oracle(problem: LassoProblem, tol: float = 1e-12, max_iters: int = 1_000_000) -> np.ndarray:
    """Proximal gradient with constant step ``1/L``; reference only.

    ``L`` is the top eigenvalue of ``D^T D`` from power iteration, inflated
    slightly so the step stays below ``1/L_true``. Iterates until the
    objective changes by less than ``tol``.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    D, t = problem.dict, problem.target
    pen = problem.penalties()
    L = _power_iteration(D) * (1.0 + 1e-6)
    z = np.zeros(problem.p)
    if L == 0.0:
        return z
    step = 1.0 / L
    obj = problem.objective(z)
    for _ in range(max_iters):
        grad = D.T @ (D @ z - t)
        u = z - step * grad
        z = np.sign(u) * np.maximum(np.abs(u) - step * pen, 0.0)
        new = problem.objective(z)
        if abs(obj - new) < tol:
            break
        obj = new
    return z


def kkt_residual(problem: LassoProblem, z) -> float:
    """Largest violation of the LASSO subgradient optimality conditions."""
    g = problem.dict.T @ (problem.target - problem.dict @ z)
    pen = problem.penalties()
    nz = z != 0
    viol = np.maximum(np.abs(g) - pen, 0.0)
    viol[nz] = np.abs(g[nz] - pen[nz] * np.sign(z[nz]))
    return float(np.max(viol, initial=0.0))
