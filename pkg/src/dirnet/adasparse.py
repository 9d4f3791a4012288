"""Adaptively re-weighted sparsification of codes against a fixed dictionary.

The codes ``Z`` of a target matrix are found by alternating a weighted LASSO
(row ``i`` of ``Z`` penalised by ``lam2 * theta_i^-gamma``) with a closed-form
update of the weight vector ``theta`` on the simplex
``{theta >= 0, sum(theta) = budget}``. Stages shrink the budget
geometrically, which raises every penalty and sparsifies the codes until the
requested density is reached.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .cdsolver import solve_lasso_columns
from .errors import ConfigError, DomainError, ShapeError
from .matcore import CsrMatrix, as_dense

log = logging.getLogger(__name__)

LAMBDA2_GRID = tuple(10.0 ** k for k in range(-3, 4))


@dataclass
class ThetaState:
    theta: np.ndarray
    budget: float
    gamma: float = 0.4
    stage: int = 0

    def check(self, tol: float = 1e-9):
        if np.any(self.theta < 0):
            raise DomainError("theta must be non-negative")
        if abs(self.theta.sum() - self.budget) > tol * max(1.0, self.budget):
            raise DomainError("theta does not sum to the budget")


@dataclass(frozen=True)
class ShrinkSchedule:
    theta0: float = 1e7
    shrink_factor: float = 0.4
    max_stages: int = 25
    target_nnz_frac: float = 0.15
    inner_tol: float = 1e-6
    inner_max_iters: int = 50
    cd_tol: float = 1e-9
    cd_max_cycles: int = 5000

    def __post_init__(self):
        if self.theta0 <= 0:
            raise ConfigError("theta0 must be positive")
        if not 0.0 < self.shrink_factor < 1.0:
            raise ConfigError("shrink_factor must lie in (0, 1)")
        if not 0.0 < self.target_nnz_frac <= 1.0:
            raise ConfigError("target_nnz_frac must lie in (0, 1]")
        if self.max_stages < 1 or self.inner_max_iters < 1:
            raise ConfigError("max_stages and inner_max_iters must be >= 1")

    def budget(self, stage: int) -> float:
        return self.theta0 * self.shrink_factor ** stage


def theta_closed_form(c, gamma: float, budget: float) -> np.ndarray:
    """Minimiser of ``sum_i c_i * theta_i^-gamma`` on the scaled simplex.

    ``theta_i = budget * c_i^(1/(1+gamma)) / sum_k c_k^(1/(1+gamma))``,
    renormalised so the sum is exactly ``budget`` in floating point.
    """
    c = np.asarray(c, dtype=np.float64)
    if gamma <= 0 or budget <= 0:
        raise DomainError("gamma and budget must be positive")
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise DomainError("usage vector must be finite and non-negative")
    if not np.any(c > 0):
        log.info("all row usages are zero; using uniform theta")
        return np.full(c.shape, budget / c.size)
    t = c ** (1.0 / (1.0 + gamma))
    theta = budget * (t / t.sum())
    return theta * (budget / theta.sum())


def theta_objective(c, theta, gamma: float) -> float:
    """``sum_i c_i theta_i^-gamma`` with the convention ``0 * inf = 0``."""
    c = np.asarray(c, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    used = c > 0
    if np.any(theta[used] <= 0):
        return float("inf")
    return float(np.sum(c[used] * theta[used] ** (-gamma)))


def row_weights(theta, gamma: float) -> np.ndarray:
    """Per-row penalty multipliers ``theta^-gamma``; zero theta gives ``inf``."""
    theta = np.asarray(theta, dtype=np.float64)
    with np.errstate(divide="ignore"):
        w = np.where(theta > 0, theta, 0.0) ** (-gamma)
    if np.any(np.isinf(w)):
        log.debug("%d rows have zero theta and are pinned at zero", int(np.isinf(w).sum()))
    return w


def joint_objective(D, W, Z, theta, gamma: float, lam2: float) -> float:
    R = W - D @ Z
    c = np.abs(Z).sum(axis=1)
    return 0.5 * float(np.sum(R * R)) + lam2 * theta_objective(c, theta, gamma)


def _check_inputs(D, W):
    D = as_dense(D)
    W = as_dense(W)
    if D.shape[0] != W.shape[0]:
        raise ShapeError(f"dictionary {D.shape} incompatible with target {W.shape}")
    return D, W


def weighted_lasso(D, W, weights, lam2: float, sched: ShrinkSchedule, init=None) -> np.ndarray:
    """Column-wise LASSO with per-row penalties ``lam2 * weights``."""
    pen = lam2 * np.asarray(weights, dtype=np.float64)
    pen[np.isnan(pen)] = 0.0
    Z, _ = solve_lasso_columns(D, W, pen, tol=sched.cd_tol, max_cycles=sched.cd_max_cycles, init=init)
    return Z


class StageResult(NamedTuple):
    code: np.ndarray
    state: ThetaState
    objective: list
    iters: int


def _alternate(D, W, state: ThetaState, lam2: float, sched: ShrinkSchedule, Z0=None) -> StageResult:
    theta = state.theta.copy()
    Z = Z0
    history = []
    it = 0
    for it in range(1, sched.inner_max_iters + 1):
        w = row_weights(theta, state.gamma)
        if Z is not None:
            # a row pinned by an infinite weight starts from zero
            Z = np.where(np.isinf(w)[:, None], 0.0, Z)
        Z = weighted_lasso(D, W, w, lam2, sched, init=Z)
        c = np.abs(Z).sum(axis=1)
        new_theta = theta_closed_form(c, state.gamma, state.budget)
        history.append(joint_objective(D, W, Z, new_theta, state.gamma, lam2))
        change = np.max(np.abs(new_theta - theta)) / state.budget
        theta = new_theta
        if change < sched.inner_tol:
            break
    return StageResult(Z, ThetaState(theta, state.budget, state.gamma, state.stage), history, it)


def alternate_stage(dictionary, target, state: ThetaState, lam2: float, sched: ShrinkSchedule,
                    init=None):
    """Alternate weighted-LASSO and closed-form theta updates at fixed budget.

    Stops when the largest theta change relative to the budget drops below
    ``sched.inner_tol`` or after ``sched.inner_max_iters`` rounds. Returns
    ``(CsrMatrix codes, ThetaState)``.
    """
    if state.budget <= 0:
        raise DomainError("budget must be positive")
    D = getattr(dictionary, "atoms", dictionary)
    D, W = _check_inputs(D, target)
    if state.theta.shape != (D.shape[1],):
        raise ShapeError("theta must have one entry per atom")
    res = _alternate(D, W, state, lam2, sched, init)
    return CsrMatrix.from_dense(res.code), res.state


@dataclass
class ScheduleResult:
    code: CsrMatrix
    state: ThetaState
    stage_log: list = field(default_factory=list)
    reached: bool = False

    def __iter__(self):
        return iter((self.code, self.state, self.stage_log))


def initial_theta(p: int, budget: float, seed: int) -> np.ndarray:
    """Uniform weights with a +-1% seeded perturbation, summing to ``budget``."""
    rng = np.random.default_rng(seed)
    theta = (budget / p) * (1.0 + rng.uniform(-0.01, 0.01, size=p))
    return theta * (budget / theta.sum())


def run_schedule(dictionary, target, sched: ShrinkSchedule, lam2: float, gamma: float = 0.4,
                 seed: int = 0) -> ScheduleResult:
    """Shrink the weight budget stage by stage until the codes are sparse enough.

    Stage ``tau`` uses budget ``theta0 * shrink_factor**tau`` and warm-starts
    both codes and weights from the previous stage. Stops as soon as the
    nonzero fraction of the codes is at most ``sched.target_nnz_frac``.
    """
    if lam2 < 0:
        raise DomainError("lam2 must be non-negative")
    D = getattr(dictionary, "atoms", dictionary)
    D, W = _check_inputs(D, target)
    p = D.shape[1]
    state = ThetaState(initial_theta(p, sched.theta0, seed), sched.theta0, gamma, 0)
    Z = None
    stage_log = []
    reached = False
    for tau in range(sched.max_stages):
        budget = sched.budget(tau)
        if tau > 0:
            state = ThetaState(state.theta * (budget / state.budget), budget, gamma, tau)
        res = _alternate(D, W, state, lam2, sched, Z)
        Z, state = res.code, res.state
        frac = np.count_nonzero(Z) / Z.size
        stage_log.append({
            "stage": tau,
            "budget": budget,
            "nnz_frac": frac,
            "objective": res.objective[-1],
            "iters": res.iters,
        })
        log.debug("stage %d budget %.3g nnz %.3f", tau, budget, frac)
        if frac <= sched.target_nnz_frac:
            reached = True
            break
    if not reached:
        log.info("target density %.3f not reached in %d stages", sched.target_nnz_frac, sched.max_stages)
    return ScheduleResult(CsrMatrix.from_dense(Z), state, stage_log, reached)


def select_lambda2(dictionary, target, sched: ShrinkSchedule, gamma: float = 0.4, seed: int = 0,
                   grid=LAMBDA2_GRID, band=(0.10, 0.20)):
    """Grid-search ``lam2``: lowest reconstruction error among runs whose final
    density lies in ``band``; ties go to the larger ``lam2``.

    Falls back to the run whose density is closest to the band when none
    lands inside it. Returns ``(lam2, ScheduleResult)``.
    """
    D = getattr(dictionary, "atoms", dictionary)
    D, W = _check_inputs(D, target)
    best = None
    for lam2 in sorted(grid):
        res = run_schedule(D, W, sched, lam2, gamma, seed)
        Z = res.code.to_dense()
        frac = np.count_nonzero(Z) / Z.size
        err = float(np.linalg.norm(W - D @ Z))
        gap = 0.0 if band[0] <= frac <= band[1] else min(abs(frac - band[0]), abs(frac - band[1]))
        key = (gap, err, -lam2)
        if best is None or key <= best[0]:
            best = (key, lam2, res)
    return best[1], best[2]


def ols_weights(dictionary, target, gamma: float, ridge: float = 1e-8) -> np.ndarray:
    """Fixed adaptive-LASSO weights ``rowl1(Z_ols)^-gamma``.

    ``Z_ols`` solves the least-squares fit; a tiny ridge is added when
    ``D^T D`` is singular. Rows with zero l1 norm get weight ``inf``.
    """
    D = getattr(dictionary, "atoms", dictionary)
    D, W = _check_inputs(D, target)
    Z = ols_codes(D, W, ridge)
    c = np.abs(Z).sum(axis=1)
    with np.errstate(divide="ignore"):
        return np.where(c > 0, c, 0.0) ** (-gamma)


def ols_codes(D, W, ridge: float = 1e-8) -> np.ndarray:
    G = D.T @ D
    if np.linalg.matrix_rank(G) < G.shape[0]:
        G = G + ridge * np.eye(G.shape[0])
    return np.linalg.solve(G, D.T @ W)


def fixed_weight_solve(dictionary, target, gamma: float, lam2: float,
                       sched: Optional[ShrinkSchedule] = None) -> CsrMatrix:
    """Single weighted-LASSO solve with OLS-derived weights (no alternation)."""
    sched = sched or ShrinkSchedule()
    D = getattr(dictionary, "atoms", dictionary)
    D, W = _check_inputs(D, target)
    return CsrMatrix.from_dense(weighted_lasso(D, W, ols_weights(D, W, gamma), lam2, sched))
