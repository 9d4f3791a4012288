"""Shift-invariant dictionary learning.

Each target column is modelled as ``w_j = sum_i z_ij * shift_ij(d_i)`` where
``shift_ij`` is drawn from a small set of translations. Learning alternates
shift selection plus coordinate descent on the codes with a block-coordinate
pass over the atoms, then prunes atoms whose usage energy is negligible.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError, IntegrityError, ShapeError
from .matcore import CsrMatrix, as_dense

log = logging.getLogger(__name__)

CIRCULAR = "circular"
ZERO_PADDED = "zero_padded"
MODES = (CIRCULAR, ZERO_PADDED)


def _shift_rows(x: np.ndarray, offset: int, mode: str) -> np.ndarray:
    """Translate ``x`` along axis 0 so that ``y[i] = x[i - offset]``."""
    if offset == 0:
        return x.copy()
    if mode == CIRCULAR:
        return np.roll(x, offset, axis=0)
    y = np.zeros_like(x)
    n = x.shape[0]
    if abs(offset) >= n:
        return y
    if offset > 0:
        y[offset:] = x[: n - offset]
    else:
        y[: n + offset] = x[-offset:]
    return y


@dataclass(frozen=True)
class ShiftOp:
    offset: int
    mode: str = CIRCULAR

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"unknown shift mode {self.mode!r}")

    def apply(self, x) -> np.ndarray:
        return _shift_rows(np.asarray(x, dtype=np.float64), self.offset, self.mode)

    def adjoint(self, y) -> np.ndarray:
        return _shift_rows(np.asarray(y, dtype=np.float64), -self.offset, self.mode)

    def inverse(self, y) -> np.ndarray:
        if self.mode != CIRCULAR and self.offset != 0:
            raise DomainError("zero-padded shifts are not invertible; use adjoint")
        return self.adjoint(y)

    def gram_diag(self, n: int) -> np.ndarray:
        """Diagonal of ``S^T S`` (1 where an input sample survives the shift)."""
        return self.adjoint(self.apply(np.ones(n)))


@dataclass(frozen=True)
class ShiftSet:
    max_offset: int = 2
    mode: str = CIRCULAR

    def __post_init__(self):
        if self.max_offset < 0:
            raise ConfigError("max_offset must be non-negative")
        if self.mode not in MODES:
            raise ConfigError(f"unknown shift mode {self.mode!r}")

    @classmethod
    def identity(cls) -> "ShiftSet":
        return cls(0, CIRCULAR)

    @property
    def offsets(self) -> tuple:
        return tuple(range(-self.max_offset, self.max_offset + 1))

    def ops(self) -> list:
        return [ShiftOp(o, self.mode) for o in self.offsets]

    def index_of(self, offset: int) -> int:
        return offset + self.max_offset

    def check_length(self, n: int):
        if 4 * self.max_offset > n:
            raise ConfigError(
                f"max_offset={self.max_offset} is too large for vectors of length {n}"
            )


@dataclass(eq=False)
class Dictionary:
    atoms: np.ndarray
    live: np.ndarray = None
    flagged: np.ndarray = None

    def __post_init__(self):
        self.atoms = as_dense(self.atoms)
        p = self.atoms.shape[1]
        self.live = np.ones(p, dtype=bool) if self.live is None else np.asarray(self.live, dtype=bool).copy()
        self.flagged = np.zeros(p, dtype=bool) if self.flagged is None else np.asarray(self.flagged, dtype=bool).copy()
        if self.live.shape != (p,) or self.flagged.shape != (p,):
            raise ShapeError("live/flagged must have one entry per atom")

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def p(self) -> int:
        return self.atoms.shape[1]

    @property
    def p_live(self) -> int:
        return int(self.live.sum())

    def validate(self, tol: float = 1e-9) -> "Dictionary":
        if self.p_live < 1:
            raise IntegrityError("dictionary has no live atoms")
        norms = np.linalg.norm(self.atoms[:, self.live], axis=0)
        if np.any(np.abs(norms - 1.0) > tol):
            raise IntegrityError("live atoms must have unit l2 norm")
        return self

    def copy(self) -> "Dictionary":
        return Dictionary(self.atoms.copy(), self.live, self.flagged)


@dataclass(eq=False)
class ShiftedCode:
    coeffs: CsrMatrix
    shifts: dict = field(default_factory=dict)
    mode: str = CIRCULAR

    @classmethod
    def zeros(cls, p: int, m: int, mode: str = CIRCULAR) -> "ShiftedCode":
        return cls(CsrMatrix.empty(p, m), {}, mode)

    @classmethod
    def from_arrays(cls, Z, offsets, mode: str = CIRCULAR) -> "ShiftedCode":
        Z = np.asarray(Z, dtype=np.float64)
        coeffs = CsrMatrix.from_dense(Z, 0.0)
        rr, cc = np.nonzero(Z)
        shifts = {(int(i), int(j)): ShiftOp(int(offsets[i, j]), mode) for i, j in zip(rr, cc)}
        return cls(coeffs, shifts, mode)

    @property
    def shape(self):
        return self.coeffs.shape

    def to_arrays(self):
        """Return ``(Z, offsets)`` as dense arrays; offsets of zero entries are 0."""
        Z = self.coeffs.to_dense()
        off = np.zeros(Z.shape, dtype=np.int64)
        for i, j in zip(*np.nonzero(Z)):
            op = self.shifts.get((int(i), int(j)))
            if op is None:
                raise IntegrityError(f"no shift recorded for stored coefficient ({i}, {j})")
            off[i, j] = op.offset
        return Z, off

    def validate(self) -> "ShiftedCode":
        self.coeffs.validate()
        Z = self.coeffs.to_dense()
        stored = {(int(i), int(j)) for i, j in zip(*np.nonzero(Z))}
        if stored != set(self.shifts):
            raise IntegrityError("shift table does not match the stored coefficients")
        return self


def _offset_slices(Z, offsets):
    """Split ``Z`` into ``{offset: Z restricted to entries with that offset}``."""
    out = {}
    nz = Z != 0
    for o in np.unique(offsets[nz]):
        out[int(o)] = np.where(nz & (offsets == o), Z, 0.0)
    return out


def _reconstruct_arrays(D, live, Z, offsets, mode):
    Zl = np.where(live[:, None], Z, 0.0)
    W = np.zeros((D.shape[0], Z.shape[1]))
    for o, Zo in _offset_slices(Zl, offsets).items():
        W += _shift_rows(D @ Zo, o, mode)
    return W


def reconstruct(dictionary: Dictionary, code: ShiftedCode) -> np.ndarray:
    """Column ``j`` of the result is ``sum_i z_ij * shift_ij(d_i)`` over live atoms."""
    Z, off = code.to_arrays()
    if Z.shape[0] != dictionary.p:
        raise ShapeError(f"code has {Z.shape[0]} rows for {dictionary.p} atoms")
    return _reconstruct_arrays(dictionary.atoms, dictionary.live, Z, off, code.mode)


def objective(dictionary: Dictionary, code: ShiftedCode, targets, lam: float) -> float:
    Z, off = code.to_arrays()
    return _objective_arrays(dictionary.atoms, dictionary.live, Z, off, code.mode, targets, lam)


def _objective_arrays(D, live, Z, off, mode, W, lam):
    R = W - _reconstruct_arrays(D, live, Z, off, mode)
    return 0.5 * float(np.sum(R * R)) + lam * float(np.abs(Z[live]).sum())


def _shifted_stack(D, live, shift_set: ShiftSet):
    """Shifted atoms ``A[s, i]``, squared norms ``q[s, i]`` and Gram blocks."""
    A = np.stack([_shift_rows(D, o, shift_set.mode).T for o in shift_set.offsets])
    A = np.ascontiguousarray(A)
    q = np.einsum("spn,spn->sp", A, A)
    q[:, ~live] = 0.0
    G = np.ascontiguousarray(np.einsum("spn,tpn->pst", A, A))
    return A, np.ascontiguousarray(q), G


def _code_step(D, live, W, Z, off, shift_set, lam, cd_cycles, select=True):
    """Shift selection + CD over every column; returns updated ``(Z, off)``."""
    A, q, G = _shifted_stack(D, live, shift_set)
    mode = shift_set.mode
    # offsets outside the current set fall back to identity
    sidx = np.clip(off, -shift_set.max_offset, shift_set.max_offset) + shift_set.max_offset
    sidx = np.where((Z != 0) & (np.abs(off) <= shift_set.max_offset), sidx, shift_set.max_offset)
    Z = np.where(live[:, None], Z, 0.0)
    R = W - _reconstruct_arrays(D, live, Z, np.where(Z != 0, sidx - shift_set.max_offset, 0), mode)
    lam_vec = np.full(D.shape[1], float(lam))
    Zt = np.ascontiguousarray(Z.T)
    St = np.ascontiguousarray(sidx.T, dtype=np.int64)
    Rt = np.ascontiguousarray(R.T)
    for j in range(W.shape[1]):
        kernels.shift_cd_column(A, q, G, lam_vec, Zt[j], St[j], Rt[j], bool(select), int(cd_cycles))
    Z = np.ascontiguousarray(Zt.T)
    off = np.where(Z != 0, St.T - shift_set.max_offset, 0).astype(np.int64)
    return Z, off


def assign_shifts_and_code(dictionary: Dictionary, targets, shift_set: ShiftSet, lam: float,
                           cd_cycles: int, code: ShiftedCode) -> ShiftedCode:
    """One code update: per-atom shift choice, then ``cd_cycles`` CD sweeps.

    For every column and live atom (ascending), the shift and coefficient are
    chosen jointly to minimise the penalised fit with the other atoms held
    fixed; for unit-norm circular shifts this is the shift with the largest
    ``|<shift(d_i), r>|`` against the atom-excluded residual. Shifts are then
    frozen for the CD sweeps.
    """
    if cd_cycles < 1:
        raise DomainError("cd_cycles must be >= 1")
    if lam < 0:
        raise DomainError("lam must be non-negative")
    W = as_dense(targets)
    D = dictionary.atoms
    if W.shape[0] != D.shape[0] or code.shape != (D.shape[1], W.shape[1]):
        raise ShapeError("dictionary, code and targets have inconsistent shapes")
    if code.mode != shift_set.mode and code.coeffs.nnz:
        raise ConfigError("code and shift set use different shift modes")
    shift_set.check_length(W.shape[0])
    Z, off = code.to_arrays()
    Z, off = _code_step(D, dictionary.live, W, Z, off, shift_set, lam, cd_cycles)
    return ShiftedCode.from_arrays(Z, off, shift_set.mode)


def _update_atoms_arrays(D, live, Z, off, W, mode):
    D = D.copy()
    flagged = np.zeros(D.shape[1], dtype=bool)
    R = W - _reconstruct_arrays(D, live, Z, off, mode)
    n = D.shape[0]
    for k in np.flatnonzero(live):
        zk = Z[k]
        used = np.flatnonzero(zk)
        usage = float(zk[used] @ zk[used])
        if usage == 0.0:
            flagged[k] = True
            continue
        dk = D[:, k]
        groups = {}
        for j in used:
            groups.setdefault(int(off[k, j]), []).append(j)
        # residual with atom k's contribution added back, per used column
        Rk = R[:, used].copy()
        for pos, j in enumerate(used):
            Rk[:, pos] += zk[j] * _shift_rows(dk, int(off[k, j]), mode)
        pos_of = {j: pos for pos, j in enumerate(used)}
        num = np.zeros(n)
        diag = np.zeros(n)
        for o, cols in groups.items():
            pcols = [pos_of[j] for j in cols]
            num += _shift_rows(Rk[:, pcols] @ zk[cols], -o, mode)
            if mode == ZERO_PADDED:
                diag += float(zk[cols] @ zk[cols]) * ShiftOp(o, mode).gram_diag(n)
        if mode == ZERO_PADDED:
            safe = diag > 0
            cand = dk.copy()
            cand[safe] = num[safe] / diag[safe]
        else:
            cand = num
        nrm = np.linalg.norm(cand)
        if nrm == 0.0 or not np.isfinite(nrm):
            flagged[k] = True
            continue
        cand = cand / nrm
        new_fit = np.zeros((n, used.size))
        for pos, j in enumerate(used):
            new_fit[:, pos] = zk[j] * _shift_rows(cand, int(off[k, j]), mode)
        Rnew = Rk - new_fit
        if mode == ZERO_PADDED:
            # normalisation is not the exact constrained minimiser here; keep
            # the old atom if the fit got worse
            if np.sum(Rnew * Rnew) > np.sum(R[:, used] * R[:, used]):
                continue
        D[:, k] = cand
        R[:, used] = Rnew
    return D, flagged


def update_atoms(dictionary: Dictionary, code: ShiftedCode, targets) -> Dictionary:
    """One block-coordinate pass over the live atoms in index order.

    Circular (and identity) shifts are orthogonal, so the normalised
    aggregate ``sum_j z_kj shift_kj^{-1}(residual_j)`` is the exact minimiser
    on the unit sphere. Zero-padded shifts use the adjoint and a diagonal
    rescaling before normalising. Atoms with no usage are left unchanged and
    flagged.
    """
    W = as_dense(targets)
    Z, off = code.to_arrays()
    D = dictionary.atoms
    if W.shape[0] != D.shape[0] or Z.shape != (D.shape[1], W.shape[1]):
        raise ShapeError("dictionary, code and targets have inconsistent shapes")
    D_new, flagged = _update_atoms_arrays(D, dictionary.live, Z, off, W, code.mode)
    return Dictionary(D_new, dictionary.live, flagged)


def prune_atoms(dictionary: Dictionary, code: ShiftedCode, energy_floor: float,
                targets=None, drop_tol: float = 0.0, lam: float = 0.0, refit_cycles: int = 50):
    """Remove atoms that carry negligible weight.

    Rule 1 kills atoms whose usage energy ``sum_j z_kj^2`` is below
    ``energy_floor`` times the largest usage energy; the highest-energy atom
    always survives. Rule 2 (only with ``targets`` and ``drop_tol > 0``)
    visits the remaining atoms in ascending energy order, drops each one
    tentatively, re-codes the columns that used it, and keeps the removal if
    the total squared-error increase caused by rule 2 stays within
    ``drop_tol * ||targets||_F^2``.

    Code rows of dead atoms are emptied; :func:`compact` drops them.
    """
    if not 0.0 <= energy_floor < 1.0:
        raise DomainError("energy_floor must lie in [0, 1)")
    if drop_tol < 0:
        raise DomainError("drop_tol must be non-negative")
    Z, off = code.to_arrays()
    live = dictionary.live.copy()
    energy = np.where(live, np.sum(Z * Z, axis=1), -1.0)
    top = int(np.argmax(energy))
    dead = live & (energy < energy_floor * energy[top])
    dead[top] = False
    live &= ~dead
    Z[~live] = 0.0
    if targets is not None and drop_tol > 0:
        Z, off, live = _eliminate(dictionary.atoms, live, Z, off, as_dense(targets),
                                  code.mode, lam, drop_tol, refit_cycles)
    new_dict = Dictionary(dictionary.atoms.copy(), live, dictionary.flagged)
    return new_dict, ShiftedCode.from_arrays(Z, off, code.mode)


def _eliminate(D, live, Z, off, W, mode, lam, drop_tol, refit_cycles):
    max_offset = int(np.max(np.abs(off), initial=0))
    shift_set = ShiftSet(max_offset, mode)
    budget = drop_tol * float(np.sum(W * W))
    R = W - _reconstruct_arrays(D, live, Z, off, mode)
    lam_vec = np.full(D.shape[1], float(lam))
    energy = np.sum(Z * Z, axis=1)
    for k in sorted(np.flatnonzero(live), key=lambda i: energy[i]):
        if live.sum() <= 1:
            break
        cols = np.flatnonzero(Z[k])
        trial_live = live.copy()
        trial_live[k] = False
        A, q, G = _shifted_stack(D, trial_live, shift_set)
        Zt = np.ascontiguousarray(Z[:, cols].T)
        Zt[:, k] = 0.0
        St = np.ascontiguousarray((off[:, cols] + max_offset).T, dtype=np.int64)
        Rt = np.ascontiguousarray(
            (W[:, cols] - _reconstruct_arrays(D, trial_live, Zt.T, St.T - max_offset, mode)).T
        )
        for c in range(cols.size):
            kernels.shift_cd_column(A, q, G, lam_vec, Zt[c], St[c], Rt[c], True, refit_cycles)
        cost = float(np.sum(Rt * Rt)) - float(np.sum(R[:, cols] ** 2))
        if cost <= budget:
            budget -= max(cost, 0.0)
            live = trial_live
            Z[:, cols] = Zt.T
            Z[k] = 0.0
            off[:, cols] = np.where(Zt.T != 0, St.T - max_offset, 0)
            R[:, cols] = Rt.T
    return Z, off, live


def compact(dictionary: Dictionary, code: ShiftedCode):
    """Drop dead atoms and their code rows."""
    keep = np.flatnonzero(dictionary.live)
    Z, off = code.to_arrays()
    d = Dictionary(dictionary.atoms[:, keep].copy())
    return d, ShiftedCode.from_arrays(Z[keep], off[keep], code.mode)


class LearnResult(NamedTuple):
    dictionary: Dictionary
    code: ShiftedCode
    history: list
    pruned: int


def init_dictionary(targets, initial_p: int, seed: int) -> Dictionary:
    """Atoms are ``initial_p`` distinct randomly chosen columns, normalised.

    Non-zero columns are drawn first; if there are fewer than ``initial_p`` of
    them the remainder are random unit vectors from the same generator.
    """
    W = as_dense(targets)
    n, m = W.shape
    if not 1 <= initial_p <= m:
        raise ConfigError(f"initial_p={initial_p} must lie in [1, {m}]")
    rng = np.random.default_rng(seed)
    norms = np.linalg.norm(W, axis=0)
    nonzero = np.flatnonzero(norms > 0)
    take = min(initial_p, nonzero.size)
    cols = rng.choice(nonzero, size=take, replace=False) if take else np.zeros(0, dtype=int)
    D = np.empty((n, initial_p))
    D[:, :take] = W[:, cols] / norms[cols]
    for k in range(take, initial_p):
        v = rng.standard_normal(n)
        D[:, k] = v / np.linalg.norm(v)
    return Dictionary(D)


def refit_codes(dictionary: Dictionary, code: ShiftedCode, targets, lam: float,
                max_cycles: int, tol: float = 1e-12) -> ShiftedCode:
    """Run CD with frozen shifts until converged (no shift reselection)."""
    W = as_dense(targets)
    Z, off = code.to_arrays()
    max_offset = int(np.max(np.abs(off), initial=0))
    shift_set = ShiftSet(max_offset, code.mode)
    A, q, G = _shifted_stack(dictionary.atoms, dictionary.live, shift_set)
    sidx = np.ascontiguousarray((off + max_offset).T, dtype=np.int64)
    Zt = np.ascontiguousarray(np.where(dictionary.live[:, None], Z, 0.0).T)
    Rt = np.ascontiguousarray(
        (W - _reconstruct_arrays(dictionary.atoms, dictionary.live, Zt.T, off, code.mode)).T
    )
    lam_vec = np.full(dictionary.p, float(lam))
    for j in range(W.shape[1]):
        for _ in range(max(1, max_cycles // 50)):
            change = kernels.shift_cd_column(A, q, G, lam_vec, Zt[j], sidx[j], Rt[j], False, 50)
            if change < tol:
                break
    Z = np.ascontiguousarray(Zt.T)
    return ShiftedCode.from_arrays(Z, np.where(Z != 0, sidx.T - max_offset, 0), code.mode)


def debias_codes(dictionary: Dictionary, code: ShiftedCode, targets) -> ShiftedCode:
    """Least-squares refit of every column on its current support and shifts.

    Removes the shrinkage bias of the l1 penalty without changing the sparsity
    pattern. Coefficients that come out exactly zero are dropped.
    """
    W = as_dense(targets)
    Z, off = code.to_arrays()
    D = dictionary.atoms
    Z = np.where(dictionary.live[:, None], Z, 0.0)
    for j in range(W.shape[1]):
        sup = np.flatnonzero(Z[:, j])
        if sup.size == 0:
            continue
        B = np.stack([_shift_rows(D[:, i], int(off[i, j]), code.mode) for i in sup], axis=1)
        Z[sup, j] = np.linalg.lstsq(B, W[:, j], rcond=None)[0]
    return ShiftedCode.from_arrays(Z, np.where(Z != 0, off, 0), code.mode)


def learn(targets, initial_p: int, shift_set: Optional[ShiftSet] = None, lam: float = 0.1,
          epochs: int = 10, energy_floor: float = 1e-4, seed: int = 0, cd_cycles: int = 3,
          refit_cycles: int = 0, drop_tol: float = 0.0, debias: bool = False) -> LearnResult:
    """Alternate code and atom updates for ``epochs`` epochs, then prune.

    ``history`` holds the penalised objective at initialisation and after
    every epoch. ``drop_tol`` enables marginal-contribution pruning (see
    :func:`prune_atoms`). With ``refit_cycles > 0`` the codes are re-solved with the
    final (pruned) dictionary and frozen shifts; ``debias`` then replaces the
    coefficients by a least-squares fit on their support.
    """
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    shift_set = shift_set or ShiftSet.identity()
    W = as_dense(targets)
    shift_set.check_length(W.shape[0])
    dictionary = init_dictionary(W, initial_p, seed)
    code = ShiftedCode.zeros(initial_p, W.shape[1], shift_set.mode)
    history = [objective(dictionary, code, W, lam)]
    for epoch in range(epochs):
        code = assign_shifts_and_code(dictionary, W, shift_set, lam, cd_cycles, code)
        dictionary = update_atoms(dictionary, code, W)
        history.append(objective(dictionary, code, W, lam))
        log.debug("epoch %d objective %.6g", epoch, history[-1])
    before = dictionary.p_live
    dictionary, code = prune_atoms(dictionary, code, energy_floor, W, drop_tol, lam)
    if refit_cycles > 0:
        code = refit_codes(dictionary, code, W, lam, refit_cycles)
    if debias:
        code = debias_codes(dictionary, code, W)
    return LearnResult(dictionary, code, history, before - dictionary.p_live)
