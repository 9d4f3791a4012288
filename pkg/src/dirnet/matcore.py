"""Dense and CSR containers plus the elementary kernels built on them.

Dense matrices are plain float64 ``numpy`` arrays (row-major). Sparse codes
use :class:`CsrMatrix`, which never stores explicit zeros.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError, IntegrityError, ShapeError


def as_dense(a) -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 C-ordered array."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("matrix has non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_dense(a)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"cannot multiply {a.shape} by vector of length {b.shape[0]}")
        return a @ b
    b = as_dense(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def soft_threshold(b, lam):
    """Proximal map of ``lam * |.|``: ``sign(b) * max(|b| - lam, 0)``.

    Works elementwise on arrays; ``lam`` may be ``inf``.
    """
    if np.any(np.asarray(lam) < 0):
        raise DomainError("threshold must be non-negative")
    out = np.sign(b) * np.maximum(np.abs(b) - lam, 0.0)
    if np.ndim(out) == 0:
        return float(out)
    return out


def frob_norm_sq(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(a * a))


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", np.ascontiguousarray(self.row_ptr, dtype=np.int64))
        object.__setattr__(self, "col_idx", np.ascontiguousarray(self.col_idx, dtype=np.int64))
        object.__setattr__(self, "vals", np.ascontiguousarray(self.vals, dtype=np.float64))

    @property
    def nnz(self) -> int:
        return int(self.vals.shape[0])

    @property
    def shape(self):
        return (self.rows, self.cols)

    def validate(self) -> "CsrMatrix":
        """Check every structural invariant; raise IntegrityError on failure."""
        rp, ci, v = self.row_ptr, self.col_idx, self.vals
        if self.rows < 1 or self.cols < 1:
            raise IntegrityError("CSR dimensions must be positive")
        if rp.shape != (self.rows + 1,) or rp[0] != 0:
            raise IntegrityError("row_ptr must have rows+1 entries starting at 0")
        if np.any(np.diff(rp) < 0):
            raise IntegrityError("row_ptr is decreasing")
        if rp[-1] != ci.shape[0] or ci.shape[0] != v.shape[0]:
            raise IntegrityError("row_ptr[-1], len(col_idx) and len(vals) disagree")
        if ci.size and (ci.min() < 0 or ci.max() >= self.cols):
            raise IntegrityError("column index out of range")
        for r in range(self.rows):
            seg = ci[rp[r]:rp[r + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                raise IntegrityError(f"row {r}: column indices not strictly increasing")
        if np.any(v == 0.0) or not np.all(np.isfinite(v)):
            raise IntegrityError("stored values must be finite and non-zero")
        return self

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        counts = np.diff(self.row_ptr)
        out[np.repeat(np.arange(self.rows), counts), self.col_idx] = self.vals
        return out

    def mask(self) -> np.ndarray:
        """Boolean dense pattern of the stored entries."""
        out = np.zeros((self.rows, self.cols), dtype=bool)
        counts = np.diff(self.row_ptr)
        out[np.repeat(np.arange(self.rows), counts), self.col_idx] = True
        return out

    def matvec(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.cols:
            raise ShapeError(f"vector length {x.shape} does not match {self.cols} columns")
        return kernels.csr_matvec(self.row_ptr, self.col_idx, self.vals, x)

    def matmat(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.cols:
            raise ShapeError(f"block of shape {X.shape} does not match {self.cols} columns")
        return kernels.csr_matmat(self.row_ptr, self.col_idx, self.vals, X)

    @classmethod
    def from_dense(cls, a, eps: float = 0.0) -> "CsrMatrix":
        if eps < 0:
            raise DomainError("eps must be non-negative")
        a = as_dense(a)
        keep = np.abs(a) > eps
        rr, cc = np.nonzero(keep)
        row_ptr = np.zeros(a.shape[0] + 1, dtype=np.int64)
        np.cumsum(keep.sum(axis=1), out=row_ptr[1:])
        return cls(a.shape[0], a.shape[1], row_ptr, cc, a[rr, cc])

    @classmethod
    def empty(cls, rows: int, cols: int) -> "CsrMatrix":
        return cls(rows, cols, np.zeros(rows + 1, dtype=np.int64), [], [])

    def equals(self, other: "CsrMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.vals, other.vals)
        )


def to_csr(a, eps: float = 0.0) -> CsrMatrix:
    return CsrMatrix.from_dense(a, eps)


def to_dense(z: CsrMatrix) -> np.ndarray:
    return z.to_dense()


def nnz(z: CsrMatrix) -> int:
    return z.nnz


def csr_matvec(z: CsrMatrix, x) -> np.ndarray:
    return z.matvec(x)
