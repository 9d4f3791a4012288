"""Planted-model generators used by tests, benchmarks and the acceptance suite."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np


class PlantedLayer(NamedTuple):
    w_h: np.ndarray
    w_x: np.ndarray
    atoms: np.ndarray
    z_h: np.ndarray
    z_x: np.ndarray


def unit_atoms(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    D = rng.standard_normal((n, p))
    return D / np.linalg.norm(D, axis=0)


def sparse_codes(p: int, m: int, density: float, rng: np.random.Generator,
                 low: float = 1.0, high: float = 2.0) -> np.ndarray:
    """Codes with i.i.d. support of the given density and magnitudes in [low, high]."""
    mask = rng.random((p, m)) < density
    vals = rng.choice([-1.0, 1.0], size=(p, m)) * rng.uniform(low, high, size=(p, m))
    return np.where(mask, vals, 0.0)


def planted_matrix(n: int, m: int, p: int, density: float, seed: int):
    """``(W, D, Z)`` with ``W = D @ Z``, unit-norm ``D`` (n x p)."""
    rng = np.random.default_rng(seed)
    D = unit_atoms(n, p, rng)
    Z = sparse_codes(p, m, density, rng)
    return D @ Z, D, Z


def planted_layer(n: int = 32, p: int = 8, density: float = 0.1, seed: int = 0,
                  x_density: float | None = None, noise: float = 0.0) -> PlantedLayer:
    """A layer whose recurrent and input matrices share one dictionary.

    ``noise`` adds i.i.d. Gaussian entries scaled relative to the RMS of each
    clean matrix.
    """
    rng = np.random.default_rng(seed)
    D = unit_atoms(n, p, rng)
    Zh = sparse_codes(p, n, density, rng)
    Zx = sparse_codes(p, n, density if x_density is None else x_density, rng)
    Wh, Wx = D @ Zh, D @ Zx
    if noise > 0:
        Wh = Wh + noise * np.sqrt(np.mean(Wh * Wh)) * rng.standard_normal(Wh.shape)
        Wx = Wx + noise * np.sqrt(np.mean(Wx * Wx)) * rng.standard_normal(Wx.shape)
    return PlantedLayer(Wh, Wx, D, Zh, Zx)
