"""Single-step cells operating on one sequence (vectors, not batches)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graph import sigmoid


@dataclass
class CellState:
    h: list
    c: Optional[list] = None

    @classmethod
    def zeros(cls, widths, lstm: bool) -> "CellState":
        return cls([np.zeros(n) for n in widths], [np.zeros(n) for n in widths] if lstm else None)


def rnn_step(layer, h_prev, x_in) -> np.ndarray:
    """``tanh(W_x x + W_h h + b)`` for a dense layer."""
    return np.tanh(layer.w_x @ x_in + layer.w_h @ h_prev + layer.bias)


def lstm_gates(a: np.ndarray):
    n = a.shape[0] // 4
    i = sigmoid(a[:n])
    o = sigmoid(a[n:2 * n])
    f = sigmoid(a[2 * n:3 * n])
    g = np.tanh(a[3 * n:])
    return i, o, f, g


def lstm_cell(a, c_prev):
    i, o, f, g = lstm_gates(a)
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def lstm_step(layer, h_prev, c_prev, x_in):
    """Returns ``(h, c)`` for a dense LSTM layer; gate rows are (i, o, f, g)."""
    return lstm_cell(layer.w_x @ x_in + layer.w_h @ h_prev + layer.bias, c_prev)
