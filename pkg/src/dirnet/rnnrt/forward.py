"""Sequence forward passes and evaluation."""
from __future__ import annotations

import math

import numpy as np

from .. import kernels
from ..model import LSTM, CompressedModel, NetworkModel
from ..shiftdict import _shift_rows
from . import graph
from .cells import lstm_cell
from .corpus import check_tokens, encode
from .params import CompressedParams, DenseParams


def forward_dense(model: NetworkModel, tokens) -> np.ndarray:
    """Logits ``(T, V)`` for one sequence from zero initial state."""
    ids = check_tokens(tokens, len(model.vocab))
    if ids.size == 0:
        return np.zeros((0, len(model.vocab)))
    logits, _, _ = graph.forward(DenseParams(model).net(), ids[None, :])
    return logits[:, 0, :]


class OpCounter:
    """Tallies scalar multiplies issued by :func:`forward_compressed`."""

    def __init__(self):
        self.mults = 0
        self.steps = 0

    def add(self, k: int):
        self.mults += int(k)


class _FactorPlan:
    """Per-layer CSR slices and dense dictionaries used at inference time."""

    def __init__(self, cl):
        self.D = np.ascontiguousarray(cl.dict_h.atoms)
        self.Dx = np.ascontiguousarray(cl.dict_x_or_h.atoms)
        self.slices = cl.offset_slices()
        self.zx = cl.z_x
        self.bias = cl.bias
        self.mode = cl.shift_mode
        self.n = cl.n

    def pre_activation(self, h_prev, x_in, counter):
        u = kernels.csr_matvec(self.zx.row_ptr, self.zx.col_idx, self.zx.vals, x_in)
        a = self.Dx @ u + self.bias
        if counter is not None:
            counter.add(self.zx.nnz + self.Dx.size)
        for o, Zo in self.slices:
            v = kernels.csr_matvec(Zo.row_ptr, Zo.col_idx, Zo.vals, h_prev)
            a += _shift_rows(self.D @ v, o, self.mode)
            if counter is not None:
                counter.add(Zo.nnz + self.D.size)
        return a


def forward_compressed(cmodel: CompressedModel, tokens, counter: OpCounter = None) -> np.ndarray:
    """Logits ``(T, V)`` computed from the factors without forming ``D Z``.

    Each recurrent term is ``D (Z h)``: a sparse product onto the ``p``-dim
    code space followed by a dense ``rows x p`` product.
    """
    ids = check_tokens(tokens, len(cmodel.vocab))
    V = len(cmodel.vocab)
    out = np.zeros((ids.size, V))
    plans = [_FactorPlan(cl) for cl in cmodel.layers]
    h = [np.zeros(p.n) for p in plans]
    c = [np.zeros(p.n) for p in plans]
    lstm = cmodel.kind == LSTM
    for t, tok in enumerate(ids):
        x = cmodel.embed[tok]
        for l, plan in enumerate(plans):
            a = plan.pre_activation(h[l], x, counter)
            if lstm:
                h[l], c[l] = lstm_cell(a, c[l])
            else:
                h[l] = np.tanh(a)
            x = h[l]
        out[t] = x @ cmodel.out_proj + cmodel.out_bias
        if counter is not None:
            counter.steps += 1
    return out


def _net_for(model):
    if isinstance(model, CompressedModel):
        return CompressedParams(model).net()
    return DenseParams(model).net()


def stream_cross_entropy(net: graph.Net, ids: np.ndarray, chunk: int = 256) -> float:
    """Mean next-token cross-entropy over one stream, state carried across chunks."""
    if ids.size < 2:
        raise ValueError("need at least two tokens to evaluate")
    state = None
    total = 0.0
    count = 0
    for s in range(0, ids.size - 1, chunk):
        x = ids[s:s + chunk + 1]
        if x.size < 2:
            break
        logits, state, _ = graph.forward(net, x[None, :-1], state)
        loss, _ = graph.cross_entropy(logits, x[None, 1:])
        total += loss * (x.size - 1)
        count += x.size - 1
    return total / count


def evaluate(model, corpus, compressed_path: bool = False) -> dict:
    """Cross-entropy (nats), perplexity and bits per character on ``corpus``.

    ``corpus`` is raw bytes or an array of token ids. With
    ``compressed_path`` a compressed model is run through
    :func:`forward_compressed` instead of materialised matrices.
    """
    if isinstance(corpus, (bytes, bytearray)):
        ids = encode(model.vocab, corpus)
    else:
        ids = check_tokens(corpus, len(model.vocab))
    if ids.size < 2:
        raise ValueError("corpus must hold at least two tokens")
    if compressed_path and isinstance(model, CompressedModel):
        logits = forward_compressed(model, ids[:-1])
        ce, _ = graph.cross_entropy(logits[:, None, :], ids[None, 1:])
    else:
        ce = stream_cross_entropy(_net_for(model), ids)
    return {"cross_entropy": ce, "perplexity": math.exp(ce), "bits_per_char": ce / math.log(2)}
