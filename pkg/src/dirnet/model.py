"""Weight containers for dense and factorised recurrent networks."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .matcore import CsrMatrix
from .shiftdict import CIRCULAR, Dictionary, _shift_rows

VANILLA = "vanilla_rnn"
LSTM = "lstm"
KINDS = (VANILLA, LSTM)
GATE_ORDER = ("i", "o", "f", "g")


def gates_of(kind: str) -> int:
    if kind not in KINDS:
        raise ConfigError(f"unknown layer kind {kind!r}")
    return 4 if kind == LSTM else 1


def stack_gates(i, o, f, g) -> np.ndarray:
    """Stack the four gate blocks vertically in (i, o, f, g) order."""
    return np.vstack([i, o, f, g])


def unstack_gates(w) -> tuple:
    w = np.asarray(w)
    if w.shape[0] % 4:
        raise ShapeError("stacked gate matrix must have a multiple of 4 rows")
    n = w.shape[0] // 4
    return tuple(w[k * n:(k + 1) * n] for k in range(4))


@dataclass(eq=False)
class LayerWeights:
    w_h: np.ndarray
    w_x: np.ndarray
    bias: np.ndarray
    kind: str = LSTM

    def __post_init__(self):
        self.w_h = np.ascontiguousarray(self.w_h, dtype=np.float64)
        self.w_x = np.ascontiguousarray(self.w_x, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        g = gates_of(self.kind)
        n = self.w_h.shape[1]
        if self.w_h.shape != (g * n, n):
            raise ShapeError(f"w_h must be {g * n}x{n}, got {self.w_h.shape}")
        if self.w_x.ndim != 2 or self.w_x.shape[0] != g * n:
            raise ShapeError(f"w_x must have {g * n} rows, got {self.w_x.shape}")
        if self.bias.shape != (g * n,):
            raise ShapeError(f"bias must have length {g * n}")

    @property
    def n(self) -> int:
        return self.w_h.shape[1]

    @property
    def n_in(self) -> int:
        return self.w_x.shape[1]

    def copy(self) -> "LayerWeights":
        return LayerWeights(self.w_h.copy(), self.w_x.copy(), self.bias.copy(), self.kind)


@dataclass(eq=False)
class NetworkModel:
    layers: list
    embed: np.ndarray
    out_proj: np.ndarray
    out_bias: np.ndarray
    vocab: bytes
    kind: str = LSTM

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a network needs at least one recurrent layer")
        self.embed = np.ascontiguousarray(self.embed, dtype=np.float64)
        self.out_proj = np.ascontiguousarray(self.out_proj, dtype=np.float64)
        self.out_bias = np.ascontiguousarray(self.out_bias, dtype=np.float64)
        V = len(self.vocab)
        if self.embed.shape[0] != V or self.out_proj.shape[1] != V or self.out_bias.shape != (V,):
            raise ShapeError("embed/out_proj/out_bias disagree with the vocabulary size")
        width = self.embed.shape[1]
        for k, layer in enumerate(self.layers):
            if layer.kind != self.kind:
                raise ShapeError(f"layer {k} kind {layer.kind} differs from model kind")
            if layer.n_in != width:
                raise ShapeError(f"layer {k} expects input width {layer.n_in}, gets {width}")
            width = layer.n
        if self.out_proj.shape[0] != width:
            raise ShapeError("out_proj rows must equal the last layer width")

    @property
    def widths(self) -> list:
        return [layer.n for layer in self.layers]

    def copy(self) -> "NetworkModel":
        return NetworkModel([l.copy() for l in self.layers], self.embed.copy(),
                            self.out_proj.copy(), self.out_bias.copy(), self.vocab, self.kind)

    def param_count(self) -> int:
        return (sum(l.w_h.size + l.w_x.size + l.bias.size for l in self.layers)
                + self.embed.size + self.out_proj.size + self.out_bias.size)


def init_network(vocab: bytes, widths, kind: str = LSTM, seed: int = 0,
                 embed_dim: Optional[int] = None) -> NetworkModel:
    """Uniform(-1/sqrt(n), 1/sqrt(n)) weights; LSTM forget-gate bias starts at 1."""
    rng = np.random.default_rng(seed)
    g = gates_of(kind)
    V = len(vocab)
    E = embed_dim or widths[0]
    embed = rng.normal(0.0, 0.1, size=(V, E))
    layers = []
    n_in = E
    for n in widths:
        s = 1.0 / np.sqrt(n)
        bias = np.zeros(g * n)
        if kind == LSTM:
            bias[2 * n:3 * n] = 1.0
        layers.append(LayerWeights(rng.uniform(-s, s, (g * n, n)), rng.uniform(-s, s, (g * n, n_in)),
                                   bias, kind))
        n_in = n
    s = 1.0 / np.sqrt(n_in)
    out = rng.uniform(-s, s, (n_in, V))
    return NetworkModel(layers, embed, out, np.zeros(V), vocab, kind)


@dataclass(eq=False)
class CompressedLayer:
    """Factorised layer: ``w_h = sum_o S_o D Z_h[o]`` and ``w_x = Dx Z_x``.

    ``offsets_h`` has the shape of ``z_h`` and gives the shift of each stored
    coefficient. ``dict_x`` is ``None`` when ``w_x`` shares ``dict_h``.
    """
    dict_h: Dictionary
    z_h: CsrMatrix
    offsets_h: np.ndarray
    z_x: CsrMatrix
    bias: np.ndarray
    kind: str = LSTM
    dict_x: Optional[Dictionary] = None
    shift_mode: str = CIRCULAR
    recon_err_h: float = 0.0
    recon_err_x: float = 0.0
    pruned: int = 0

    def __post_init__(self):
        self.offsets_h = np.ascontiguousarray(self.offsets_h, dtype=np.int64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.z_h.rows != self.dict_h.p:
            raise ShapeError("z_h rows must equal the dictionary size")
        if self.z_x.rows != self.dict_x_or_h.p:
            raise ShapeError("z_x rows must equal the dictionary size")
        if self.offsets_h.shape != self.z_h.shape:
            raise ShapeError("offsets_h must have the shape of z_h")
        rows = self.dict_h.n
        if self.dict_x is not None and self.dict_x.n != rows:
            raise ShapeError("both dictionaries must have the same atom length")
        if self.z_h.cols * gates_of(self.kind) != rows or self.bias.shape != (rows,):
            raise ShapeError("layer width, dictionary rows and bias disagree")

    @property
    def shared(self) -> bool:
        return self.dict_x is None

    @property
    def dict_x_or_h(self) -> Dictionary:
        return self.dict_h if self.dict_x is None else self.dict_x

    @property
    def n(self) -> int:
        return self.z_h.cols

    @property
    def n_in(self) -> int:
        return self.z_x.cols

    @property
    def p(self) -> int:
        return self.dict_h.p

    @property
    def p_x(self) -> int:
        return self.dict_x_or_h.p

    def offset_slices(self):
        """``[(offset, CsrMatrix)]`` splitting ``z_h`` by shift."""
        Zh = self.z_h.to_dense()
        return [(int(o), CsrMatrix.from_dense(np.where(self.offsets_h == o, Zh, 0.0)))
                for o in np.unique(self.offsets_h[Zh != 0])]

    def dense_w_h(self) -> np.ndarray:
        D = self.dict_h.atoms
        W = np.zeros((D.shape[0], self.n))
        for o, Zo in self.offset_slices():
            W += _shift_rows(D @ Zo.to_dense(), o, self.shift_mode)
        return W

    def dense_w_x(self) -> np.ndarray:
        return self.dict_x_or_h.atoms @ self.z_x.to_dense()

    def to_dense(self) -> LayerWeights:
        return LayerWeights(self.dense_w_h(), self.dense_w_x(), self.bias.copy(), self.kind)

    def with_params(self, **kw) -> "CompressedLayer":
        return replace(self, **kw)


@dataclass(eq=False)
class CompressedModel:
    layers: list
    embed: np.ndarray
    out_proj: np.ndarray
    out_bias: np.ndarray
    vocab: bytes
    kind: str = LSTM
    meta: dict = field(default_factory=dict)

    @property
    def widths(self) -> list:
        return [layer.n for layer in self.layers]

    def to_dense(self) -> NetworkModel:
        return NetworkModel([l.to_dense() for l in self.layers], self.embed.copy(),
                            self.out_proj.copy(), self.out_bias.copy(), self.vocab, self.kind)
