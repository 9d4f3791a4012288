"""Little-endian binary containers for dense (DNW1) and compressed (DNC1) models.

Both files end with the CRC32 of every preceding byte. Floats are stored as
f64, integers as fixed-width unsigned values; nothing is written as text, so
``save(load(save(m)))`` is byte-identical to ``save(m)``.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError, IntegrityError, ShapeError
from .matcore import CsrMatrix
from .model import (CompressedLayer, CompressedModel, KINDS, LayerWeights, NetworkModel,
                    gates_of)
from .shiftdict import CIRCULAR, MODES, ZERO_PADDED, Dictionary

DENSE_MAGIC = b"DNW1"
COMPRESSED_MAGIC = b"DNC1"
VERSION = 1

FLAG_SHARED = 1
FLAG_ZERO_PADDED = 2


class _Writer:
    def __init__(self):
        self.parts = []

    def raw(self, b: bytes):
        self.parts.append(bytes(b))

    def u8(self, v):
        self.raw(struct.pack("<B", v))

    def u32(self, v):
        self.raw(struct.pack("<I", v))

    def u64(self, v):
        self.raw(struct.pack("<Q", v))

    def f64(self, v):
        self.raw(struct.pack("<d", v))

    def array(self, a, dtype):
        self.raw(np.ascontiguousarray(a).astype(dtype, copy=False).tobytes())

    def finish(self) -> bytes:
        body = b"".join(self.parts)
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes, magic: bytes):
        if len(data) < 8:
            raise FormatError("file too short")
        body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise FormatError("CRC mismatch: file is corrupted")
        if body[:4] != magic:
            raise FormatError(f"bad magic {body[:4]!r}, expected {magic!r}")
        self.buf = body
        self.pos = 4

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("unexpected end of data")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]

    def array(self, count: int, dtype, shape=None):
        dt = np.dtype(dtype)
        a = np.frombuffer(self.take(count * dt.itemsize), dtype=dt).astype(dt.newbyteorder("="))
        return a.reshape(shape) if shape is not None else a

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes before the CRC")


def _header(w: _Writer, magic, kind, n_layers, vocab, embed_dim):
    w.raw(magic)
    w.u32(VERSION)
    w.u8(KINDS.index(kind))
    w.u32(n_layers)
    w.u32(len(vocab))
    w.u32(embed_dim)


def _read_header(r: _Reader):
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    k = r.u8()
    if k >= len(KINDS):
        raise FormatError(f"unknown model kind code {k}")
    return KINDS[k], r.u32(), r.u32(), r.u32()


def _tail(w: _Writer, embed, out_proj, out_bias, vocab):
    w.array(embed, "<f8")
    w.array(out_proj, "<f8")
    w.array(out_bias, "<f8")
    w.raw(vocab)


def _read_tail(r: _Reader, V, E, n_last):
    embed = r.array(V * E, "<f8", (V, E))
    out = r.array(n_last * V, "<f8", (n_last, V))
    out_b = r.array(V, "<f8")
    vocab = r.take(V)
    return embed, out, out_b, vocab


def dump_dense(model: NetworkModel) -> bytes:
    w = _Writer()
    _header(w, DENSE_MAGIC, model.kind, len(model.layers), model.vocab, model.embed.shape[1])
    for layer in model.layers:
        w.u32(layer.n)
        w.u32(layer.w_h.shape[0])
        w.u32(layer.w_x.shape[0])
    for layer in model.layers:
        w.array(layer.w_h, "<f8")
        w.array(layer.w_x, "<f8")
        w.array(layer.bias, "<f8")
    _tail(w, model.embed, model.out_proj, model.out_bias, model.vocab)
    return w.finish()


def parse_dense(data: bytes) -> NetworkModel:
    r = _Reader(data, DENSE_MAGIC)
    kind, L, V, E = _read_header(r)
    if L < 1:
        raise FormatError("model has no layers")
    g = gates_of(kind)
    heads = [(r.u32(), r.u32(), r.u32()) for _ in range(L)]
    layers = []
    n_in = E
    try:
        for n, rows_h, rows_x in heads:
            if rows_h != g * n or rows_x != rows_h:
                raise FormatError("layer header inconsistent with the model kind")
            w_h = r.array(rows_h * n, "<f8", (rows_h, n))
            w_x = r.array(rows_x * n_in, "<f8", (rows_x, n_in))
            b = r.array(rows_h, "<f8")
            layers.append(LayerWeights(w_h, w_x, b, kind))
            n_in = n
        embed, out, out_b, vocab = _read_tail(r, V, E, n_in)
        r.done()
        return NetworkModel(layers, embed, out, out_b, vocab, kind)
    except ShapeError as exc:
        raise FormatError(f"inconsistent model data: {exc}") from exc


def _write_csr(w: _Writer, z: CsrMatrix):
    w.u64(z.nnz)
    w.array(z.row_ptr, "<u8")
    w.array(z.col_idx, "<u4")
    w.array(z.vals, "<f8")


def _read_csr(r: _Reader, rows, cols) -> CsrMatrix:
    nnz = r.u64()
    rp = r.array(rows + 1, "<u8").astype(np.int64)
    ci = r.array(nnz, "<u4").astype(np.int64)
    vals = r.array(nnz, "<f8")
    z = CsrMatrix(rows, cols, rp, ci, vals)
    try:
        z.validate()
    except IntegrityError as exc:
        raise FormatError(f"invalid CSR block: {exc}") from exc
    return z


def dump_compressed(cm: CompressedModel) -> bytes:
    w = _Writer()
    _header(w, COMPRESSED_MAGIC, cm.kind, len(cm.layers), cm.vocab, cm.embed.shape[1])
    for cl in cm.layers:
        w.u32(cl.n)
        w.u32(cl.dict_h.n)
        w.u32(cl.n_in)
        w.u32(cl.p)
        w.u32(cl.p_x)
        w.u8((FLAG_SHARED if cl.shared else 0) | (FLAG_ZERO_PADDED if cl.shift_mode == ZERO_PADDED else 0))
        w.u32(cl.pruned)
        w.f64(cl.recon_err_h)
        w.f64(cl.recon_err_x)
    for cl in cm.layers:
        w.array(cl.dict_h.atoms, "<f8")
        if not cl.shared:
            w.array(cl.dict_x.atoms, "<f8")
        _write_csr(w, cl.z_h)
        _write_csr(w, cl.z_x)
        # shift table, one entry per stored z_h coefficient in CSR order
        mode = MODES.index(cl.shift_mode)
        rows = np.repeat(np.arange(cl.z_h.rows), np.diff(cl.z_h.row_ptr))
        w.u64(cl.z_h.nnz)
        for i, j in zip(rows, cl.z_h.col_idx):
            w.raw(struct.pack("<IIhB", int(i), int(j), int(cl.offsets_h[i, j]), mode))
        w.array(cl.bias, "<f8")
    _tail(w, cm.embed, cm.out_proj, cm.out_bias, cm.vocab)
    return w.finish()


def parse_compressed(data: bytes) -> CompressedModel:
    r = _Reader(data, COMPRESSED_MAGIC)
    kind, L, V, E = _read_header(r)
    if L < 1:
        raise FormatError("model has no layers")
    heads = []
    for _ in range(L):
        n, rows, n_in, p_h, p_x = (r.u32() for _ in range(5))
        flags = r.u8()
        heads.append((n, rows, n_in, p_h, p_x, flags, r.u32(), r.f64(), r.f64()))
    layers = []
    try:
        for n, rows, n_in, p_h, p_x, flags, pruned, eh, ex in heads:
            shared = bool(flags & FLAG_SHARED)
            mode = ZERO_PADDED if flags & FLAG_ZERO_PADDED else CIRCULAR
            if shared and p_x != p_h:
                raise FormatError("shared dictionary with differing code heights")
            D = Dictionary(r.array(rows * p_h, "<f8", (rows, p_h)))
            Dx = None if shared else Dictionary(r.array(rows * p_x, "<f8", (rows, p_x)))
            z_h = _read_csr(r, p_h, n)
            z_x = _read_csr(r, p_x, n_in)
            count = r.u64()
            if count != z_h.nnz:
                raise FormatError("shift table does not match the stored coefficients")
            offsets = np.zeros((p_h, n), dtype=np.int64)
            for _ in range(count):
                i, j, o, m = struct.unpack("<IIhB", r.take(11))
                if i >= p_h or j >= n or m >= len(MODES) or MODES[m] != mode:
                    raise FormatError("bad shift table entry")
                offsets[i, j] = o
            bias = r.array(rows, "<f8")
            layers.append(CompressedLayer(D, z_h, offsets, z_x, bias, kind, Dx, mode, eh, ex, pruned))
        embed, out, out_b, vocab = _read_tail(r, V, E, heads[-1][0])
        r.done()
    except ShapeError as exc:
        raise FormatError(f"inconsistent model data: {exc}") from exc
    return CompressedModel(layers, embed, out, out_b, vocab, kind)


def save_model(model, path):
    data = dump_compressed(model) if isinstance(model, CompressedModel) else dump_dense(model)
    Path(path).write_bytes(data)
    return data


def load_any(path):
    """Load a DNW1 or DNC1 file, dispatching on the magic bytes."""
    data = Path(path).read_bytes()
    if data[:4] == DENSE_MAGIC:
        return parse_dense(data)
    if data[:4] == COMPRESSED_MAGIC:
        return parse_compressed(data)
    raise FormatError(f"{path}: not a dirnet model file")
