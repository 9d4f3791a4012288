"""Layer-by-layer factorisation of a trained recurrent network.

For every layer the recurrent matrix ``w_h`` is factored as ``D Z_h`` by
shift-invariant dictionary learning (plain l1 penalty ``lambda1``), then the
input matrix ``w_x`` is coded against the same ``D`` with adaptively
re-weighted l1 and a shrinking budget. LSTM gate blocks are stacked so that
one dictionary serves all four gates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from . import adasparse, shiftdict
from .errors import ConfigError, ShapeError
from .matcore import CsrMatrix
from .model import CompressedLayer, CompressedModel, LayerWeights, NetworkModel, gates_of
from .shiftdict import CIRCULAR, MODES, ShiftSet

log = logging.getLogger(__name__)

REPORT_VERSION = 1


@dataclass(frozen=True)
class CompressConfig:
    seed: int = 0
    initial_p: Optional[int] = None
    lambda1: float = 0.1
    lambda2: Optional[float] = None
    lambda2_grid: tuple = adasparse.LAMBDA2_GRID
    gamma: float = 0.4
    shrink_factor: float = 0.4
    theta0: float = 1e7
    max_stages: int = 25
    target_nnz_frac: float = 0.15
    nnz_band: tuple = (0.10, 0.20)
    weight_mode: str = "alternate"
    max_offset: int = 2
    shift_mode: str = CIRCULAR
    energy_floor: float = 1e-4
    drop_tol: float = 1e-2
    epochs_dict: int = 10
    cd_cycles: int = 3
    refit_cycles: int = 2000
    debias: bool = True
    shared_dict: bool = True
    dict_source: str = "w_h"
    index_bits_ratio: float = 0.5

    def __post_init__(self):
        if self.initial_p is not None and self.initial_p < 1:
            raise ConfigError("initial_p must be >= 1")
        if self.lambda1 < 0 or (self.lambda2 is not None and self.lambda2 < 0):
            raise ConfigError("penalties must be non-negative")
        if self.weight_mode not in ("alternate", "ols"):
            raise ConfigError("weight_mode must be 'alternate' or 'ols'")
        if self.dict_source not in ("w_h", "joint"):
            raise ConfigError("dict_source must be 'w_h' or 'joint'")
        if self.shift_mode not in MODES:
            raise ConfigError(f"shift_mode must be one of {MODES}")
        if self.max_offset < 0 or self.epochs_dict < 1 or self.cd_cycles < 1:
            raise ConfigError("max_offset >= 0, epochs_dict >= 1 and cd_cycles >= 1 required")
        if self.drop_tol < 0 or self.refit_cycles < 0:
            raise ConfigError("drop_tol and refit_cycles must be non-negative")
        # ShrinkSchedule validates the schedule fields
        self.schedule()

    def schedule(self) -> adasparse.ShrinkSchedule:
        return adasparse.ShrinkSchedule(self.theta0, self.shrink_factor, self.max_stages,
                                        self.target_nnz_frac)

    def replace(self, **kw) -> "CompressConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return CompressConfig(**d)


def lossless_config(n: int, seed: int = 0, **kw) -> CompressConfig:
    """Full-size dictionary, negligible penalties, no shifts and no pruning."""
    base = dict(seed=seed, initial_p=n, lambda1=1e-8, lambda2=1e-8, max_offset=0,
                energy_floor=0.0, drop_tol=0.0, target_nnz_frac=1.0, refit_cycles=20000)
    base.update(kw)
    return CompressConfig(**base)


def compression_rate(n_l: int, n_l1: int, p: int, nnz_h: int, nnz_x: int,
                     index_bits_ratio: float = 0.5, gates: int = 1):
    """``(rate_dense, rate_nnz)`` for one layer.

    ``rate_dense = g(n_l^2 + n_l1 n_l) / (g p n_l + p n_l + p n_l1)`` where
    ``g`` is the number of stacked gate blocks (1 for a plain RNN, which gives
    the usual ``(n_l^2 + n_l1 n_l) / (2 p n_l + p n_l1)``). ``rate_nnz``
    keeps the dense dictionary term and charges each stored code entry
    ``1 + index_bits_ratio`` units for its value and index.
    """
    if p < 1:
        raise ConfigError("p must be >= 1")
    original = gates * (n_l * n_l + n_l1 * n_l)
    rate_dense = original / (gates * p * n_l + p * n_l + p * n_l1)
    rate_nnz = original / (gates * p * n_l + (1.0 + index_bits_ratio) * (nnz_h + nnz_x))
    return rate_dense, rate_nnz


def dense_equivalent_params(n: int, n_in: int, p: int, gates: int = 1,
                            gatewise: bool = True, bias: bool = True) -> int:
    """Parameters of one factorised layer counting dictionary and codes as dense.

    ``gatewise`` counts a separate ``n x p`` dictionary and codes per gate
    block (``g p (2n + n_in)``); otherwise one stacked ``g n x p`` dictionary
    is shared by the gates (``p (g n + n + n_in)``).
    """
    core = gates * p * (2 * n + n_in) if gatewise else p * (gates * n + n + n_in)
    return int(core + (gates * n if bias else 0))


def _rel_err(W, R) -> float:
    nrm = float(np.linalg.norm(W))
    diff = float(np.linalg.norm(W - R))
    return diff / nrm if nrm > 0 else diff


def _learn(W, cfg: CompressConfig, initial_p: int, shift_set: ShiftSet, seed: int):
    res = shiftdict.learn(W, initial_p, shift_set, lam=cfg.lambda1, epochs=cfg.epochs_dict,
                          energy_floor=cfg.energy_floor, seed=seed, cd_cycles=cfg.cd_cycles,
                          refit_cycles=cfg.refit_cycles, drop_tol=cfg.drop_tol, debias=cfg.debias)
    d, code = shiftdict.compact(res.dictionary, res.code)
    return d, code, res


def _debias_plain(D, W, Z):
    Z = Z.copy()
    for j in range(W.shape[1]):
        sup = np.flatnonzero(Z[:, j])
        if sup.size:
            Z[sup, j] = np.linalg.lstsq(D[:, sup], W[:, j], rcond=None)[0]
    return Z


def sparsify_inputs(D, W, cfg: CompressConfig, seed: int):
    """Adaptive l1 codes of ``W`` against a fixed ``D``; returns ``(Z, info)``."""
    sched = cfg.schedule()
    if cfg.weight_mode == "ols":
        lam2 = cfg.lambda2 if cfg.lambda2 is not None else 1.0
        Z = adasparse.fixed_weight_solve(D, W, cfg.gamma, lam2, sched).to_dense()
        info = {"lambda2": lam2, "stages": 0, "reached": None}
    else:
        if cfg.lambda2 is None:
            lam2, res = adasparse.select_lambda2(D, W, sched, cfg.gamma, seed,
                                                 cfg.lambda2_grid, tuple(cfg.nnz_band))
        else:
            lam2 = cfg.lambda2
            res = adasparse.run_schedule(D, W, sched, lam2, cfg.gamma, seed)
        Z = res.code.to_dense()
        info = {"lambda2": lam2, "stages": len(res.stage_log), "reached": res.reached}
    if cfg.debias:
        Z = _debias_plain(D, W, Z)
    return Z, info


def compress_layer(layer: LayerWeights, cfg: CompressConfig, seed: Optional[int] = None):
    """Factor one layer; returns ``(CompressedLayer, info dict)``."""
    seed = cfg.seed if seed is None else seed
    n = layer.n
    initial_p = cfg.initial_p if cfg.initial_p is not None else max(1, n // 4)
    if initial_p > n:
        raise ConfigError(f"initial_p={initial_p} exceeds the {n} columns of w_h")
    shift_set = ShiftSet(cfg.max_offset, cfg.shift_mode)
    shift_set.check_length(layer.w_h.shape[0])
    shared = cfg.shared_dict and layer.w_x.shape == layer.w_h.shape
    if cfg.shared_dict and not shared:
        log.info("w_x %s does not match w_h %s; using separate dictionaries",
                 layer.w_x.shape, layer.w_h.shape)

    if shared and cfg.dict_source == "joint":
        # atoms fitted to both matrices; the w_x half of the code is redone below
        d_h, code_h, res = _learn(np.hstack([layer.w_h, layer.w_x]), cfg, initial_p, shift_set, seed)
        Zh, off_h = code_h.to_arrays()
        Zh, off_h = Zh[:, :n], off_h[:, :n]
    else:
        d_h, code_h, res = _learn(layer.w_h, cfg, initial_p, shift_set, seed)
        Zh, off_h = code_h.to_arrays()
    if shared:
        d_x = None
        Dx = d_h.atoms
    else:
        px0 = min(initial_p, layer.n_in)
        d_x, _, _ = _learn(layer.w_x, cfg, px0, ShiftSet.identity(), seed + 7919)
        Dx = d_x.atoms
    Zx, info = sparsify_inputs(Dx, layer.w_x, cfg, seed)

    cl = CompressedLayer(d_h, CsrMatrix.from_dense(Zh), np.where(Zh != 0, off_h, 0),
                         CsrMatrix.from_dense(Zx), layer.bias.copy(), layer.kind, d_x,
                         cfg.shift_mode, pruned=res.pruned)
    cl.recon_err_h = _rel_err(layer.w_h, cl.dense_w_h())
    cl.recon_err_x = _rel_err(layer.w_x, cl.dense_w_x())
    info.update(shared_d=shared, history=res.history)
    return cl, info


def layer_report(cl: CompressedLayer, info: dict, index_bits_ratio: float = 0.5) -> dict:
    g = gates_of(cl.kind)
    original = g * cl.n * (cl.n + cl.n_in)
    if cl.shared:
        rate_dense, rate_nnz = compression_rate(cl.n, cl.n_in, cl.p, cl.z_h.nnz, cl.z_x.nnz,
                                                index_bits_ratio, g)
        dense_eq = dense_equivalent_params(cl.n, cl.n_in, cl.p, g, gatewise=False, bias=False)
    else:
        # separate dictionaries: both are charged in full
        d_size = g * cl.n * (cl.p + cl.p_x)
        dense_eq = d_size + cl.p * cl.n + cl.p_x * cl.n_in
        rate_dense = original / dense_eq
        rate_nnz = original / (d_size + (1.0 + index_bits_ratio) * (cl.z_h.nnz + cl.z_x.nnz))
    stored = cl.dict_h.atoms.size + (0 if cl.shared else cl.dict_x.atoms.size)
    return {
        "n": cl.n,
        "n_in": cl.n_in,
        "p": cl.p,
        "p_x": cl.p_x,
        "nnz_h": cl.z_h.nnz,
        "nnz_x": cl.z_x.nnz,
        "nnz_frac_x": cl.z_x.nnz / (cl.z_x.rows * cl.z_x.cols),
        "rate_dense": rate_dense,
        "rate_nnz": rate_nnz,
        "recon_err_h": cl.recon_err_h,
        "recon_err_x": cl.recon_err_x,
        "shared_d": cl.shared,
        "pruned": cl.pruned,
        "lambda2": info.get("lambda2"),
        "stages": info.get("stages"),
        "band_reached": info.get("reached"),
        "params_original": original,
        "params_dense_equivalent": int(dense_eq),
        "params_stored": int(stored + cl.z_h.nnz + cl.z_x.nnz),
    }


def assemble_report(layer_entries: list, kind: str) -> dict:
    keys = ("nnz_h", "nnz_x", "params_original", "params_dense_equivalent", "params_stored")
    totals = {k: int(sum(e[k] for e in layer_entries)) for k in keys}
    totals["p"] = [e["p"] for e in layer_entries]
    orig = totals["params_original"]
    totals["rate_dense"] = orig / max(1, totals["params_dense_equivalent"])
    totals["rate_stored"] = orig / max(1, totals["params_stored"])
    return {"report_version": REPORT_VERSION, "kind": kind, "layers": layer_entries, "totals": totals}


def compress_network(model: NetworkModel, cfg: CompressConfig):
    """Compress every recurrent layer in order; returns ``(CompressedModel, report)``."""
    if not model.layers:
        raise ShapeError("model has no recurrent layers")
    layers, entries = [], []
    for l, layer in enumerate(model.layers):
        cl, info = compress_layer(layer, cfg, seed=cfg.seed + l)
        layers.append(cl)
        entries.append(layer_report(cl, info, cfg.index_bits_ratio))
        log.info("layer %d: p=%d nnz_x=%d err_h=%.3g err_x=%.3g", l, cl.p, cl.z_x.nnz,
                 cl.recon_err_h, cl.recon_err_x)
    cm = CompressedModel(layers, model.embed.copy(), model.out_proj.copy(), model.out_bias.copy(),
                         model.vocab, model.kind)
    return cm, assemble_report(entries, model.kind)


def topology_summary(widths, p_list, kind: str = "lstm", n_in: Optional[int] = None,
                     vocab: int = 0) -> dict:
    """Dense-equivalent parameter accounting for a layer topology, no weights needed.

    ``n_in`` is the input width of the first layer (defaults to its width);
    ``vocab > 0`` adds an embedding and an output projection with bias.
    """
    if len(widths) != len(p_list):
        raise ConfigError("widths and p lists must have the same length")
    g = gates_of(kind)
    rows = []
    prev = widths[0] if n_in is None else n_in
    for n, p in zip(widths, p_list):
        rate, _ = compression_rate(n, prev, p, 0, 0, gates=g)
        rows.append({"n": n, "n_in": prev, "p": p, "rate_dense": rate,
                     "params_dense_equivalent": dense_equivalent_params(n, prev, p, g),
                     "params_stacked": dense_equivalent_params(n, prev, p, g, gatewise=False),
                     "params_original": g * n * (n + prev) + g * n})
        prev = n
    extra = vocab * widths[0] + widths[-1] * vocab + vocab if vocab else 0
    total = sum(r["params_dense_equivalent"] for r in rows) + extra
    orig = sum(r["params_original"] for r in rows) + extra
    return {"kind": kind, "layers": rows, "params_dense_equivalent": total,
            "params_original": orig}
