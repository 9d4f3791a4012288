"""Truncated-BPTT training with Adam, for dense baselines and masked fine-tuning."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DomainError
from ..model import LSTM, CompressedModel, init_network
from . import graph
from .corpus import build_vocab, encode, split
from .forward import stream_cross_entropy
from .params import CompressedParams, DenseParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    epochs: int = 10
    batch: int = 16
    bptt_len: int = 32
    seed: int = 0
    optimizer: str = "adam"
    grad_clip: float = 5.0
    val_frac: float = 0.1
    keep_best: bool = True

    def __post_init__(self):
        if self.lr < 0 or self.grad_clip <= 0:
            raise ConfigError("lr must be >= 0 and grad_clip > 0")
        if self.epochs < 0 or self.batch < 1 or self.bptt_len < 1:
            raise ConfigError("epochs >= 0, batch >= 1 and bptt_len >= 1 required")
        if self.optimizer != "adam":
            raise ConfigError("only the 'adam' optimizer is available")
        if not 0.0 < self.val_frac < 1.0:
            raise ConfigError("val_frac must lie in (0, 1)")


@dataclass(frozen=True)
class ArchSpec:
    kind: str = LSTM
    widths: tuple = (64, 64)
    embed_dim: int = 0

    def resolved_embed(self) -> int:
        return self.embed_dim or self.widths[0]


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0

    def records(self):
        return [{"epoch": k + 1, "train_loss": a, "val_loss": b}
                for k, (a, b) in enumerate(zip(self.train_loss, self.val_loss))]


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, values: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            values[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grads(grads: dict, limit: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > limit:
        scale = limit / total
        for g in grads.values():
            g *= scale
    return total


def batch_streams(ids: np.ndarray, batch: int) -> np.ndarray:
    """Reshape a stream into ``batch`` contiguous rows (tail dropped)."""
    L = len(ids) // batch
    if L < 2:
        raise ConfigError("stream too short for the requested batch size")
    return ids[:batch * L].reshape(batch, L)


def _run(params, train_ids, val_ids, cfg: TrainConfig, check=None) -> TrainHistory:
    data = batch_streams(train_ids, cfg.batch)
    opt = Adam(cfg.lr)
    masks = params.masks()
    hist = TrainHistory()
    best = (stream_cross_entropy(params.net(), val_ids), _snapshot(params.values), 0)
    for epoch in range(cfg.epochs):
        state = None
        losses = []
        for s in range(0, data.shape[1] - 1, cfg.bptt_len):
            x = data[:, s:s + cfg.bptt_len + 1]
            if x.shape[1] < 2:
                break
            net = params.net()
            loss, g, state = graph.loss_and_grads(net, x[:, :-1], x[:, 1:], state)
            if not math.isfinite(loss):
                raise DomainError(f"non-finite training loss in epoch {epoch + 1}")
            state = graph.detach(state)
            grads = params.pullback(g)
            for k, m in masks.items():
                if k in grads:
                    grads[k] = grads[k] * m
            clip_grads(grads, cfg.grad_clip)
            opt.step(params.values, grads)
            params.after_step()
            if check is not None:
                check(params)
            losses.append(loss)
        hist.train_loss.append(float(np.mean(losses)))
        hist.val_loss.append(stream_cross_entropy(params.net(), val_ids))
        log.info("epoch %d train %.4f val %.4f", epoch + 1, hist.train_loss[-1], hist.val_loss[-1])
        if hist.val_loss[-1] < best[0]:
            best = (hist.val_loss[-1], _snapshot(params.values), epoch + 1)
    if cfg.keep_best and cfg.epochs > 0:
        params.values.update(best[1])
    hist.best_epoch = best[2] if cfg.keep_best else cfg.epochs
    return hist


def _snapshot(values: dict) -> dict:
    return {k: v.copy() for k, v in values.items()}


def prepare(corpus: bytes, vocab: bytes, cfg: TrainConfig):
    if len(corpus) < 10 * cfg.bptt_len:
        raise ConfigError(f"corpus of {len(corpus)} bytes is shorter than 10 x bptt_len")
    ids = encode(vocab, corpus)
    return split(ids, cfg.val_frac)


def train_baseline(corpus: bytes, arch: ArchSpec, cfg: TrainConfig):
    """Train a dense character model; returns ``(NetworkModel, TrainHistory)``.

    With ``cfg.keep_best`` the returned weights are those of the epoch with
    the lowest validation loss (epoch 0 being the initial weights).
    """
    vocab = build_vocab(corpus)
    train_ids, val_ids = prepare(corpus, vocab, cfg)
    model = init_network(vocab, list(arch.widths), arch.kind, cfg.seed, arch.resolved_embed())
    params = DenseParams(model)
    hist = _run(params, train_ids, val_ids, cfg)
    return params.to_model(), hist


def finetune_masked(cmodel: CompressedModel, corpus: bytes, cfg: TrainConfig,
                    freeze_dict: bool = False, check_support: bool = True):
    """Retrain a compressed model while keeping every code's zero pattern.

    Gradients reach the dictionaries, biases, embedding, output layer and the
    stored code entries only. After each optimizer step the atoms are
    re-normalised and the code rows rescaled so the product is unchanged.
    Returns ``(CompressedModel, TrainHistory)``.
    """
    train_ids, val_ids = prepare(corpus, cmodel.vocab, cfg)
    params = CompressedParams(cmodel, freeze_dict)
    before = {k: m.copy() for k, m in params._masks.items()}

    def check(p):
        for k, m in before.items():
            if not np.array_equal(p.values[k] != 0, m > 0):
                raise AssertionError(f"support of {k} changed during fine-tuning")

    hist = _run(params, train_ids, val_ids, cfg, check if check_support else None)
    if cfg.epochs == 0:
        return cmodel, hist
    return params.to_model(), hist
