"""Flat ``key = value`` run configuration shared by every CLI verb."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

from .adasparse import LAMBDA2_GRID
from .compressor import CompressConfig
from .errors import ConfigError
from .model import KINDS, LSTM
from .rnnrt.train import ArchSpec, TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(parse):
    def inner(s: str):
        return None if s.strip().lower() in ("none", "auto", "") else parse(s)
    return inner


def _tuple(parse):
    def inner(s: str):
        items = [t for t in s.replace(",", " ").split() if t]
        if not items:
            raise ValueError("empty list")
        return tuple(parse(t) for t in items)
    return inner


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(t) for t in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class RunConfig:
    # shared
    seed: int = 0
    # architecture
    kind: str = LSTM
    widths: tuple = (64, 64)
    embed_dim: int = 0
    # trainer
    lr: float = 1e-2
    epochs: int = 10
    batch: int = 16
    bptt_len: int = 32
    grad_clip: float = 5.0
    val_frac: float = 0.1
    keep_best: bool = True
    # fine-tuning; finetune_lr = auto means 0.1 x lr
    finetune_lr: Optional[float] = None
    finetune_epochs: int = 4
    freeze_dict: bool = False
    # compression
    initial_p: Optional[int] = None
    lambda1: float = 0.1
    lambda2: Optional[float] = None
    lambda2_grid: tuple = LAMBDA2_GRID
    gamma: float = 0.4
    shrink_factor: float = 0.4
    theta0: float = 1e7
    max_stages: int = 25
    target_nnz_frac: float = 0.15
    weight_mode: str = "alternate"
    max_offset: int = 2
    shift_mode: str = "circular"
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
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        if any(w < 1 for w in self.widths) or self.embed_dim < 0:
            raise ConfigError("widths must be positive and embed_dim >= 0")
        # constructing the derived configs runs their own checks
        self.compress_config()
        self.train_config()
        self.finetune_config()

    def arch(self) -> ArchSpec:
        return ArchSpec(self.kind, tuple(self.widths), self.embed_dim)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch=self.batch,
                           bptt_len=self.bptt_len, seed=self.seed, grad_clip=self.grad_clip,
                           val_frac=self.val_frac, keep_best=self.keep_best)

    def finetune_config(self) -> TrainConfig:
        lr = 0.1 * self.lr if self.finetune_lr is None else self.finetune_lr
        return TrainConfig(lr=lr, epochs=self.finetune_epochs, batch=self.batch,
                           bptt_len=self.bptt_len, seed=self.seed, grad_clip=self.grad_clip,
                           val_frac=self.val_frac, keep_best=self.keep_best)

    def compress_config(self) -> CompressConfig:
        names = {f.name for f in fields(CompressConfig)}
        return CompressConfig(**{k: getattr(self, k) for k in names if hasattr(self, k)})

    def replace(self, **kw) -> "RunConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return RunConfig(**d)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


_PARSERS = {
    "seed": int, "kind": str, "widths": _tuple(int), "embed_dim": int,
    "lr": float, "epochs": int, "batch": int, "bptt_len": int, "grad_clip": float,
    "val_frac": float, "keep_best": _bool,
    "finetune_lr": _opt(float), "finetune_epochs": int, "freeze_dict": _bool,
    "initial_p": _opt(int), "lambda1": float, "lambda2": _opt(float),
    "lambda2_grid": _tuple(float), "gamma": float, "shrink_factor": float, "theta0": float,
    "max_stages": int, "target_nnz_frac": float, "weight_mode": str, "max_offset": int,
    "shift_mode": str, "energy_floor": float, "drop_tol": float, "epochs_dict": int,
    "cd_cycles": int, "refit_cycles": int, "debias": _bool, "shared_dict": _bool,
    "dict_source": str, "index_bits_ratio": float,
}


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse ``key = value`` lines over ``base`` (defaults when omitted)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return (base or RunConfig()).replace(**values)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_defaults() -> str:
    return RunConfig().dumps()
