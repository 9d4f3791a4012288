"""Byte-level corpus handling."""
from __future__ import annotations

from importlib import resources

import numpy as np

from ..errors import InputError


def bundled_corpus() -> bytes:
    """The small public-domain text shipped with the package."""
    return resources.files("dirnet").joinpath("data/corpus.txt").read_bytes()


def build_vocab(data: bytes) -> bytes:
    return bytes(sorted(set(data)))


def encode(vocab: bytes, data) -> np.ndarray:
    """Map bytes to vocabulary indices; unknown bytes raise :class:`InputError`."""
    table = np.full(256, -1, dtype=np.int64)
    table[np.frombuffer(vocab, dtype=np.uint8)] = np.arange(len(vocab))
    ids = table[np.frombuffer(bytes(data), dtype=np.uint8)]
    if np.any(ids < 0):
        bad = sorted(set(bytes(data)) - set(vocab))
        raise InputError(f"bytes not in vocabulary: {bad[:10]}")
    return ids


def check_tokens(tokens, vocab_size: int) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise InputError("token outside the vocabulary")
    return ids


def split(ids: np.ndarray, val_frac: float = 0.1):
    """Train head and validation tail."""
    cut = len(ids) - max(2, int(round(len(ids) * val_frac)))
    return ids[:cut], ids[cut:]
