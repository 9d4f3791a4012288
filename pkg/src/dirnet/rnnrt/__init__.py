"""Recurrent network runtime: cells, forward passes, training and evaluation."""
from .cells import CellState, lstm_step, rnn_step
from .corpus import build_vocab, bundled_corpus, encode
from .forward import OpCounter, evaluate, forward_compressed, forward_dense
from .train import ArchSpec, TrainConfig, TrainHistory, finetune_masked, train_baseline

__all__ = [
    "ArchSpec", "CellState", "OpCounter", "TrainConfig", "TrainHistory", "build_vocab",
    "bundled_corpus", "encode", "evaluate", "finetune_masked", "forward_compressed",
    "forward_dense", "lstm_step", "rnn_step", "train_baseline",
]
