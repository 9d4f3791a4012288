import math

import numpy as np
import pytest

from dirnet.compressor import CompressConfig, compress_network, lossless_config
from dirnet.errors import ConfigError, InputError
from dirnet.model import LSTM, VANILLA, LayerWeights, NetworkModel
from dirnet.rnnrt import (ArchSpec, CellState, OpCounter, TrainConfig, build_vocab, encode,
                          evaluate, finetune_masked, forward_compressed, forward_dense,
                          lstm_step, rnn_step, train_baseline)
from dirnet.rnnrt import graph
from dirnet.rnnrt.corpus import split
from dirnet.rnnrt.params import CompressedParams, DenseParams
from dirnet.rnnrt.train import Adam, batch_streams, clip_grads

from conftest import tiny_model
from oracles import finite_diff_grad


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-30)


def _grad_check(params, tokens, keys, rng, per_key=12, masks=None):
    x, y = tokens[:, :-1], tokens[:, 1:]
    _, g, _ = graph.loss_and_grads(params.net(), x, y)
    grads = params.pullback(g)
    worst = 0.0
    for k in keys:
        arr = params.values[k]
        allowed = np.flatnonzero(masks[k]) if masks and k in masks else np.arange(arr.size)
        idx = rng.choice(allowed, size=min(per_key, allowed.size), replace=False)
        num = finite_diff_grad(lambda: graph.loss_and_grads(params.net(), x, y)[0], arr, idx)
        worst = max(worst, _rel(grads[k].flat[idx], num))
    return worst


@pytest.mark.parametrize("kind", [VANILLA, LSTM])
def test_dense_gradients(kind, rng):
    m = tiny_model(kind, widths=(8,), embed_dim=5)
    p = DenseParams(m)
    tokens = rng.integers(0, 8, size=(2, 6))
    assert _grad_check(p, tokens, list(p.values), rng) < 1e-5


@pytest.mark.parametrize("kind", [VANILLA, LSTM])
@pytest.mark.parametrize("shared", [True, False])
def test_compressed_gradients(kind, shared, rng):
    m = tiny_model(kind, widths=(8,), embed_dim=8, seed=3)
    cm, _ = compress_network(m, CompressConfig(max_offset=1, initial_p=6, shared_dict=shared,
                                               lambda2=0.01))
    p = CompressedParams(cm)
    tokens = rng.integers(0, 8, size=(2, 6))
    assert _grad_check(p, tokens, list(p.values), rng, masks=p._masks) < 1e-5


def test_two_layer_lstm_gradients(rng):
    p = DenseParams(tiny_model(LSTM, widths=(6, 5), embed_dim=4))
    tokens = rng.integers(0, 8, size=(3, 5))
    assert _grad_check(p, tokens, list(p.values), rng, per_key=6) < 1e-5


def test_cells_match_batched_forward(kind, rng):
    m = tiny_model(kind, widths=(8, 8), embed_dim=6)
    tokens = rng.integers(0, 8, size=12)
    logits = forward_dense(m, tokens)
    st = CellState.zeros(m.widths, kind == LSTM)
    for t, tok in enumerate(tokens):
        x = m.embed[tok]
        for l, layer in enumerate(m.layers):
            if kind == LSTM:
                st.h[l], st.c[l] = lstm_step(layer, st.h[l], st.c[l], x)
            else:
                st.h[l] = rnn_step(layer, st.h[l], x)
            x = st.h[l]
        np.testing.assert_allclose(logits[t], x @ m.out_proj + m.out_bias, atol=1e-13)


def test_uniform_logits_give_vocab_perplexity():
    m = tiny_model(LSTM, widths=(4,), vocab=b"abcdefg")
    m.out_proj[:] = 0.0
    m.out_bias[:] = 0.3
    res = evaluate(m, b"abcabcgfedcba")
    assert res["perplexity"] == pytest.approx(7.0, rel=1e-12)
    assert res["bits_per_char"] == pytest.approx(math.log2(7.0), rel=1e-12)


def test_perfect_predictor_has_unit_perplexity():
    layer = LayerWeights(np.zeros((2, 2)), np.eye(2), np.zeros(2), VANILLA)
    m = NetworkModel([layer], np.array([[10.0, -10.0], [-10.0, 10.0]]),
                     np.array([[-100.0, 100.0], [100.0, -100.0]]), np.zeros(2), b"ab", VANILLA)
    assert evaluate(m, b"ab" * 20)["perplexity"] == pytest.approx(1.0, abs=1e-12)


def test_factored_forward_matches_materialised(rng):
    m = tiny_model(LSTM, widths=(8, 8), embed_dim=8)
    cm, _ = compress_network(m, CompressConfig(max_offset=1, initial_p=4))
    tokens = rng.integers(0, 8, size=20)
    counter = OpCounter()
    a = forward_compressed(cm, tokens, counter)
    b = forward_dense(cm.to_dense(), tokens)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert counter.steps == 20 and counter.mults > 0
    full = evaluate(cm, tokens)
    fact = evaluate(cm, tokens, compressed_path=True)
    assert fact["cross_entropy"] == pytest.approx(full["cross_entropy"], rel=1e-12)


def test_lossless_corner_equivalence(rng):
    m = tiny_model(LSTM, widths=(8, 8), embed_dim=8)
    cm, _ = compress_network(m, lossless_config(8, shared_dict=False))
    tokens = rng.integers(0, 8, size=30)
    assert np.max(np.abs(forward_compressed(cm, tokens) - forward_dense(m, tokens))) < 1e-6


def test_corpus_encoding():
    v = build_vocab(b"hello world")
    assert v == b" dehlorw"
    np.testing.assert_array_equal(encode(v, b"hold"), [3, 5, 4, 1])
    with pytest.raises(InputError):
        encode(v, b"help!")
    with pytest.raises(InputError):
        forward_dense(tiny_model(), [0, 99])
    tr, va = split(np.arange(100), 0.1)
    assert tr.size == 90 and va[0] == 90


def test_optimizer_pieces():
    g = {"a": np.array([3.0, 4.0])}
    assert clip_grads(g, 1.0) == 5.0
    np.testing.assert_allclose(g["a"], [0.6, 0.8])
    vals = {"a": np.array([1.0])}
    Adam(0.1).step(vals, {"a": np.array([2.0])})
    assert vals["a"][0] == pytest.approx(0.9)
    assert batch_streams(np.arange(10), 3).shape == (3, 3)
    with pytest.raises(ConfigError):
        batch_streams(np.arange(3), 3)


def test_training_reduces_loss_and_is_deterministic(small_corpus):
    arch = ArchSpec(LSTM, (16,), 8)
    cfg = TrainConfig(epochs=3, batch=8, bptt_len=16, seed=2)
    m1, h1 = train_baseline(small_corpus, arch, cfg)
    m2, h2 = train_baseline(small_corpus, arch, cfg)
    assert h1.train_loss[-1] < h1.train_loss[0]
    assert h1.val_loss == h2.val_loss
    assert np.array_equal(m1.layers[0].w_h, m2.layers[0].w_h)
    assert len(h1.records()) == 3
    with pytest.raises(ConfigError):
        train_baseline(small_corpus[:100], arch, cfg)


def test_masked_finetune_keeps_support(small_corpus):
    arch = ArchSpec(LSTM, (16,), 16)
    base, _ = train_baseline(small_corpus, arch, TrainConfig(epochs=2, batch=8, bptt_len=16))
    cm, _ = compress_network(base, CompressConfig(initial_p=8))
    out, hist = finetune_masked(cm, small_corpus, TrainConfig(lr=1e-3, epochs=2, batch=8,
                                                              bptt_len=16, keep_best=False))
    for a, b in zip(cm.layers, out.layers):
        assert np.array_equal(a.z_h.mask(), b.z_h.mask())
        assert np.array_equal(a.z_x.mask(), b.z_x.mask())
        np.testing.assert_allclose(np.linalg.norm(b.dict_h.atoms, axis=0), 1.0, atol=1e-12)
    assert hist.val_loss[-1] < evaluate(cm, small_corpus[-400:])["cross_entropy"] + 1.0
    same, _ = finetune_masked(cm, small_corpus, TrainConfig(epochs=0))
    assert same is cm


def _naive_rnn(layer, h, x):
    n = layer.n
    out = []
    for i in range(n):
        a = layer.bias[i]
        a += sum(layer.w_x[i, k] * x[k] for k in range(x.size))
        a += sum(layer.w_h[i, k] * h[k] for k in range(n))
        out.append(math.tanh(a))
    return np.array(out)


def _naive_lstm(layer, h, c, x):
    n = layer.n
    a = [layer.bias[r] + sum(layer.w_x[r, k] * x[k] for k in range(x.size))
         + sum(layer.w_h[r, k] * h[k] for k in range(n)) for r in range(4 * n)]
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    h_new, c_new = np.empty(n), np.empty(n)
    for j in range(n):
        i, o, f, g = sig(a[j]), sig(a[n + j]), sig(a[2 * n + j]), math.tanh(a[3 * n + j])
        c_new[j] = f * c[j] + i * g
        h_new[j] = o * math.tanh(c_new[j])
    return h_new, c_new


def test_rnn_cell_identities(rng):
    z = LayerWeights(np.zeros((5, 5)), np.zeros((5, 3)), np.zeros(5), VANILLA)
    assert np.array_equal(rnn_step(z, rng.standard_normal(5), rng.standard_normal(3)), np.zeros(5))
    ident = LayerWeights(np.zeros((4, 4)), np.eye(4), np.zeros(4), VANILLA)
    x = 1e-2 * rng.standard_normal(4)
    np.testing.assert_allclose(rnn_step(ident, np.zeros(4), x), x - x ** 3 / 3, atol=1e-10)
    layer = tiny_model(VANILLA, widths=(6,), embed_dim=4).layers[0]
    h, x = rng.standard_normal(6), rng.standard_normal(4)
    np.testing.assert_allclose(rnn_step(layer, h, x), _naive_rnn(layer, h, x), atol=1e-12, rtol=0)


def test_lstm_cell_identities(rng):
    z = LayerWeights(np.zeros((12, 3)), np.zeros((12, 2)), np.zeros(12), LSTM)
    h, c = lstm_step(z, np.zeros(3), np.zeros(3), rng.standard_normal(2))
    assert np.array_equal(h, np.zeros(3)) and np.array_equal(c, np.zeros(3))
    bias = np.zeros(12)
    bias[6:9] = 60.0  # forget gate saturated open
    mem = LayerWeights(np.zeros((12, 3)), np.zeros((12, 2)), bias, LSTM)
    c_prev = rng.standard_normal(3)
    _, c = lstm_step(mem, np.zeros(3), c_prev, rng.standard_normal(2))
    np.testing.assert_allclose(c, c_prev, atol=1e-15)
    layer = tiny_model(LSTM, widths=(5,), embed_dim=3, seed=4).layers[0]
    h, c, x = rng.standard_normal(5), rng.standard_normal(5), rng.standard_normal(3)
    got, want = lstm_step(layer, h, c, x), _naive_lstm(layer, h, c, x)
    np.testing.assert_allclose(got[0], want[0], atol=1e-12, rtol=0)
    np.testing.assert_allclose(got[1], want[1], atol=1e-12, rtol=0)


def test_empty_and_single_token_sequences(kind):
    m = tiny_model(kind, widths=(6, 5), embed_dim=4)
    assert forward_dense(m, []).shape == (0, 8)
    st = CellState.zeros(m.widths, kind == LSTM)
    x = m.embed[3]
    for l, layer in enumerate(m.layers):
        x = lstm_step(layer, st.h[l], st.c[l], x)[0] if kind == LSTM else rnn_step(layer, st.h[l], x)
    np.testing.assert_allclose(forward_dense(m, [3])[0], x @ m.out_proj + m.out_bias, atol=1e-14)


def test_zero_learning_rate_keeps_weights(small_corpus):
    arch = ArchSpec(LSTM, (8,), 4)
    cfg = TrainConfig(lr=0.0, epochs=2, batch=4, bptt_len=16, keep_best=False, seed=3)
    m, _ = train_baseline(small_corpus[:1000], arch, cfg)
    ref, _ = train_baseline(small_corpus[:1000], arch, cfg.__class__(**{**cfg.__dict__, "epochs": 0}))
    for a, b in zip(m.layers, ref.layers):
        assert np.array_equal(a.w_h, b.w_h) and np.array_equal(a.w_x, b.w_x)
    assert np.array_equal(m.out_proj, ref.out_proj)


def test_alternating_string_is_learned():
    corpus = b"ab" * 400
    m, hist = train_baseline(corpus, ArchSpec(LSTM, (16,), 4),
                             TrainConfig(lr=2e-2, epochs=200, batch=4, bptt_len=16, seed=0))
    _, val = split(encode(m.vocab, corpus), 0.1)
    assert evaluate(m, val)["bits_per_char"] < 0.1
