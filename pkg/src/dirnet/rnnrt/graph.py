"""Batched forward and backward passes over materialised layer matrices.

Layouts: token arrays are ``(B, T)``; hidden activations ``(T, B, N)``.
Gate blocks of an LSTM pre-activation are ordered (i, o, f, g).
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..model import LSTM


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Net(NamedTuple):
    """Materialised weights: ``layers`` is a list of ``(w_h, w_x, bias)``."""
    layers: list
    embed: np.ndarray
    out: np.ndarray
    out_b: np.ndarray
    kind: str


def zero_state(net: Net, batch: int):
    return [(np.zeros((batch, w_h.shape[1])), np.zeros((batch, w_h.shape[1])))
            for w_h, _, _ in net.layers]


def _layer_forward(w_h, w_x, b, X, h0, c0, kind):
    T, B, _ = X.shape
    n = w_h.shape[1]
    pre_x = X @ w_x.T + b
    H = np.empty((T, B, n))
    cache = {"h0": h0, "c0": c0}
    if kind == LSTM:
        G = np.empty((T, B, 4 * n))
        C = np.empty((T, B, n))
        h, c = h0, c0
        for t in range(T):
            a = pre_x[t] + h @ w_h.T
            g = np.empty_like(a)
            g[:, :3 * n] = sigmoid(a[:, :3 * n])
            g[:, 3 * n:] = np.tanh(a[:, 3 * n:])
            c = g[:, 2 * n:3 * n] * c + g[:, :n] * g[:, 3 * n:]
            h = g[:, n:2 * n] * np.tanh(c)
            G[t], C[t], H[t] = g, c, h
        cache.update(G=G, C=C)
        return H, (h, c), cache
    h = h0
    for t in range(T):
        h = np.tanh(pre_x[t] + h @ w_h.T)
        H[t] = h
    return H, (h, c0), cache


def _layer_backward(w_h, w_x, X, H, cache, dH, kind):
    """Returns ``(dw_h, dw_x, db, dX)``; ``dH`` is the loss gradient on ``H``."""
    T, B, n = H.shape
    rows = w_h.shape[0]
    dA = np.empty((T, B, rows))
    dh_next = np.zeros((B, n))
    if kind == LSTM:
        G, C = cache["G"], cache["C"]
        dc_next = np.zeros((B, n))
        for t in range(T - 1, -1, -1):
            g = G[t]
            i, o, f, gg = g[:, :n], g[:, n:2 * n], g[:, 2 * n:3 * n], g[:, 3 * n:]
            c_prev = C[t - 1] if t > 0 else cache["c0"]
            tc = np.tanh(C[t])
            dh = dH[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = dA[t]
            da[:, :n] = dc * gg * i * (1.0 - i)
            da[:, n:2 * n] = dh * tc * o * (1.0 - o)
            da[:, 2 * n:3 * n] = dc * c_prev * f * (1.0 - f)
            da[:, 3 * n:] = dc * i * (1.0 - gg * gg)
            dc_next = dc * f
            dh_next = da @ w_h
    else:
        for t in range(T - 1, -1, -1):
            dh = dH[t] + dh_next
            dA[t] = dh * (1.0 - H[t] * H[t])
            dh_next = dA[t] @ w_h
    Hprev = np.concatenate([cache["h0"][None], H[:-1]], axis=0)
    flat = dA.reshape(T * B, rows)
    dw_h = flat.T @ Hprev.reshape(T * B, n)
    dw_x = flat.T @ X.reshape(T * B, -1)
    db = flat.sum(axis=0)
    dX = dA @ w_x
    return dw_h, dw_x, db, dX


def forward(net: Net, tokens, state=None):
    """Logits ``(T, B, V)``, final state and the cache needed for backward."""
    tokens = np.asarray(tokens)
    B, T = tokens.shape
    state = state if state is not None else zero_state(net, B)
    X = net.embed[tokens.T]
    inputs, caches, new_state = [], [], []
    for (w_h, w_x, b), (h0, c0) in zip(net.layers, state):
        inputs.append(X)
        X, st, cache = _layer_forward(w_h, w_x, b, X, h0, c0, net.kind)
        caches.append((X, cache))
        new_state.append(st)
    logits = X @ net.out + net.out_b
    return logits, new_state, (tokens, inputs, caches)


def cross_entropy(logits, targets):
    """Mean token cross-entropy (nats) and its gradient w.r.t. ``logits``.

    ``targets`` is ``(B, T)``; ``logits`` is ``(T, B, V)``.
    """
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    tg = np.asarray(targets).T
    T, B = tg.shape
    picked = np.take_along_axis(logp, tg[..., None], axis=-1)[..., 0]
    loss = -float(picked.mean())
    d = np.exp(logp)
    np.put_along_axis(d, tg[..., None], np.take_along_axis(d, tg[..., None], -1) - 1.0, axis=-1)
    return loss, d / (T * B)


def loss_and_grads(net: Net, tokens, targets, state=None):
    """Mean cross-entropy and gradients for every materialised array.

    Returns ``(loss, grads, final_state)`` where ``grads`` is a ``Net`` of
    gradient arrays with the same structure.
    """
    logits, new_state, (tok, inputs, caches) = forward(net, tokens, state)
    loss, dlogits = cross_entropy(logits, targets)
    H_last = caches[-1][0]
    V = net.out.shape[1]
    d_out = H_last.reshape(-1, H_last.shape[-1]).T @ dlogits.reshape(-1, V)
    d_out_b = dlogits.reshape(-1, V).sum(axis=0)
    dH = dlogits @ net.out.T
    layer_grads = [None] * len(net.layers)
    for l in range(len(net.layers) - 1, -1, -1):
        w_h, w_x, _ = net.layers[l]
        H, cache = caches[l]
        dw_h, dw_x, db, dH = _layer_backward(w_h, w_x, inputs[l], H, cache, dH, net.kind)
        layer_grads[l] = (dw_h, dw_x, db)
    d_embed = np.zeros_like(net.embed)
    np.add.at(d_embed, tok.T.reshape(-1), dH.reshape(-1, dH.shape[-1]))
    return loss, Net(layer_grads, d_embed, d_out, d_out_b, net.kind), new_state


def detach(state):
    return [(h.copy(), c.copy()) for h, c in state]
