"""Differentiable layer primitives in plain numpy.

Each layer is a forward/backward function pair. Forwards return (y, cache);
backwards take the upstream gradient plus the cache and return the input
gradient along with gradients for every parameter used. Everything runs in
float64; reductions use BLAS matmuls where shapes allow.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


# ------------------------------------------------------------------ conv1d

def conv1d_forward(x, w, b, stride=1):
    """1-D convolution over (B, C_in, L) with symmetric zero padding.

    w: (C_out, C_in, k) with odd k; output length is L for stride 1 and
    L // stride when L divides evenly.
    """
    n_out, n_in, k = w.shape
    pad = (k - 1) // 2
    bsz, _, length = x.shape
    xp = np.zeros((bsz, n_in, length + 2 * pad))
    xp[:, :, pad:pad + length] = x
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]  # (B, Cin, Lo, k)
    l_out = win.shape[2]
    xcol = win.transpose(1, 3, 0, 2).reshape(n_in * k, bsz * l_out)
    y = (w.reshape(n_out, n_in * k) @ xcol).reshape(n_out, bsz, l_out)
    y = y.transpose(1, 0, 2) + b[None, :, None]
    cache = (xcol, x.shape, w.shape, stride)
    return y, cache


def conv1d_backward(dy, w, cache):
    xcol, x_shape, w_shape, stride = cache
    n_out, n_in, k = w_shape
    pad = (k - 1) // 2
    bsz, _, length = x_shape
    l_out = dy.shape[2]
    dy2 = dy.transpose(1, 0, 2).reshape(n_out, bsz * l_out)
    dw = (dy2 @ xcol.T).reshape(n_out, n_in, k)
    db = dy2.sum(axis=1)
    dxcol = (w.reshape(n_out, n_in * k).T @ dy2).reshape(n_in, k, bsz, l_out)
    dxp = np.zeros((bsz, n_in, length + 2 * pad))
    dxw = dxcol.transpose(2, 0, 1, 3)  # (B, Cin, k, Lo)
    for j in range(k):
        dxp[:, :, j:j + stride * (l_out - 1) + 1:stride] += dxw[:, :, j, :]
    dx = dxp[:, :, pad:pad + length]
    return dx, dw, db


# --------------------------------------------------------------- group norm

def groupnorm_forward(x, gamma, beta, groups, eps=1e-5):
    """Group normalization over (B, C, L); groups must divide C."""
    bsz, c, length = x.shape
    xg = x.reshape(bsz, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(bsz, c, length)
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    return y, (xhat, inv, gamma, groups)


def groupnorm_backward(dy, cache):
    xhat, inv, gamma, groups = cache
    bsz, c, length = dy.shape
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxh = (dy * gamma[None, :, None]).reshape(bsz, groups, -1)
    xh = xhat.reshape(bsz, groups, -1)
    m1 = dxh.mean(axis=2, keepdims=True)
    m2 = (dxh * xh).mean(axis=2, keepdims=True)
    dx = (inv * (dxh - m1 - xh * m2)).reshape(bsz, c, length)
    return dx, dgamma, dbeta


# --------------------------------------------------------------------- mish

def mish_forward(x):
    sp = np.logaddexp(0.0, x)
    t = np.tanh(sp)
    return x * t, (x, t)


def mish_backward(dy, cache):
    x, t = cache
    sig = np.exp(-np.logaddexp(0.0, -x))
    return dy * (t + x * (1.0 - t * t) * sig)


# ------------------------------------------------------------------- linear

def linear_forward(x, w, b):
    """x: (B, D_in), w: (D_in, D_out)."""
    return x @ w + b, x


def linear_backward(dy, w, cache):
    x = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


# --------------------------------------------------------- nearest upsample

def upsample2_forward(x):
    return np.repeat(x, 2, axis=2), x.shape


def upsample2_backward(dy, cache):
    return dy[:, :, 0::2] + dy[:, :, 1::2]


# ------------------------------------------------------ channel attention

def attention_forward(x, p, prefix):
    """Single-head self-attention with channels as tokens, plus residual.

    x: (B, C, W). Queries/keys/values are per-token projections of the W-dim
    token vectors; scores are scaled by 1/sqrt(W).
    """
    wq, bq = p[prefix + ".wq"], p[prefix + ".bq"]
    wk, bk = p[prefix + ".wk"], p[prefix + ".bk"]
    wv, bv = p[prefix + ".wv"], p[prefix + ".bv"]
    wo, bo = p[prefix + ".wo"], p[prefix + ".bo"]
    width = x.shape[2]
    q = np.einsum("bcw,wu->bcu", x, wq) + bq
    k = np.einsum("bcw,wu->bcu", x, wk) + bk
    v = np.einsum("bcw,wu->bcu", x, wv) + bv
    scores = np.einsum("bcu,bdu->bcd", q, k) / math.sqrt(width)
    scores -= scores.max(axis=2, keepdims=True)
    expw = np.exp(scores)
    attn = expw / expw.sum(axis=2, keepdims=True)
    o = np.einsum("bcd,bdu->bcu", attn, v)
    y = np.einsum("bcu,uv->bcv", o, wo) + bo
    return y + x, (x, q, k, v, attn, o)


def attention_backward(dy, p, prefix, cache, grads):
    x, q, k, v, attn, o = cache
    wq, wk, wv, wo = (p[prefix + s] for s in (".wq", ".wk", ".wv", ".wo"))
    width = x.shape[2]
    grads[prefix + ".wo"] = np.einsum("bcu,bcv->uv", o, dy)
    grads[prefix + ".bo"] = dy.sum(axis=(0, 1))
    do = np.einsum("bcv,uv->bcu", dy, wo)
    dattn = np.einsum("bcu,bdu->bcd", do, v)
    dv = np.einsum("bcd,bcu->bdu", attn, do)
    dscores = attn * (dattn - (dattn * attn).sum(axis=2, keepdims=True))
    dscores /= math.sqrt(width)
    dq = np.einsum("bcd,bdu->bcu", dscores, k)
    dk = np.einsum("bcd,bcu->bdu", dscores, q)
    dx = dy.copy()  # residual branch
    for dt, w, tag in ((dq, wq, "q"), (dk, wk, "k"), (dv, wv, "v")):
        grads[prefix + ".w" + tag] = np.einsum("bcw,bcu->wu", x, dt)
        grads[prefix + ".b" + tag] = dt.sum(axis=(0, 1))
        dx += np.einsum("bcu,wu->bcw", dt, w)
    return dx


# ------------------------------------------------------- step embedding

def sinusoidal_embedding(i, dim):
    """Sinusoidal encoding of integer step indices; i scalar or (B,)."""
    idx = np.atleast_1d(np.asarray(i, dtype=np.float64))
    half = dim // 2
    if half > 1:
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    else:
        freqs = np.ones(1)
    args = idx[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)
