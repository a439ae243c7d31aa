"""Differentiable layer primitives (float64 numpy, explicit backward passes).

Every primitive is a pair of pure functions: ``*_fwd`` returns the output and
a cache, ``*_bwd`` consumes the upstream gradient and the cache. Sequences are
[T, channels]; all row-mixing is confined to the causal convolutions, which is
what makes the causality guarantees of the model exact rather than
approximate.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
LN_EPS = 1e-5


def linear_fwd(x, w, b):
    return x @ w + b, x


def linear_bwd(dy, cache, w):
    x = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def layernorm_fwd(x, g, b):
    """Layer normalization over the channel (last) axis, per time step."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def gelu_fwd(x):
    phi = 0.5 * (1.0 + erf(x / SQRT2))
    return x * phi, (x, phi)


def gelu_bwd(dy, cache):
    x, phi = cache
    return dy * (phi + x * np.exp(-0.5 * x * x) * INV_SQRT_2PI)


def dropout_fwd(x, p, rng, train):
    """Inverted dropout; identity (no rng draw) when not training or p == 0."""
    if not train or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_bwd(dy, mask):
    return dy if mask is None else dy * mask


def causal_conv_fwd(x, w, b, dilation):
    """Dilated causal 1-D convolution.

    x: [T, d_in], w: [k, d_in, d_out]. Output at step t depends on
    x[t - (k-1)*dilation .. t] only (left zero padding).
    """
    k, d_in, d_out = w.shape
    t_len = x.shape[0]
    pad = (k - 1) * dilation
    xp = np.concatenate([np.zeros((pad, d_in)), x], axis=0)
    taps = np.concatenate([xp[j * dilation : j * dilation + t_len] for j in range(k)], axis=1)
    y = taps @ w.reshape(k * d_in, d_out) + b
    return y, (taps, x.shape, w.shape, dilation)


def causal_conv_bwd(dy, cache, w):
    taps, x_shape, w_shape, dilation = cache
    k, d_in, d_out = w_shape
    t_len = x_shape[0]
    pad = (k - 1) * dilation
    dtaps = dy @ w.reshape(k * d_in, d_out).T
    dw = (taps.T @ dy).reshape(k, d_in, d_out)
    db = dy.sum(axis=0)
    dxp = np.zeros((t_len + pad, d_in))
    for j in range(k):
        dxp[j * dilation : j * dilation + t_len] += dtaps[:, j * d_in : (j + 1) * d_in]
    return dxp[pad:], dw, db


def single_token_attention_fwd(h, v_token, w_out, b_out):
    """Multi-head attention output for a single key/value token.

    The softmax over one key is identically 1 for every query and head, so
    the attended value is the token itself broadcast over time; queries and
    keys cannot influence the result (and receive exactly zero gradient).
    v_token: [1, d] value projection of the context.
    """
    t_len = h.shape[0]
    att = np.broadcast_to(v_token, (t_len, v_token.shape[1]))
    y = att @ w_out + b_out
    return y, (att, t_len)


def single_token_attention_bwd(dy, cache, w_out):
    att, t_len = cache
    datt = dy @ w_out.T
    dw_out = att.T @ dy
    db_out = dy.sum(axis=0)
    dv_token = datt.sum(axis=0, keepdims=True)
    return dv_token, dw_out, db_out
