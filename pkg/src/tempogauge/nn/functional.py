"""Forward and backward kernels.

Each ``*_forward`` returns the output plus whatever the matching
``*_backward`` needs. Arrays keep the dtype of their parameters, so the same
code runs in float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

import numpy as np

CCE_EPS = 1e-12


class ShapeError(ValueError):
    pass


class UninitializedStatisticsError(RuntimeError):
    """Batch norm asked for inference before any moving statistics exist."""


# dense ---------------------------------------------------------------------

def dense_forward(x, W, b):
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense: x{x.shape} W{W.shape} b{b.shape}")
    return x @ W + b


def dense_backward(dy, x, W):
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


# bidirectional simple recurrent layer ---------------------------------------

def brnn_layer_forward(x, Wx, Wh, b):
    """Bidirectional Elman layer with tanh.

    ``Wx`` is ``(2, in, H)``, ``Wh`` is ``(2, H, H)`` and ``b`` is ``(2, H)``;
    index 0 is the forward direction, index 1 runs over the time-reversed
    sequence. Returns ``(y, cache)`` with ``y`` of shape ``(batch, T, 2H)``.
    """
    if x.ndim != 3:
        raise ShapeError(f"brnn expects (batch, T, in), got {x.shape}")
    B, T, n_in = x.shape
    if Wx.shape[:2] != (2, n_in) or Wh.shape != (2, Wx.shape[2], Wx.shape[2]) \
            or b.shape != (2, Wx.shape[2]):
        raise ShapeError(f"brnn: x{x.shape} Wx{Wx.shape} Wh{Wh.shape} b{b.shape}")
    H = Wx.shape[2]
    xs = np.stack([x, x[:, ::-1]])                      # (2, B, T, in)
    a = np.matmul(xs, Wx[:, None]).transpose(2, 0, 1, 3) + b[None, :, None, :]
    a = np.ascontiguousarray(a)                         # (T, 2, B, H)
    hs = np.empty_like(a)
    h = np.zeros((2, B, H), dtype=a.dtype)
    for t in range(T):
        h = np.tanh(a[t] + np.matmul(h, Wh))
        hs[t] = h
    y = np.concatenate([hs[:, 0].transpose(1, 0, 2), hs[::-1, 1].transpose(1, 0, 2)], axis=2)
    return y, (xs, hs, Wx, Wh)


def brnn_layer_backward(dy, cache):
    """Backpropagation through time for :func:`brnn_layer_forward`."""
    xs, hs, Wx, Wh = cache
    T, _, B, H = hs.shape
    dh_out = np.empty_like(hs)
    dh_out[:, 0] = dy[:, :, :H].transpose(1, 0, 2)
    dh_out[:, 1] = dy[:, ::-1, H:].transpose(1, 0, 2)
    dtanh = 1.0 - hs * hs
    WhT = Wh.transpose(0, 2, 1)

    da = np.empty_like(hs)
    carry = np.zeros((2, B, H), dtype=hs.dtype)
    for t in range(T - 1, -1, -1):
        g = (dh_out[t] + carry) * dtanh[t]
        da[t] = g
        carry = np.matmul(g, WhT)

    h_prev = np.concatenate([np.zeros_like(hs[:1]), hs[:-1]])
    dWh = np.einsum("tdbi,tdbj->dij", h_prev, da)
    da_d = da.transpose(1, 2, 0, 3)                     # (2, B, T, H)
    n_in = xs.shape[-1]
    dWx = np.matmul(xs.reshape(2, -1, n_in).transpose(0, 2, 1), da_d.reshape(2, -1, H))
    db = da.sum(axis=(0, 2))
    dxs = np.matmul(da_d, Wx.transpose(0, 2, 1)[:, None])
    dx = dxs[0] + dxs[1][:, ::-1]
    return dx, dWx, dWh, db


# batch normalisation ----------------------------------------------------------

def batch_norm_forward(x, gamma, beta, mode, moving_mean=None, moving_var=None,
                       momentum=0.99, eps=1e-5):
    """Normalise over every axis except the last.

    In ``"train"`` mode batch statistics are used and the moving averages are
    updated in place; in ``"infer"`` mode the moving averages are used.
    """
    if x.shape[-1] != gamma.shape[0]:
        raise ShapeError(f"batch norm: x{x.shape} gamma{gamma.shape}")
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        if moving_mean is not None:
            moving_mean *= momentum
            moving_mean += (1 - momentum) * mu
            moving_var *= momentum
            moving_var += (1 - momentum) * var
    elif mode == "infer":
        if moving_mean is None or moving_var is None:
            raise UninitializedStatisticsError("batch norm has no moving statistics yet")
        mu, var = moving_mean, moving_var
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv, gamma, mode)


def batch_norm_backward(dy, cache):
    xhat, inv, gamma, mode = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    if mode == "infer":
        return dxhat * inv, dgamma, dbeta
    n = dy.size // dy.shape[-1]
    dx = inv / n * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


# dropout ------------------------------------------------------------------------

def dropout_forward(x, p, mode, rng=None):
    """Inverted dropout. Returns ``(y, mask)``; ``mask`` is None when inactive."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0, 1), got {p}")
    if mode == "infer" or p == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


# pooling ------------------------------------------------------------------------

def avg_pool_time(x, k):
    """Mean over non-overlapping runs of ``k`` steps along axis 1; the
    ``T mod k`` trailing steps are dropped."""
    if k < 1:
        raise ValueError("pool size must be >= 1")
    B, T = x.shape[:2]
    if T < k:
        raise ShapeError(f"cannot pool {T} steps with k={k}")
    n = T // k
    return x[:, :n * k].reshape(B, n, k, *x.shape[2:]).mean(axis=2)


def avg_pool_time_backward(dy, k, T):
    B, n = dy.shape[:2]
    dx = np.zeros((B, T, *dy.shape[2:]), dtype=dy.dtype)
    dx[:, :n * k] = np.repeat(dy / dy.dtype.type(k), k, axis=1)
    return dx


# activations -----------------------------------------------------------------------

def elu(x):
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0)))


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def activation_forward(x, kind):
    if kind == "tanh":
        return np.tanh(x)
    if kind == "elu":
        return elu(x)
    if kind == "softmax":
        return softmax(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(dy, x, y, kind):
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "elu":
        return dy * np.where(x >= 0, 1.0, y + 1.0).astype(dy.dtype)
    if kind == "softmax":
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {kind!r}")


# loss ----------------------------------------------------------------------------------

def cce_loss(probs, targets):
    """Mean categorical cross-entropy; true-class probability clamped at 1e-12."""
    if probs.shape != targets.shape:
        raise ShapeError(f"probs{probs.shape} vs targets{targets.shape}")
    p_true = (probs * targets).sum(axis=-1)
    return float(-np.log(np.maximum(p_true, CCE_EPS)).mean())


def softmax_cce(logits, targets):
    """Fused softmax + cross-entropy. Returns ``(loss, probs, dlogits)``."""
    probs = softmax(logits)
    loss = cce_loss(probs, targets)
    return loss, probs, (probs - targets) / logits.dtype.type(logits.shape[0])
