"""Dense math kernels with hand-derived gradients.

Every differentiable op comes as a `*_forward(...) -> (out, cache)` /
`*_backward(dout, cache) -> grads` pair operating on float64 arrays, plus a
universal central finite-difference checker. All ops are pure: identical
inputs give bitwise identical outputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ParamBlock:
    """A named trainable tensor with its gradient and momentum buffers."""

    name: str
    value: np.ndarray
    grad: np.ndarray
    momentum_buf: np.ndarray
    learning_group: str  # "adapter" or "synth"
    weight_decay_exempt: bool = False

    @classmethod
    def create(cls, name, value, learning_group, weight_decay_exempt=False):
        value = np.asarray(value, dtype=np.float64)
        return cls(
            name=name,
            value=value,
            grad=np.zeros_like(value),
            momentum_buf=np.zeros_like(value),
            learning_group=learning_group,
            weight_decay_exempt=weight_decay_exempt,
        )

    def zero_grad(self):
        self.grad[...] = 0.0


def replicate_pad(x: np.ndarray, k: int) -> np.ndarray:
    """Pad the last axis to a multiple of k by repeating the final position."""
    length = x.shape[-1]
    pad = (-length) % k
    if pad == 0:
        return x
    tail = np.repeat(x[..., -1:], pad, axis=-1)
    return np.concatenate([x, tail], axis=-1)


def conv1d_chunk_forward(x, w, b, stride=None):
    """1D convolution over the view axis with replicate-last padding.

    x: (B, C_in, L) or (C_in, L); w: (C_out, C_in, k); b: (C_out,).
    The input is padded to a multiple of k, so with stride == k (the
    default) the output length is ceil(L / k).
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    k = w.shape[2]
    if stride is None:
        stride = k
    xp = replicate_pad(x, k)
    lp = xp.shape[2]
    if k > lp:
        raise ValueError(f"kernel {k} exceeds padded length {lp}")
    n_out = (lp - k) // stride + 1
    # windows: (B, n_out, C_in, k), flattened so the contraction is one matmul
    windows = np.stack([xp[:, :, i * stride:i * stride + k] for i in range(n_out)],
                       axis=1)
    bsz, c_in = x.shape[0], x.shape[1]
    flat = windows.reshape(bsz * n_out, c_in * k)
    out = (flat @ w.reshape(w.shape[0], c_in * k).T)
    out = out.reshape(bsz, n_out, w.shape[0]).transpose(0, 2, 1) + b[None, :, None]
    cache = (x.shape, lp, w, stride, flat, squeeze)
    return (out[0] if squeeze else out), cache


def conv1d_chunk_backward(dout, cache):
    """Gradients of conv1d_chunk w.r.t. input, weights, bias.

    The input gradient folds padded-position gradients back onto the last
    real position (replicate padding backward).
    """
    x_shape, lp, w, stride, flat, squeeze = cache
    if squeeze:
        dout = dout[None]
    c_out, c_in, k = w.shape
    n_out = dout.shape[2]
    bsz = x_shape[0]
    dout_flat = dout.transpose(0, 2, 1).reshape(bsz * n_out, c_out)
    dw = (dout_flat.T @ flat).reshape(c_out, c_in, k)
    db = dout.sum(axis=(0, 2))
    dwin = (dout_flat @ w.reshape(c_out, c_in * k)).reshape(bsz, n_out, c_in, k)
    dxp = np.zeros((bsz, c_in, lp))
    for i in range(n_out):
        dxp[:, :, i * stride:i * stride + k] += dwin[:, i]
    length = x_shape[2]
    dx = dxp[:, :, :length].copy()
    if lp > length:
        dx[:, :, -1] += dxp[:, :, length:].sum(axis=2)
    return (dx[0] if squeeze else dx), dw, db


def batchnorm1d_forward(x, gamma, beta, running_mean, running_var,
                        mode="train", momentum=0.1, eps=1e-5,
                        update_running_stats=True):
    """Per-channel batch normalization over batch and position axes.

    x: (B, C, L). Train mode normalizes with biased batch statistics and
    updates the running buffers in place (unbiased variance, torch
    convention); eval mode normalizes with the running buffers. Pass
    update_running_stats=False to train-normalize a side batch without
    steering the running buffers off the evaluation distribution.
    """
    bsz, _, length = x.shape
    n = bsz * length
    if mode == "train":
        if n < 2:
            raise ValueError(f"batchnorm train mode needs B*L >= 2, got {n}")
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        if update_running_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var * (n / (n - 1))
    elif mode == "eval":
        mean = running_mean
        var = running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    cache = (mode, xhat, inv_std, gamma, n)
    return out, cache


def batchnorm1d_backward(dout, cache):
    mode, xhat, inv_std, gamma, n = cache
    dgamma = (dout * xhat).sum(axis=(0, 2))
    dbeta = dout.sum(axis=(0, 2))
    dxhat = dout * gamma[None, :, None]
    if mode == "train":
        # batch statistics couple every position in a channel
        dx = (
            dxhat
            - dxhat.mean(axis=(0, 2))[None, :, None]
            - xhat * (dxhat * xhat).mean(axis=(0, 2))[None, :, None]
        ) * inv_std[None, :, None]
    else:
        dx = dxhat * inv_std[None, :, None]
    return dx, dgamma, dbeta


def relu_forward(x):
    out = np.maximum(x, 0.0)
    return out, (x > 0.0)


def relu_backward(dout, cache):
    return dout * cache


def pool1d_forward(x, kernel, mode="average"):
    """Non-parametric pooling over the last axis, stride = kernel.

    A trailing partial window is pooled over its actual extent, so the
    output length is ceil(L / kernel).
    """
    if kernel < 1:
        raise ValueError("pool kernel must be >= 1")
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    length = x.shape[2]
    n_out = -(-length // kernel)
    out = np.empty(x.shape[:2] + (n_out,))
    argmax = None
    if mode == "max":
        argmax = np.empty(out.shape, dtype=np.int64)
    for i in range(n_out):
        lo, hi = i * kernel, min((i + 1) * kernel, length)
        win = x[:, :, lo:hi]
        if mode == "average":
            out[:, :, i] = win.mean(axis=2)
        elif mode == "max":
            idx = win.argmax(axis=2)
            argmax[:, :, i] = lo + idx
            out[:, :, i] = np.take_along_axis(win, idx[:, :, None], axis=2)[:, :, 0]
        else:
            raise ValueError(f"unknown pool mode {mode!r}")
    cache = (x.shape, kernel, mode, argmax, squeeze)
    return (out[0] if squeeze else out), cache


def pool1d_backward(dout, cache):
    x_shape, kernel, mode, argmax, squeeze = cache
    if squeeze:
        dout = dout[None]
    length = x_shape[2]
    dx = np.zeros(x_shape)
    for i in range(dout.shape[2]):
        lo, hi = i * kernel, min((i + 1) * kernel, length)
        if mode == "average":
            dx[:, :, lo:hi] += dout[:, :, i:i + 1] / (hi - lo)
        else:
            np.put_along_axis(
                dx, argmax[:, :, i][:, :, None], dout[:, :, i][:, :, None], axis=2
            )
    return dx[0] if squeeze else dx


def layer_norm_forward(x, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    out = centered * inv_std
    return out, (out, inv_std, x.shape[-1])


def layer_norm_backward(dout, cache):
    xhat, inv_std, d = cache
    return (
        dout
        - dout.mean(axis=-1, keepdims=True)
        - xhat * (dout * xhat).mean(axis=-1, keepdims=True)
    ) * inv_std


def linear_forward(x, w, b):
    """Affine map over the last axis: out = x @ w.T + b."""
    out = x @ w.T + b
    return out, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    dx = dout @ w
    x2 = x.reshape(-1, x.shape[-1])
    dout2 = dout.reshape(-1, dout.shape[-1])
    dw = dout2.T @ x2
    db = dout2.sum(axis=0)
    return dx, dw, db


def l2_normalize_forward(x, eps=1e-12):
    """Normalize rows to unit length; rows with norm < eps pass through."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.maximum(norms, eps)
    out = np.where(norms < eps, x, x / safe)
    return out, (out, safe, norms < eps)


def l2_normalize_backward(dout, cache):
    xhat, safe, degenerate = cache
    dx = (dout - xhat * (dout * xhat).sum(axis=-1, keepdims=True)) / safe
    return np.where(degenerate, dout, dx)


def cosine_similarity_matrix(a, b):
    """Pairwise cosine similarities between the rows of a and b.

    Zero rows yield similarity 0 (denominator floored at 1e-12).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dots = a @ b.T
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    return dots / np.maximum(np.outer(na, nb), 1e-12)


def finite_difference_check(f, params, h=1e-5):
    """Compare analytic gradients against central finite differences.

    `f` is a scalar function of the current ParamBlock values; the analytic
    gradients must already sit in each block's `.grad`. Returns the worst
    relative error |a - n| / max(|a|, |n|, 1e-8) over every parameter scalar.
    """
    worst = 0.0
    for p in params:
        flat_v = p.value.reshape(-1)
        flat_g = p.grad.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + h
            f_plus = float(f())
            flat_v[i] = orig - h
            f_minus = float(f())
            flat_v[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(
                    f"non-finite loss while probing {p.name}[{i}]"
                )
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = flat_g[i]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
