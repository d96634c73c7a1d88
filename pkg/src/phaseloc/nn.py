"""Minimal 1-D temporal layers with hand-written backward passes.

Sequences are ``(L, C)`` arrays.  Convolution weights are ``(K, C_in, C_out)``.
"""
import numpy as np


def conv1d(x, W, b, stride=1, pad_left=None, out_len=None):
    """Strided temporal convolution with zero padding.

    By default the output has ``ceil(L / stride)`` steps and ``pad_left =
    (K - 1) // 2``; any missing right context reads zeros.
    Returns ``(y, cache)``.
    """
    L, C = x.shape
    K = W.shape[0]
    if pad_left is None:
        pad_left = (K - 1) // 2
    if out_len is None:
        out_len = -(-L // stride)
    need = stride * (out_len - 1) + K
    pad_right = max(0, need - L - pad_left)
    xp = np.zeros((L + pad_left + pad_right, C), dtype=x.dtype)
    xp[pad_left:pad_left + L] = x
    idx = stride * np.arange(out_len)[:, None] + np.arange(K)[None, :]
    cols = xp[idx].reshape(out_len, K * C)
    y = cols @ W.reshape(K * C, -1) + b
    return y, (cols, idx, xp.shape, pad_left, L, W.shape)


def conv1d_backward(dy, W, cache):
    cols, idx, xp_shape, pad_left, L, wshape = cache
    K, C, Co = wshape
    dW = (cols.T @ dy).reshape(wshape)
    db = dy.sum(axis=0)
    dcols = (dy @ W.reshape(K * C, Co).T).reshape(len(dy), K, C)
    dxp = np.zeros(xp_shape)
    np.add.at(dxp, idx, dcols)
    return dxp[pad_left:pad_left + L], dW, db


def relu(x):
    return np.maximum(x, 0.0)


def max_pool(x, window):
    """Non-overlapping max-pool, stride = window, final partial window kept.

    Returns pooled values and the source row of every output element (first
    index on ties) for gradient routing.
    """
    L, C = x.shape
    if window == 1:
        return x.copy(), np.broadcast_to(np.arange(L)[:, None], (L, C)).copy()
    n = -(-L // window)
    padded = np.full((n * window, C), -np.inf, dtype=x.dtype)
    padded[:L] = x
    blocks = padded.reshape(n, window, C)
    arg = blocks.argmax(axis=1)
    out = np.take_along_axis(blocks, arg[:, None, :], axis=1)[:, 0, :]
    src = arg + window * np.arange(n)[:, None]
    return out, src


def max_pool_backward(dy, src, L):
    dx = np.zeros((L, dy.shape[1]))
    np.add.at(dx, (src, np.broadcast_to(np.arange(dy.shape[1]), src.shape)), dy)
    return dx


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def masked_softmax(z, mask):
    """Softmax over entries where ``mask`` is true; rows with no valid entry are all zero."""
    zm = np.where(mask, z, -np.inf)
    m = zm.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(zm - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softplus(z):
    return np.logaddexp(0.0, z)
