"""Two-stride temporal encoder: slow/fast paths, aligned fusion, multi-scale pooling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn
from .core import ScaleConfig, ceil_div

ENCODER_KEYS = (
    "slow.conv1.W", "slow.conv1.b", "slow.conv2.W", "slow.conv2.b",
    "fast.conv1.W", "fast.conv1.b", "fast.conv2.W", "fast.conv2.b",
    "fuse.W", "fuse.b",
)


@dataclass
class MultiScaleFeatures:
    scales: list          # one (L_k, C_f + C_s) array per pooling window
    num_frames: int       # T of the encoded sequence
    fast_channels: int

    def lengths(self) -> list:
        return [len(f) for f in self.scales]


@dataclass
class EncoderCache:
    x: np.ndarray
    slow: tuple
    fast: tuple
    fuse: tuple
    fused_len: int
    pool_src: list


def init_encoder_params(dim: int, cfg: ScaleConfig, fast_channels: int = 8,
                        slow_channels: Optional[int] = None, rng=None) -> dict:
    """He-initialised weights; ``slow_channels`` defaults to four times the fast path."""
    rng = np.random.default_rng(0) if rng is None else rng
    cf = fast_channels
    cs = 4 * cf if slow_channels is None else slow_channels

    def conv(k, cin, cout):
        return rng.standard_normal((k, cin, cout)) * np.sqrt(2.0 / (k * cin)), np.zeros(cout)

    p = {}
    p["slow.conv1.W"], p["slow.conv1.b"] = conv(3, dim, cs)
    p["slow.conv2.W"], p["slow.conv2.b"] = conv(3, cs, cs)
    p["fast.conv1.W"], p["fast.conv1.b"] = conv(3, dim, cf)
    p["fast.conv2.W"], p["fast.conv2.b"] = conv(3, cf, cf)
    p["fuse.W"], p["fuse.b"] = conv(cfg.alpha, cf, cf)
    return p


def check_encoder_params(params: dict, dim: int, cfg: ScaleConfig) -> None:
    missing = [k for k in ENCODER_KEYS if k not in params]
    if missing:
        raise ValueError(f"encoder parameters missing: {missing}")
    s1, s2 = params["slow.conv1.W"], params["slow.conv2.W"]
    f1, f2, fu = params["fast.conv1.W"], params["fast.conv2.W"], params["fuse.W"]
    ok = (s1.shape[:2] == (3, dim) and f1.shape[:2] == (3, dim)
          and s2.shape == (3, s1.shape[2], s1.shape[2])
          and f2.shape == (3, f1.shape[2], f1.shape[2])
          and fu.shape == (cfg.alpha, f1.shape[2], f1.shape[2]))
    if not ok:
        raise ValueError("encoder parameter shapes are inconsistent with the input dimension or strides")


def _path(x, W1, b1, W2, b2, stride):
    z1, c1 = nn.conv1d(x, W1, b1, stride=stride)
    a1 = nn.relu(z1)
    y, c2 = nn.conv1d(a1, W2, b2)
    return y, (z1, c1, c2)


def _path_backward(dy, W1, W2, cache):
    z1, c1, c2 = cache
    da1, dW2, db2 = nn.conv1d_backward(dy, W2, c2)
    dz1 = da1 * (z1 > 0)
    _, dW1, db1 = nn.conv1d_backward(dz1, W1, c1)
    return dW1, db1, dW2, db2


def encode_with_cache(seq, params: dict, cfg: ScaleConfig):
    x = np.asarray(seq, dtype=np.float64)
    T, D = x.shape
    if T < cfg.slow_stride:
        raise ValueError(f"sequence of {T} frames is shorter than the slow stride {cfg.slow_stride}")
    check_encoder_params(params, D, cfg)
    p = params
    slow, slow_c = _path(x, p["slow.conv1.W"], p["slow.conv1.b"], p["slow.conv2.W"], p["slow.conv2.b"],
                         cfg.slow_stride)
    fast, fast_c = _path(x, p["fast.conv1.W"], p["fast.conv1.b"], p["fast.conv2.W"], p["fast.conv2.b"],
                         cfg.fast_stride)
    l1 = ceil_div(T, cfg.slow_stride)
    aligned, fuse_c = nn.conv1d(fast, p["fuse.W"], p["fuse.b"], stride=cfg.alpha, pad_left=0, out_len=l1)
    fused = np.concatenate([aligned, slow], axis=1)
    scales, srcs = [], []
    for w in cfg.pool_windows:
        f, src = nn.max_pool(fused, w)
        scales.append(f)
        srcs.append(src)
    ms = MultiScaleFeatures(scales, T, aligned.shape[1])
    return ms, EncoderCache(x, slow_c, fast_c, fuse_c, l1, srcs)


def encode(seq, params: dict, cfg: ScaleConfig) -> MultiScaleFeatures:
    return encode_with_cache(seq, params, cfg)[0]


def fused_gradient(dscales, cache: EncoderCache) -> np.ndarray:
    """Route per-scale gradients back through max-pooling onto the fused sequence."""
    dfused = np.zeros((cache.fused_len, dscales[0].shape[1]))
    for d, src in zip(dscales, cache.pool_src):
        dfused += nn.max_pool_backward(d, src, cache.fused_len)
    return dfused


def encode_backward(params: dict, cache: Optional[EncoderCache], dscales) -> dict:
    """Parameter gradients of ``sum_k <dscales[k], f_k>``."""
    if cache is None:
        raise ValueError("encode_backward needs the cache from encode_with_cache")
    p = params
    dfused = fused_gradient(dscales, cache)
    cf = p["fuse.W"].shape[2]
    dfast_aligned, dslow = dfused[:, :cf], dfused[:, cf:]
    g = {}
    dfast, g["fuse.W"], g["fuse.b"] = nn.conv1d_backward(dfast_aligned, p["fuse.W"], cache.fuse)
    g["slow.conv1.W"], g["slow.conv1.b"], g["slow.conv2.W"], g["slow.conv2.b"] = _path_backward(
        dslow, p["slow.conv1.W"], p["slow.conv2.W"], cache.slow)
    g["fast.conv1.W"], g["fast.conv1.b"], g["fast.conv2.W"], g["fast.conv2.b"] = _path_backward(
        dfast, p["fast.conv1.W"], p["fast.conv2.W"], cache.fast)
    return g
