"""The full localization model (encoder + heads) and its checkpoint file.

Checkpoint layout, little-endian::

    b"SPLC"  u16 version  u32 manifest_len  manifest (UTF-8 JSON)  float32 payloads

The manifest lists tensor names and shapes in payload order together with
the scale configuration needed to rebuild the model.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ScaleConfig
from .encoder import ENCODER_KEYS, encode_with_cache, init_encoder_params
from .localizer import HEAD_KEYS, heads_forward, init_head_params, propose_scale

CHECKPOINT_MAGIC = b"SPLC"
CHECKPOINT_VERSION = 1
PARAM_KEYS = ENCODER_KEYS + HEAD_KEYS


class CheckpointError(ValueError):
    pass


@dataclass
class Model:
    params: dict
    cfg: ScaleConfig
    num_phases: int
    dim: int
    global_weight: float = 1.0
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, dim: int, num_phases: int, cfg: ScaleConfig, fast_channels: int = 8,
             slow_channels=None, hidden: int = 16, rng=None, global_weight: float = 1.0) -> "Model":
        rng = np.random.default_rng(0) if rng is None else rng
        params = init_encoder_params(dim, cfg, fast_channels, slow_channels, rng)
        channels = params["fuse.W"].shape[2] + params["slow.conv2.W"].shape[2]
        params.update(init_head_params(channels, num_phases, cfg.bin_size, hidden, rng))
        return cls({k: params[k] for k in PARAM_KEYS}, cfg, num_phases, dim, global_weight)

    def forward(self, seq):
        """Encoder and heads on every scale; returns ``(ms, outputs, enc_cache, head_caches)``."""
        ms, enc_cache = encode_with_cache(seq, self.params, self.cfg)
        outs, caches = [], []
        for f in ms.scales:
            o, c = heads_forward(f, self.params, self.cfg.bin_size)
            outs.append(o)
            caches.append(c)
        return ms, outs, enc_cache, caches

    def raw_proposals(self, seq):
        """Unfiltered proposals as parallel arrays ``(start, end, label, score, scale)``."""
        ms, outs, _, _ = self.forward(seq)
        parts = [propose_scale(o, self.cfg.span(k), ms.num_frames, k, self.global_weight)
                 for k, o in enumerate(outs)]
        return tuple(np.concatenate(col) for col in zip(*parts))

    def copy(self) -> "Model":
        return Model({k: v.copy() for k, v in self.params.items()}, self.cfg, self.num_phases,
                     self.dim, self.global_weight, dict(self.meta))


def checkpoint_bytes(model: Model) -> bytes:
    manifest = {
        "tensors": [[k, list(model.params[k].shape)] for k in PARAM_KEYS],
        "scale": {"slow_stride": model.cfg.slow_stride, "fast_stride": model.cfg.fast_stride,
                  "pool_windows": list(model.cfg.pool_windows), "bin_size": model.cfg.bin_size},
        "num_phases": model.num_phases,
        "dim": model.dim,
        "global_weight": model.global_weight,
        "meta": model.meta,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(mbytes)), mbytes]
    for k in PARAM_KEYS:
        parts.append(np.ascontiguousarray(model.params[k], dtype="<f4").tobytes())
    return b"".join(parts)


def model_from_bytes(buf: bytes) -> Model:
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(buf) < 10:
        raise CheckpointError("checkpoint header truncated")
    version, mlen = struct.unpack_from("<HI", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        manifest = json.loads(buf[10:10 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from None
    off = 10 + mlen
    params = {}
    for name, shape in manifest["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        if off + 4 * n > len(buf):
            raise CheckpointError(f"checkpoint payload truncated at tensor {name}")
        params[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 4 * n
    cfg = ScaleConfig(**manifest["scale"])
    return Model(params, cfg, manifest["num_phases"], manifest["dim"], manifest["global_weight"],
                 manifest.get("meta", {}))


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
