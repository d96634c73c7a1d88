"""Run configuration: every tunable in one JSON document, plus seed substreams.

A missing key falls back to its default, an unknown key is an error.  The
default path can be set through ``PHASELOC_CONFIG``.
"""
from __future__ import annotations

import dataclasses
import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ScaleConfig
from .featio import SynthSpec
from .streamer import AugmentConfig, StreamConfig
from .trainer import TrainConfig

CONFIG_ENV = "PHASELOC_CONFIG"
TEST_SEED_OFFSET = 10000


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    num_train: int = 40
    num_test: int = 20
    phase_names: Optional[list] = None


@dataclass
class EvalConfig:
    exclude: list = field(default_factory=list)
    palette: Optional[list] = None


@dataclass
class RunConfig:
    seed: int = 7
    scale: ScaleConfig = field(default_factory=ScaleConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        # the synthetic generator follows the master seed
        if self.synth.seed != self.seed:
            self.synth = dataclasses.replace(self.synth, seed=self.seed)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=int(seed), synth=dataclasses.replace(self.synth, seed=int(seed)))

    def rng(self, name: str) -> np.random.Generator:
        """Independent generator for a named substream (``init``, ``shuffle``, ...)."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, zlib.crc32(name.encode())]))

    def phase_names(self) -> list:
        names = self.data.phase_names or [f"phase {i}" for i in range(self.synth.num_phases)]
        return list(names)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["synth"] = self.synth.to_dict()
        d["scale"]["pool_windows"] = list(self.scale.pool_windows)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    unknown = sorted(set(raw) - {f.name for f in dataclasses.fields(RunConfig)})
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    kw = {}
    if "seed" in raw:
        kw["seed"] = int(raw["seed"])
    if "scale" in raw:
        sc = dict(raw["scale"])
        if "pool_windows" in sc:
            sc["pool_windows"] = tuple(sc["pool_windows"])
        kw["scale"] = _build(ScaleConfig, sc, "scale")
    if "synth" in raw:
        sy = dict(raw["synth"])
        if "duration_range_per_phase" in sy:
            sy["duration_range_per_phase"] = [tuple(r) for r in sy["duration_range_per_phase"]]
        sy.setdefault("seed", kw.get("seed", 7))
        kw["synth"] = _build(SynthSpec, sy, "synth")
    if "data" in raw:
        kw["data"] = _build(DataConfig, raw["data"], "data")
    if "train" in raw:
        kw["train"] = _build(TrainConfig, raw["train"], "train")
    if "stream" in raw:
        st = dict(raw["stream"])
        if "augment" in st:
            st["augment"] = _build(AugmentConfig, st["augment"], "stream.augment")
        kw["stream"] = _build(StreamConfig, st, "stream")
    if "eval" in raw:
        kw["eval"] = _build(EvalConfig, raw["eval"], "eval")
    cfg = RunConfig(**kw)
    if cfg.data.phase_names is not None and len(cfg.data.phase_names) != cfg.synth.num_phases:
        raise ConfigError("data.phase_names must name every phase")
    if cfg.data.num_train < 1 or cfg.data.num_test < 0:
        raise ConfigError("data: need at least one training video")
    return cfg


def load_config(path=None) -> RunConfig:
    """Read a config file; ``None`` means ``$PHASELOC_CONFIG`` or the defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(raw)


def video_seed(split: str, i: int) -> int:
    return i if split == "train" else TEST_SEED_OFFSET + i


def video_id(split: str, i: int) -> str:
    return f"{split}_{i:03d}"
