"""Feature/annotation files and a seeded synthetic procedure generator."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (PhaseSegment, as_feature_sequence, frame_labels_from_segments,
                   segments_from_frame_labels)

FEATURE_MAGIC = b"SPLF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sHHII")


class FeatureFileError(ValueError):
    pass


class BadMagicError(FeatureFileError):
    pass


class VersionMismatchError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class NonFiniteError(FeatureFileError):
    pass


def encode_features(seq: np.ndarray) -> bytes:
    arr = np.asarray(seq)
    if arr.ndim != 2:
        raise ValueError("feature sequence must be 2-D")
    arr = arr.astype("<f4", copy=False)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("refusing to write non-finite features")
    T, D = arr.shape
    return _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, 0, T, D) + np.ascontiguousarray(arr).tobytes()


def decode_features(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != FEATURE_MAGIC:
        raise BadMagicError("not a feature file (bad magic)")
    if len(buf) < _HEADER.size:
        raise TruncatedFileError("feature file header is truncated")
    _, version, _reserved, T, D = _HEADER.unpack_from(buf)
    if version != FEATURE_VERSION:
        raise VersionMismatchError(f"unsupported feature file version {version}")
    n = T * D
    payload = buf[_HEADER.size:]
    if len(payload) < 4 * n:
        raise TruncatedFileError(f"expected {n} float32 values, found {len(payload) // 4}")
    arr = np.frombuffer(payload, dtype="<f4", count=n).reshape(T, D).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("feature file contains non-finite values")
    return arr


def write_feature_file(seq: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_features(seq))


def read_feature_file(path) -> np.ndarray:
    return decode_features(Path(path).read_bytes())


# -- annotations -------------------------------------------------------------

@dataclass
class LabeledVideo:
    features: np.ndarray
    segments: list
    video_id: str = ""

    def __post_init__(self):
        self.features = as_feature_sequence(self.features)
        self.segments = [PhaseSegment(*map(int, s)) for s in self.segments]
        labels = frame_labels_from_segments(self.segments)
        if len(labels) != len(self.features):
            raise ValueError("segments do not cover the feature sequence exactly")
        self.frame_labels = labels

    @property
    def T(self) -> int:
        return len(self.features)


def write_annotations(path, phases: Sequence[str], videos: Sequence[tuple]) -> None:
    """``videos`` is a sequence of ``(video_id, segments)``."""
    doc = {
        "phases": list(phases),
        "videos": [
            {"id": vid, "segments": [{"start": int(s.start), "end": int(s.end), "label": int(s.label)}
                                     for s in segs]}
            for vid, segs in videos
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_annotations(path) -> tuple:
    """Return ``(phase_names, {video_id: [PhaseSegment, ...]})``."""
    doc = json.loads(Path(path).read_text())
    phases = list(doc["phases"])
    videos = {}
    for v in doc["videos"]:
        segs = [PhaseSegment(int(s["start"]), int(s["end"]), int(s["label"])) for s in v["segments"]]
        for s in segs:
            if not (0 <= s.start < s.end and 0 <= s.label < len(phases)):
                raise ValueError(f"invalid segment {s} in video {v['id']}")
        videos[str(v["id"])] = segs
    return phases, videos


# -- synthetic procedures ----------------------------------------------------

@dataclass
class SynthSpec:
    num_phases: int = 5
    feature_dim: int = 16
    duration_range_per_phase: list = field(default_factory=lambda: [(20, 60)] * 5)
    noise_sigma: float = 0.3
    transition_len: int = 2
    symmetric_tails: bool = False
    seed: int = 7
    skip_prob: Optional[list] = None
    min_angle_deg: float = 60.0

    def __post_init__(self):
        self.duration_range_per_phase = [tuple(int(v) for v in r) for r in self.duration_range_per_phase]
        if self.num_phases < 2 or self.feature_dim < 2:
            raise ValueError("need at least 2 phases and 2 feature dimensions")
        if len(self.duration_range_per_phase) != self.num_phases:
            raise ValueError("one duration range per phase is required")
        if any(lo < 1 or lo > hi for lo, hi in self.duration_range_per_phase):
            raise ValueError("duration ranges must satisfy 1 <= min <= max")
        if self.noise_sigma < 0 or self.transition_len < 0:
            raise ValueError("noise_sigma and transition_len must be non-negative")
        if self.skip_prob is not None and len(self.skip_prob) != self.num_phases:
            raise ValueError("skip_prob needs one entry per phase")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["duration_range_per_phase"] = [list(r) for r in self.duration_range_per_phase]
        return d


def phase_signatures(spec: SynthSpec) -> np.ndarray:
    """Unit vectors, one per phase, pairwise separated by at least ``min_angle_deg``.

    Drawn by rejection from ``spec.seed`` only, so every video of a spec
    shares them.  With ``symmetric_tails`` the last phase is the first
    phase rotated by exactly the minimum angle.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5167]))
    P, D = spec.num_phases, spec.feature_dim
    cos_max = np.cos(np.deg2rad(spec.min_angle_deg))
    n_free = P - 1 if spec.symmetric_tails else P
    for _ in range(10_000):
        sig = rng.standard_normal((P, D))
        sig /= np.linalg.norm(sig, axis=1, keepdims=True)
        if spec.symmetric_tails:
            u = sig[-1] - (sig[-1] @ sig[0]) * sig[0]
            u /= np.linalg.norm(u)
            ang = np.deg2rad(spec.min_angle_deg) + 1e-9
            sig[-1] = np.cos(ang) * sig[0] + np.sin(ang) * u
        gram = sig @ sig.T
        np.fill_diagonal(gram, -1.0)
        if gram.max() <= cos_max + 1e-12:
            return sig
    raise ValueError(f"cannot place {n_free} signatures with the requested minimum angle")


def generate_video(spec: SynthSpec, video_seed: int, video_id: str = "") -> LabeledVideo:
    sig = phase_signatures(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, int(video_seed), 0x7669]))
    phases = []
    for p, (lo, hi) in enumerate(spec.duration_range_per_phase):
        dur = int(rng.integers(lo, hi + 1))
        if spec.skip_prob is not None and rng.random() < spec.skip_prob[p]:
            continue
        phases.append((p, dur))
    if not phases:
        phases.append((0, spec.duration_range_per_phase[0][0]))

    segments, start = [], 0
    for p, dur in phases:
        segments.append(PhaseSegment(start, start + dur, p))
        start += dur
    T = start

    labels = np.asarray(frame_labels_from_segments(segments))
    clean = sig[labels].copy()
    tl = spec.transition_len
    if tl > 0:
        # linear cross-fade centred on each boundary; frames keep their own
        # signature as the majority component so labels stay recoverable
        for prev, nxt in zip(segments, segments[1:]):
            b = nxt.start
            for f in range(max(prev.start, b - tl), min(nxt.end, b + tl)):
                a = 0.5 + (f - b + 0.5) / (tl + 1)
                if 0.0 < a < 1.0:
                    clean[f] = (1 - a) * sig[prev.label] + a * sig[nxt.label]
    noise = rng.standard_normal((T, spec.feature_dim)) * spec.noise_sigma
    feats = (clean + noise).astype(np.float32)
    return LabeledVideo(feats, segments, video_id)
