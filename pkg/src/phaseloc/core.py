"""Domain types and interval arithmetic shared by every module.

All intervals are half-open ``[start, end)`` over integer frame indices at
1 frame per second.  A frame sequence is a 2-D ``float32`` array of shape
``(T, D)``; a prediction track is a list whose entries are phase ids or
``None``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

PredictionTrack = list  # list[Optional[int]]


class PhaseSegment(NamedTuple):
    start: int
    end: int
    label: int

    @property
    def length(self) -> int:
        return self.end - self.start


def check_segment(seg: PhaseSegment, num_phases: Optional[int] = None) -> None:
    if not 0 <= seg.start < seg.end:
        raise ValueError(f"invalid segment bounds {seg.start}..{seg.end}")
    if seg.label < 0 or (num_phases is not None and seg.label >= num_phases):
        raise ValueError(f"label {seg.label} outside [0, {num_phases})")


@dataclass(frozen=True)
class Proposal:
    segment: PhaseSegment
    score: float
    scale: int

    @property
    def start(self) -> int:
        return self.segment.start

    @property
    def end(self) -> int:
        return self.segment.end

    @property
    def label(self) -> int:
        return self.segment.label

    def to_dict(self) -> dict:
        return {"start": int(self.start), "end": int(self.end), "label": int(self.label),
                "score": float(self.score), "scale": int(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "Proposal":
        return cls(PhaseSegment(int(d["start"]), int(d["end"]), int(d["label"])),
                   float(d["score"]), int(d["scale"]))


@dataclass(frozen=True)
class ScaleConfig:
    slow_stride: int = 2
    fast_stride: int = 1
    pool_windows: tuple = (1, 2, 4)
    bin_size: int = 24

    def __post_init__(self):
        object.__setattr__(self, "pool_windows", tuple(int(w) for w in self.pool_windows))
        if self.fast_stride < 1 or self.slow_stride % self.fast_stride:
            raise ValueError("slow_stride must be a positive multiple of fast_stride")
        ws = self.pool_windows
        if not ws or ws[0] < 1 or any(b <= a for a, b in zip(ws, ws[1:])):
            raise ValueError("pool_windows must be strictly increasing and >= 1")
        if self.bin_size < 2 or self.bin_size % 2:
            raise ValueError("bin_size must be even and >= 2")

    @property
    def alpha(self) -> int:
        """Ratio between the slow and fast strides."""
        return self.slow_stride // self.fast_stride

    @property
    def half_bin(self) -> int:
        return self.bin_size // 2

    def span(self, k: int) -> int:
        """Original frames covered by one feature step at scale ``k``."""
        return self.pool_windows[k] * self.slow_stride

    def scale_lengths(self, T: int) -> list:
        l1 = ceil_div(T, self.slow_stride)
        return [ceil_div(l1, w) for w in self.pool_windows]


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def interval_iou(a: PhaseSegment, b: PhaseSegment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union


def scale_index_to_frames(k: int, i: int, cfg: ScaleConfig, T: int) -> tuple:
    """Frame interval covered by feature ``i`` of scale ``k`` (left-aligned, clipped)."""
    n = cfg.scale_lengths(T)[k]
    if not 0 <= i < n:
        raise IndexError(f"feature index {i} outside [0, {n}) at scale {k}")
    span = cfg.span(k)
    return i * span, min((i + 1) * span, T)


def as_feature_sequence(x, dim: Optional[int] = None) -> np.ndarray:
    """Validate and return a ``(T, D)`` float32 frame array."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty (T, D) array, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"frame dimension {arr.shape[1]} != expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature sequence contains non-finite values")
    return arr


def frame_labels_from_segments(segments: Sequence[PhaseSegment]) -> list:
    labels = []
    for seg in segments:
        if seg.start != len(labels):
            raise ValueError("segments must be sorted and contiguous from frame 0")
        labels.extend([seg.label] * (seg.end - seg.start))
    return labels


def segments_from_frame_labels(frame_labels: Sequence[int]) -> list:
    if len(frame_labels) == 0:
        raise ValueError("frame label list is empty")
    segs = []
    start = 0
    for t in range(1, len(frame_labels) + 1):
        if t == len(frame_labels) or frame_labels[t] != frame_labels[start]:
            segs.append(PhaseSegment(start, t, frame_labels[start]))
            start = t
    return segs
