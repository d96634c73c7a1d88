"""Online inference on pseudo-complete videos and offline rectification."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import PhaseSegment, Proposal, ceil_div
from .localizer import soft_nms_arrays


@dataclass(frozen=True)
class AugmentConfig:
    replication: int = 16
    max_len: int = 512
    mirror: bool = True
    duplicate: bool = True
    downsample: bool = True

    def __post_init__(self):
        if self.replication < 0 or self.max_len < 1:
            raise ValueError("replication must be >= 0 and max_len >= 1")


@dataclass(frozen=True)
class StreamConfig:
    augment: AugmentConfig = AugmentConfig()
    nms_sigma: float = 0.5
    score_threshold: float = 0.15
    carry_forward: bool = False


@dataclass
class PseudoComplete:
    frames: np.ndarray        # V_p
    index_map: np.ndarray     # V_p position -> original frame
    center_range: tuple       # half-open range of V_p positions taken from the duplicated block
    step: int                 # down-sampling step n
    dup_map: np.ndarray       # V_d position -> original frame

    def to_original(self, start, end):
        """Map half-open V_p frame intervals to the original frames they were built from."""
        start = np.asarray(start)
        end = np.asarray(end)
        m = len(self.dup_map)
        u = start * self.step
        v = np.minimum(end * self.step, m) - 1
        peak = self._peak()
        lo = np.minimum(self.dup_map[u], self.dup_map[v])
        hi = self.dup_map[np.clip(peak, u, v)]
        return lo, hi + 1

    def _peak(self):
        return int(np.argmax(self.dup_map)) if len(self.dup_map) else 0


def build_pseudo_complete(buffer, cfg: AugmentConfig = AugmentConfig()) -> PseudoComplete:
    """Mirror the past around the current frame, duplicate it and down-sample.

    ``V_d = x_1..x_{t-1} ++ [x_t] * r ++ x_{t-1}..x_1``; a disabled stage is
    skipped (no duplication means a single copy of ``x_t``).
    """
    buf = np.asarray(buffer)
    t = len(buf)
    if t < 1:
        raise ValueError("the stream buffer is empty")
    r = cfg.replication if cfg.duplicate else 1
    past = np.arange(t - 1)
    parts = [past, np.full(r, t - 1)]
    if cfg.mirror:
        parts.append(past[::-1])
    dup_map = np.concatenate(parts).astype(int)
    m = len(dup_map)
    n = max(1, ceil_div(m, cfg.max_len)) if cfg.downsample else 1
    keep = np.arange(0, m, n)
    center = (ceil_div(t - 1, n), ceil_div(t - 1 + r, n))
    return PseudoComplete(buf[dup_map[keep]], dup_map[keep], center, n, dup_map)


@dataclass
class StreamState:
    frames: list = field(default_factory=list)
    track: list = field(default_factory=list)
    last_proposals: list = field(default_factory=list)

    @property
    def t(self) -> int:
        return len(self.frames)


def step_proposals(model, pc: PseudoComplete, cfg: StreamConfig):
    """Filtered proposals on ``V_p`` as arrays, sorted by score."""
    if len(pc.frames) < model.cfg.slow_stride:
        empty = np.zeros(0, dtype=int)
        return empty, empty, empty, np.zeros(0), empty
    start, end, label, score, scale = model.raw_proposals(pc.frames)
    idx, sc = soft_nms_arrays(start, end, label, score, scale, cfg.nms_sigma, cfg.score_threshold)
    return start[idx], end[idx], label[idx], sc, scale[idx]


def online_step(state: StreamState, new_frame, model, cfg: StreamConfig = StreamConfig()):
    """Consume one frame; returns ``(prediction, state)`` with ``state`` updated in place."""
    x = np.asarray(new_frame, dtype=np.float32).reshape(-1)
    if x.shape[0] != model.dim:
        raise ValueError(f"frame dimension {x.shape[0]} != model dimension {model.dim}")
    state.frames.append(x)
    pc = build_pseudo_complete(np.stack(state.frames), cfg.augment)
    start, end, label, score, scale = step_proposals(model, pc, cfg)
    lo, hi = pc.center_range
    pred = None
    hit = np.flatnonzero((start < hi) & (end > lo))
    if lo < hi and len(hit):
        pred = int(label[hit[0]])
    if pred is None and cfg.carry_forward and state.track:
        pred = next((p for p in reversed(state.track) if p is not None), None)
    state.track.append(pred)
    if len(start):
        o_start, o_end = pc.to_original(start, end)
    else:
        o_start = o_end = start
    state.last_proposals = [Proposal(PhaseSegment(int(a), int(b), int(c)), float(s), int(k))
                            for a, b, c, s, k in zip(o_start, o_end, label, score, scale)]
    return pred, state


def rectify(state: StreamState) -> list:
    """Overwrite past track entries from proposals that end before the current frame.

    Where completed proposals overlap, the higher score wins (earlier start on
    ties).  Returns the ``(frame, new_label)`` pairs that changed.
    """
    t = state.t
    done = [p for p in state.last_proposals if p.end <= t - 1]
    # paint weakest first so the best proposal is written last
    done.sort(key=lambda p: (p.score, -p.start))
    new = list(state.track)
    for p in done:
        new[p.start:p.end] = [p.label] * (p.end - p.start)
    changes = [(n, new[n]) for n in range(len(new)) if new[n] != state.track[n]]
    state.track[:] = new
    return changes


def run_stream(features, model, cfg: StreamConfig = StreamConfig()):
    """Online predictions and the final rectified track from a single pass."""
    state = StreamState()
    online = []
    for x in np.asarray(features):
        pred, _ = online_step(state, x, model, cfg)
        online.append(pred)
        rectify(state)
    return online, list(state.track)


def run_online(features, model, cfg: StreamConfig = StreamConfig()) -> list:
    state = StreamState()
    return [online_step(state, x, model, cfg)[0] for x in np.asarray(features)]


def run_offline(features, model, cfg: StreamConfig = StreamConfig()) -> list:
    return run_stream(features, model, cfg)[1]
