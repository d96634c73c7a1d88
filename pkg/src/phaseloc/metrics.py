"""Frame-level accuracy and per-phase precision / recall / Jaccard.

``None`` predictions count as wrong for accuracy and recall and never count
as a predicted positive for any phase.  Macro values average over the phases
that occur in the ground truth; a phase that is only predicted still gets a
per-phase row (precision 0, recall undefined).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass
class PhaseScores:
    precision: float
    recall: Optional[float]
    jaccard: float
    support: int


@dataclass
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    jaccard: float
    per_phase: dict = field(default_factory=dict)
    per_video: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_phase"] = {str(k): asdict(v) if isinstance(v, PhaseScores) else v
                          for k, v in self.per_phase.items()}
        return d


def _encode(track) -> np.ndarray:
    return np.array([-1 if p is None else int(p) for p in track], dtype=int)


def evaluate(pred: Sequence, gt: Sequence, exclude: Sequence[int] = ()) -> MetricReport:
    """Metrics for one video.  ``exclude`` drops phases (e.g. background) from the macro averages."""
    if len(pred) != len(gt):
        raise ValueError(f"prediction has {len(pred)} frames, ground truth {len(gt)}")
    if len(gt) == 0:
        raise ValueError("empty ground truth")
    p = _encode(pred)
    g = _encode(gt)
    acc = float(np.mean(p == g))
    per_phase = {}
    for c in sorted(set(g.tolist()) | set(p[p >= 0].tolist())):
        tp = int(np.sum((p == c) & (g == c)))
        n_pred = int(np.sum(p == c))
        n_gt = int(np.sum(g == c))
        union = int(np.sum((p == c) | (g == c)))
        per_phase[c] = PhaseScores(
            precision=tp / n_pred if n_pred else 0.0,
            recall=tp / n_gt if n_gt else None,
            jaccard=tp / union,
            support=n_gt,
        )
    macro = [c for c, s in per_phase.items() if s.support > 0 and c not in set(exclude)]
    if macro:
        pr = float(np.mean([per_phase[c].precision for c in macro]))
        re = float(np.mean([per_phase[c].recall for c in macro]))
        ja = float(np.mean([per_phase[c].jaccard for c in macro]))
    else:
        pr = re = ja = 0.0
    return MetricReport(acc, pr, re, ja, per_phase)


def evaluate_dataset(preds: dict, gts: dict, exclude: Sequence[int] = ()) -> MetricReport:
    """Average per-video macro metrics over videos (keys must match)."""
    if set(preds) != set(gts):
        raise ValueError("prediction and ground-truth video ids differ")
    if not gts:
        raise ValueError("no videos to evaluate")
    per_video = {vid: evaluate(preds[vid], gts[vid], exclude) for vid in sorted(gts)}
    reports = list(per_video.values())

    def mean(attr):
        return float(np.mean([getattr(r, attr) for r in reports]))

    # per-phase rows averaged over the videos in which each phase has support
    phases = sorted({c for r in reports for c, s in r.per_phase.items() if s.support > 0})
    per_phase = {}
    for c in phases:
        rows = [r.per_phase[c] for r in reports if c in r.per_phase and r.per_phase[c].support > 0]
        per_phase[c] = PhaseScores(
            precision=float(np.mean([s.precision for s in rows])),
            recall=float(np.mean([s.recall for s in rows])),
            jaccard=float(np.mean([s.jaccard for s in rows])),
            support=int(sum(s.support for s in rows)),
        )
    return MetricReport(mean("accuracy"), mean("precision"), mean("recall"), mean("jaccard"),
                        per_phase, {vid: {"accuracy": r.accuracy, "precision": r.precision,
                                          "recall": r.recall, "jaccard": r.jaccard}
                                    for vid, r in per_video.items()})
