"""
Training a small localizer
==========================

Train on a handful of short videos, then look at the segment proposals the
model makes for a complete held-out video.
"""

# %%
import numpy as np

from phaseloc.core import PhaseSegment, Proposal, ScaleConfig
from phaseloc.featio import SynthSpec, generate_video
from phaseloc.localizer import soft_nms
from phaseloc.trainer import TrainConfig, train

spec = SynthSpec(seed=7, duration_range_per_phase=[(12, 20)] * 5)
train_set = [generate_video(spec, i, f"train_{i:03d}") for i in range(8)]
held_out = generate_video(spec, 10000, "test_000")
cfg = ScaleConfig(bin_size=12)

# %%
# One video per Adam step.  Every epoch also sees each video reversed and
# one truncated, mirrored clip of it.
losses = []
model = train(train_set, cfg, TrainConfig(epochs=15),
              init_rng=np.random.default_rng(0), shuffle_rng=np.random.default_rng(1),
              log_fn=lambda r: losses.append(r["total"]) if r["video"] == "*" else None)
print("epoch losses:", " ".join(f"{x:.2f}" for x in losses))

# %%
# Every feature position at every scale proposes one segment; soft-NMS then
# decays overlapping proposals of the same phase.
start, end, label, score, scale = model.raw_proposals(held_out.features)
print(len(start), "raw proposals")
proposals = [Proposal(PhaseSegment(int(s), int(e), int(c)), float(p), int(k))
             for s, e, c, p, k in zip(start, end, label, score, scale)]
kept = soft_nms(proposals)
for p in kept[:8]:
    print(f"  phase {p.label} [{p.start:3d}, {p.end:3d})  score {p.score:.2f}  scale {p.scale}")
print("truth:", [(s.label, s.start, s.end) for s in held_out.segments])
