"""
Streaming inference
===================

Online, only the frames seen so far are available.  Each step mirrors that
past around the current frame, repeats the current frame, and localizes the
resulting pseudo-complete video.  Completed segments then rewrite the past.
"""

# %%
import numpy as np

from phaseloc.core import ScaleConfig
from phaseloc.featio import SynthSpec, generate_video
from phaseloc.metrics import evaluate
from phaseloc.ribbon import render_ribbon
from phaseloc.streamer import AugmentConfig, StreamConfig, build_pseudo_complete, run_stream
from phaseloc.trainer import TrainConfig, train

# %%
# The pseudo-complete video for a three-frame buffer with two copies of the
# current frame.
x = np.array([[1.0], [2.0], [3.0]])
pc = build_pseudo_complete(x, AugmentConfig(replication=2))
print(pc.frames[:, 0], "centre positions", pc.center_range)

# %%
spec = SynthSpec(seed=7, duration_range_per_phase=[(12, 20)] * 5)
model = train([generate_video(spec, i) for i in range(8)], ScaleConfig(bin_size=12), TrainConfig(epochs=15),
              init_rng=np.random.default_rng(0), shuffle_rng=np.random.default_rng(1))
video = generate_video(spec, 10000, "test_000")

# %%
# On a model this small, rectification can hurt as well as help.  The
# acceptance tests compare the two modes on the full benchmark.
online, offline = run_stream(video.features, model, StreamConfig())
for name, track in (("online", online), ("offline", offline)):
    r = evaluate(track, video.frame_labels)
    print(f"{name:8s} AC {r.accuracy:.3f}  PR {r.precision:.3f}  RE {r.recall:.3f}  JA {r.jaccard:.3f}")

# %%
# A colour ribbon per track, with the ground truth underneath.
render_ribbon([("online", online), ("offline", offline)], video.frame_labels, "ribbon.svg",
              [f"phase {i}" for i in range(spec.num_phases)])
print("wrote ribbon.svg")
