import math

import numpy as np
import pytest

from conftest import tiny_instance
from oracles import positives_reference
from phaseloc import trainer
from phaseloc.core import ScaleConfig
from phaseloc.featio import LabeledVideo, SynthSpec, generate_video
from phaseloc.model import Model, checkpoint_bytes
from phaseloc.trainer import (LOSS_TERMS, NonFiniteGradient, OptimizerState, TrainConfig, TrainingDiverged,
                              assign_targets, backward_and_step, gradient_check, loss_and_grads, loss_terms,
                              reversed_video, stream_clip, train)


def test_positives_match_containment_scan(rng):
    for _ in range(50):
        cfg = ScaleConfig(slow_stride=2, pool_windows=(1, 2, 4), bin_size=int(rng.choice([4, 8, 12])))
        T = int(rng.integers(6, 60))
        n = int(rng.integers(1, 5))
        cuts = sorted(rng.choice(np.arange(1, T), min(n - 1, T - 1), replace=False))
        b = [0, *cuts, T]
        segs = [(b[j], b[j + 1], j % 3) for j in range(len(b) - 1)]
        v = LabeledVideo(np.zeros((T, 1)), segs)
        lengths = cfg.scale_lengths(T)
        for k, tg in enumerate(assign_targets(v, lengths, cfg)):
            ref = positives_reference(segs, T, cfg.span(k), lengths[k], cfg.half_bin)
            assert tg.positive.tolist() == ref


def test_single_segment_targets():
    cfg = ScaleConfig(slow_stride=1, pool_windows=(1,), bin_size=12)
    v = LabeledVideo(np.zeros((6, 2)), [(0, 6, 1)])
    (tg,) = assign_targets(v, cfg.scale_lengths(6), cfg)
    assert tg.positive.tolist() == [False, True, True, True, True, False]
    # start target is the slot holding frame 0, end target the slot holding frame 5
    for i in range(1, 5):
        assert i - cfg.half_bin + tg.start_slot[i] == 0
        assert i + 1 + tg.end_slot[i] == 5
    assert tg.g_start.tolist() == [1, 0, 0, 0, 0, 0] and tg.g_end.tolist() == [0, 0, 0, 0, 0, 1]


def test_straddling_position_is_negative():
    cfg = ScaleConfig(slow_stride=2, pool_windows=(1,), bin_size=8)
    v = LabeledVideo(np.zeros((12, 1)), [(0, 5, 0), (5, 12, 1)])
    (tg,) = assign_targets(v, cfg.scale_lengths(12), cfg)
    assert not tg.positive[2] and tg.mixed[2]
    assert tg.label[2] == -1


def _perfect_outputs(model, video):
    ms, outs, _, _ = model.forward(video.features)
    tgs = assign_targets(video, ms.lengths(), model.cfg)
    big = 60.0
    for o, tg in zip(outs, tgs):
        L, half = o["p_s"].shape
        o["p_s"] = np.where(o["smask"], 0.0, 0.0)
        o["p_e"] = np.where(o["emask"], 0.0, 0.0)
        for i in np.flatnonzero(tg.positive):
            o["p_s"][i, tg.start_slot[i]] = 1.0
            o["p_e"][i, tg.end_slot[i]] = 1.0
        o["start_logit"] = np.where(tg.g_start > 0, big, -big)
        o["end_logit"] = np.where(tg.g_end > 0, big, -big)
        o["g_s"] = 1 / (1 + np.exp(-o["start_logit"]))
        o["g_e"] = 1 / (1 + np.exp(-o["end_logit"]))
        P = o["g_cls"].shape[1]
        g = np.full((L, P), 1.0 / P)
        for i in np.flatnonzero(tg.positive):
            g[i] = 0.0
            g[i, tg.label[i]] = 1.0
        o["g_cls"] = g
    return outs, tgs


def test_perfect_predictions_have_zero_loss():
    cfg = ScaleConfig(slow_stride=1, pool_windows=(1,), bin_size=12)
    v = LabeledVideo(np.zeros((6, 2)), [(0, 6, 0)])
    model = Model.init(2, 2, cfg, fast_channels=2, hidden=3)
    outs, tgs = _perfect_outputs(model, v)
    total, terms, _ = loss_terms(outs, tgs, cfg, v.T)
    assert terms["ce_cls"] == 0 and terms["ce_local"] == 0 and terms["iou"] == 0
    assert terms["bce_global"] < 1e-20 and total >= 0


def test_uniform_classifier_costs_log_p_per_positive():
    cfg = ScaleConfig(slow_stride=1, pool_windows=(1,), bin_size=12)
    v = LabeledVideo(np.zeros((6, 2)), [(0, 6, 4)])
    model = Model.init(2, 5, cfg, fast_channels=2, hidden=3)
    outs, tgs = _perfect_outputs(model, v)
    outs[0]["g_cls"] = np.full_like(outs[0]["g_cls"], 0.2)
    _, terms, _ = loss_terms(outs, tgs, cfg, v.T)
    assert math.isclose(terms["ce_cls"], math.log(5))


@pytest.mark.filterwarnings("ignore:divide by zero")
def test_iou_term_uses_expected_boundaries():
    # one positive whose expected segment is [2, 8) against the truth [4, 10)
    cfg = ScaleConfig(slow_stride=1, pool_windows=(1,), bin_size=12)
    v = LabeledVideo(np.zeros((12, 1)), [(0, 4, 0), (4, 10, 1), (10, 12, 0)])
    model = Model.init(1, 2, cfg, fast_channels=2, hidden=3)
    outs, tgs = _perfect_outputs(model, v)
    tg = tgs[0]
    only = 6
    tg.positive[:] = False
    tg.positive[only] = True
    o = outs[0]
    o["p_s"][only] = 0.0
    o["p_s"][only, 2 - (only - cfg.half_bin)] = 1.0     # slot of frame 2
    o["p_e"][only] = 0.0
    o["p_e"][only, 7 - (only + 1)] = 1.0               # slot of frame 7, end edge 8
    s_hat, e_hat = trainer.expected_segment(o, 1, v.T)
    assert (s_hat[only], e_hat[only]) == (2.0, 8.0)
    _, terms, _ = loss_terms(outs, tgs, cfg, v.T)
    assert math.isclose(terms["iou"], 0.5)


def test_no_positives_is_logged(caplog):
    cfg = ScaleConfig(slow_stride=2, pool_windows=(1,), bin_size=2)
    v = LabeledVideo(np.zeros((4, 1)), [(0, 1, 0), (1, 3, 1), (3, 4, 0)])
    model = Model.init(1, 2, cfg, fast_channels=2, hidden=3)
    caplog.set_level("WARNING", logger="phaseloc.trainer")
    total, terms, _ = loss_and_grads(model, v)
    assert terms["ce_local"] == 0 and terms["iou"] == 0 and np.isfinite(total)
    assert "no positive" in caplog.text


def test_adam_single_step_oracle():
    params = {"w": np.zeros(1)}
    state = OptimizerState(lr=1e-3)
    backward_and_step(state, params, {"w": np.ones(1)})
    # bias-corrected first step: lr * 1 / (1 + eps)
    assert math.isclose(params["w"][0], -1e-3 / (1 + 1e-8), rel_tol=1e-12)
    backward_and_step(state, params, {"w": np.ones(1)})
    assert math.isclose(params["w"][0], -2e-3 / (1 + 1e-8), rel_tol=1e-9)


def test_adam_zero_gradient_and_nonfinite():
    params = {"w": np.array([0.5, -1.0])}
    state = OptimizerState()
    backward_and_step(state, params, {"w": np.zeros(2)})
    assert params["w"].tolist() == [0.5, -1.0]
    with pytest.raises(NonFiniteGradient) as err:
        backward_and_step(state, params, {"w": np.array([np.nan, 0.0])})
    assert err.value.name == "w"
    assert params["w"].tolist() == [0.5, -1.0]


def test_gradient_check_tiny_models():
    rng = np.random.default_rng(0)
    for _ in range(3):
        video, model = tiny_instance(rng)
        err, _ = gradient_check(model, video)
        assert err <= 1e-4


def test_reversed_video_swaps_boundaries():
    v = LabeledVideo(np.arange(10, dtype=float)[:, None], [(0, 3, 0), (3, 10, 1)], "a")
    r = reversed_video(v)
    assert r.segments == [(0, 7, 1), (7, 10, 0)]
    assert r.features[0, 0] == 9 and r.video_id == "a~rev"


def test_stream_clip_labels_follow_index_map():
    v = LabeledVideo(np.arange(10, dtype=float)[:, None], [(0, 3, 0), (3, 10, 1)], "a")
    clip = stream_clip(v, 5)
    src = clip.features[:, 0].astype(int)
    assert clip.frame_labels == [v.frame_labels[i] for i in src]
    assert clip.T == 2 * 4 + 16


def _small_data():
    spec = SynthSpec(duration_range_per_phase=[(6, 10)] * 5, feature_dim=4, noise_sigma=0.0)
    return [generate_video(spec, i, f"v{i}") for i in range(3)]


def test_training_reduces_loss_and_logs():
    data = _small_data()
    cfg = ScaleConfig(bin_size=8)
    log = []
    train(data, cfg, TrainConfig(epochs=6, fast_channels=4, hidden=8), log_fn=log.append)
    epochs = [r for r in log if r["video"] == "*"]
    assert len(epochs) == 6
    assert epochs[5]["total"] < epochs[1]["total"]
    steps = [r for r in log if r["video"] != "*"]
    assert set(steps[0]) == {"epoch", "video", "total", *LOSS_TERMS}


def test_training_is_deterministic():
    data = _small_data()
    cfg = ScaleConfig(bin_size=8)
    tc = TrainConfig(epochs=2, fast_channels=4, hidden=8)
    a = train(data, cfg, tc, init_rng=np.random.default_rng(5), shuffle_rng=np.random.default_rng(6))
    b = train(data, cfg, tc, init_rng=np.random.default_rng(5), shuffle_rng=np.random.default_rng(6))
    assert checkpoint_bytes(a) == checkpoint_bytes(b)


def test_training_errors(monkeypatch):
    with pytest.raises(ValueError):
        train([], ScaleConfig())
    data = _small_data()

    def bad(model, video, targets=None):
        return float("nan"), dict.fromkeys(LOSS_TERMS, 0.0), {}
    monkeypatch.setattr(trainer, "loss_and_grads", bad)
    with pytest.raises(TrainingDiverged) as err:
        train(data, ScaleConfig(bin_size=8), TrainConfig(epochs=1, fast_channels=2, hidden=3))
    assert err.value.epoch == 0 and err.value.params is not None
