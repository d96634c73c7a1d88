import io
import json
import sys

import numpy as np
import pytest

from phaseloc import cli
from phaseloc.config import ConfigError, RunConfig, config_from_dict, load_config, video_id, video_seed
from phaseloc.core import frame_labels_from_segments
from phaseloc.featio import encode_features, read_annotations, read_feature_file
from phaseloc.model import Model, save_checkpoint
from phaseloc.trainer import TrainingDiverged
from pipeline import end_to_end, run, write_config


def test_defaults():
    cfg = RunConfig()
    assert cfg.seed == 7 and cfg.synth.seed == 7
    assert (cfg.synth.num_phases, cfg.synth.feature_dim, cfg.synth.noise_sigma) == (5, 16, 0.3)
    assert (cfg.data.num_train, cfg.data.num_test) == (40, 20)
    assert cfg.train.epochs == 50 and cfg.train.lr == 1e-3
    assert cfg.stream.augment.replication == 16 and cfg.stream.augment.max_len == 512
    assert (cfg.stream.nms_sigma, cfg.stream.score_threshold) == (0.5, 0.15)


def test_round_trip_and_seed_override():
    cfg = config_from_dict(json.loads(RunConfig().with_seed(11).to_json()))
    assert cfg.seed == 11 and cfg.synth.seed == 11
    assert cfg.to_json() == RunConfig().with_seed(11).to_json()


def test_named_substreams_are_stable_and_distinct():
    cfg = RunConfig()
    a, b = cfg.rng("init").random(3), cfg.rng("init").random(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, cfg.rng("shuffle").random(3))
    assert not np.array_equal(a, cfg.with_seed(8).rng("init").random(3))


def test_unknown_and_bad_keys():
    with pytest.raises(ConfigError):
        config_from_dict({"sed": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"epoch": 3}})
    with pytest.raises(ConfigError):
        config_from_dict({"scale": {"bin_size": 5}})
    with pytest.raises(ConfigError):
        config_from_dict({"data": {"phase_names": ["a", "b"]}})


def test_env_variable(tmp_path, monkeypatch):
    path = write_config(tmp_path / "c.json")
    monkeypatch.setenv("PHASELOC_CONFIG", str(path))
    assert load_config().seed == 3
    monkeypatch.delenv("PHASELOC_CONFIG")
    assert load_config().seed == 7
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_video_naming():
    assert video_id("train", 4) == "train_004" and video_seed("train", 4) == 4
    assert video_seed("test", 4) == 10004


def test_synth_refuses_non_empty_dir(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "data"
    out.mkdir()
    (out / "keep").write_text("x")
    assert run("--config", cfg, "synth", "--out", out) == 2
    assert run("--config", cfg, "synth", "--out", out, "--force") == 0
    assert len(list((out / "train").glob("*.splf"))) == 3
    assert json.loads((out / "config.json").read_text())["seed"] == 3


def test_exit_codes(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "c.json")
    assert run("--config", tmp_path / "missing.json", "synth", "--out", tmp_path / "d") == 2
    assert run("--config", cfg, "infer", tmp_path / "nope.ckpt", tmp_path / "x.splf", "--out", tmp_path / "o") == 3
    with pytest.raises(SystemExit) as err:
        run("frobnicate")
    assert err.value.code == 2
    data = tmp_path / "data"
    assert run("--config", cfg, "synth", "--out", data) == 0
    assert run("--config", cfg, "train", data, "--out", tmp_path / "no" / "m.ckpt") == 3

    def diverge(*a, **k):
        raise TrainingDiverged(0, "v", {})
    monkeypatch.setattr(cli, "train", diverge)
    assert run("--config", cfg, "train", data, "--out", tmp_path / "m.ckpt") == 4


def test_pipeline_and_self_evaluation(tmp_path):
    out = end_to_end(tmp_path)
    tr = json.loads(out["tracks"][0].read_text())
    assert set(tr) == {"video", "mode", "labels"}
    assert "<svg" in out["ribbon"].read_text()
    # ground truth scored against itself
    _, segs = read_annotations(tmp_path / "data" / "test.json")
    paths = []
    for vid, s in segs.items():
        p = tmp_path / f"{vid}.gt.json"
        p.write_text(json.dumps({"video": vid, "mode": "gt", "labels": frame_labels_from_segments(s)}))
        paths.append(p)
    assert run("eval", tmp_path / "data" / "test.json", *paths, "--out", tmp_path / "self.json") == 0
    rep = json.loads((tmp_path / "self.json").read_text())
    assert rep["accuracy"] == rep["precision"] == rep["recall"] == rep["jaccard"] == 1.0


def test_stream_command(tmp_path, monkeypatch, capsys):
    model = Model.init(3, 2, RunConfig().scale, fast_channels=2, hidden=3, rng=np.random.default_rng(0))
    save_checkpoint(model, tmp_path / "m.ckpt")
    frames = np.random.default_rng(1).normal(size=(5, 3)).astype("<f4")
    monkeypatch.setattr(sys, "stdin", io.TextIOWrapper(io.BytesIO(frames.tobytes())))
    assert run("stream", tmp_path / "m.ckpt") == 0
    lines = [json.loads(s) for s in capsys.readouterr().out.splitlines()]
    assert [r["t"] for r in lines] == [0, 1, 2, 3, 4]
    assert all(set(r) == {"t", "online_pred", "rectified_changes"} for r in lines)
    monkeypatch.setattr(sys, "stdin", io.TextIOWrapper(io.BytesIO(frames.tobytes()[:-2])))
    assert run("stream", tmp_path / "m.ckpt") == 3


def test_infer_single_file(tmp_path):
    model = Model.init(3, 2, RunConfig().scale, fast_channels=2, hidden=3)
    save_checkpoint(model, tmp_path / "m.ckpt")
    (tmp_path / "v.splf").write_bytes(encode_features(np.zeros((30, 3), dtype=np.float32)))
    assert run("infer", tmp_path / "m.ckpt", tmp_path / "v.splf", "--mode", "offline",
               "--out", tmp_path / "v.json") == 0
    tr = json.loads((tmp_path / "v.json").read_text())
    assert tr["video"] == "v" and tr["mode"] == "offline"
    assert len(tr["labels"]) == len(read_feature_file(tmp_path / "v.splf"))
