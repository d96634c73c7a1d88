"""``phaseloc`` command line: synth, train, infer, eval, ribbon and stream.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O or file-format
error, 4 numerical divergence during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .core import frame_labels_from_segments
from .config import ConfigError, RunConfig, load_config, video_id, video_seed
from .featio import (FeatureFileError, LabeledVideo, generate_video, read_annotations, read_feature_file,
                     write_annotations, write_feature_file)
from .metrics import evaluate_dataset
from .model import load_checkpoint, save_checkpoint
from .ribbon import ribbon_svg
from .streamer import StreamState, online_step, rectify, run_online, run_stream
from .trainer import NonFiniteGradient, TrainingDiverged, train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("phaseloc")


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} exists and is not empty (use --force to overwrite)")
    names = cfg.phase_names()
    for split, n in (("train", cfg.data.num_train), ("test", cfg.data.num_test)):
        (out / split).mkdir(parents=True, exist_ok=True)
        videos = []
        for i in range(n):
            vid = video_id(split, i)
            v = generate_video(cfg.synth, video_seed(split, i), vid)
            write_feature_file(v.features, out / split / f"{vid}.splf")
            videos.append((vid, v.segments))
        write_annotations(out / f"{split}.json", names, videos)
    (out / "config.json").write_text(cfg.to_json())
    print(f"wrote {cfg.data.num_train} train and {cfg.data.num_test} test videos to {out}")
    return EXIT_OK


def _load_split(data_dir: Path, split: str) -> list:
    _, segs = read_annotations(data_dir / f"{split}.json")
    return [LabeledVideo(read_feature_file(data_dir / split / f"{vid}.splf"), s, vid)
            for vid, s in sorted(segs.items())]


def cmd_train(args) -> int:
    cfg = _config(args)
    ckpt = Path(args.out)
    if not ckpt.parent.is_dir():
        raise OSError(f"checkpoint directory {ckpt.parent} does not exist")
    log_path = Path(args.log) if args.log else ckpt.with_suffix(ckpt.suffix + ".log.jsonl")
    data = _load_split(Path(args.data_dir), "train")
    with open(log_path, "w") as fh:
        def log_fn(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if rec["video"] == "*":
                print(f"epoch {rec['epoch']:3d}  loss {rec['total']:.5f}", flush=True)
        model = train(data, cfg.scale, cfg.train, init_rng=cfg.rng("init"), shuffle_rng=cfg.rng("shuffle"),
                      log_fn=log_fn)
    save_checkpoint(model, ckpt)
    print(f"checkpoint written to {ckpt}")
    return EXIT_OK


def _infer_one(model, path, mode, stream_cfg):
    feats = read_feature_file(path)
    if mode == "online":
        labels = run_online(feats, model, stream_cfg)
    else:
        labels = run_stream(feats, model, stream_cfg)[1]
    return {"video": Path(path).stem, "mode": mode, "labels": labels}


def cmd_infer(args) -> int:
    cfg = _config(args)
    model = load_checkpoint(args.checkpoint)
    inputs = [Path(p) for p in args.features]
    out = Path(args.out)
    if len(inputs) > 1:
        out.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        tracks = list(pool.map(lambda p: _infer_one(model, p, args.mode, cfg.stream), inputs))
    for tr in tracks:
        dest = out / f"{tr['video']}.{args.mode}.json" if len(inputs) > 1 else out
        _dump_json(tr, dest)
    print(f"wrote {len(tracks)} {args.mode} track(s)")
    return EXIT_OK


def _read_track(path) -> dict:
    try:
        tr = json.loads(Path(path).read_text())
        return {"video": str(tr["video"]), "mode": str(tr.get("mode", "")), "labels": list(tr["labels"])}
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FeatureFileError(f"{path} is not a track file: {exc}") from None


def cmd_eval(args) -> int:
    cfg = _config(args)
    _, segs = read_annotations(args.annotations)
    preds, gts = {}, {}
    for p in args.tracks:
        tr = _read_track(p)
        if tr["video"] not in segs:
            raise UsageError(f"video {tr['video']!r} has no annotation")
        preds[tr["video"]] = tr["labels"]
        gts[tr["video"]] = frame_labels_from_segments(segs[tr["video"]])
    exclude = args.exclude if args.exclude is not None else cfg.eval.exclude
    report = evaluate_dataset(preds, gts, exclude)
    _dump_json(report.to_dict(), args.out)
    print(f"AC {report.accuracy:.4f}  PR {report.precision:.4f}  RE {report.recall:.4f}  JA {report.jaccard:.4f}")
    return EXIT_OK


def cmd_ribbon(args) -> int:
    cfg = _config(args)
    names, segs = read_annotations(args.annotations)
    tracks = [_read_track(p) for p in args.tracks]
    vids = {t["video"] for t in tracks}
    if len(vids) != 1:
        raise UsageError("ribbon tracks must all belong to one video")
    vid = vids.pop()
    if vid not in segs:
        raise UsageError(f"video {vid!r} has no annotation")
    gt = frame_labels_from_segments(segs[vid])
    svg = ribbon_svg([(t["mode"] or Path(p).stem, t["labels"]) for t, p in zip(tracks, args.tracks)], gt,
                     names, cfg.eval.palette)
    Path(args.out).write_text(svg)
    print(f"ribbon written to {args.out}")
    return EXIT_OK


def cmd_stream(args) -> int:
    """Frames arrive on stdin as little-endian float32 records of the model dimension."""
    cfg = _config(args)
    model = load_checkpoint(args.checkpoint)
    rec = 4 * model.dim
    src = sys.stdin.buffer
    out = sys.stdout
    state = StreamState()
    while True:
        buf = src.read(rec)
        if not buf:
            break
        if len(buf) < rec:
            raise FeatureFileError(f"truncated frame record ({len(buf)} of {rec} bytes)")
        x = np.frombuffer(buf, dtype="<f4")
        if not np.all(np.isfinite(x)):
            raise FeatureFileError(f"non-finite value in frame {state.t}")
        pred, _ = online_step(state, x, model, cfg.stream)
        changes = rectify(state)
        out.write(json.dumps({"t": state.t - 1, "online_pred": pred,
                              "rectified_changes": [{"frame": f, "new_label": lab} for f, lab in changes]}) + "\n")
        out.flush()
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # shared flags are accepted before or after the subcommand; defaults are filled in by main()
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON run config (default: $PHASELOC_CONFIG or built-in defaults)")
    common.add_argument("--seed", type=int, help="master seed; overrides every seeded component")
    common.add_argument("--threads", type=int, help="worker cap for per-video parallelism (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="phaseloc", description=__doc__.splitlines()[0], parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model on DATA_DIR/train")
    p.add_argument("data_dir")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSON-lines training log (default: <checkpoint>.log.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="predict phase tracks")
    p.add_argument("checkpoint")
    p.add_argument("features", nargs="+")
    p.add_argument("--mode", choices=("online", "offline"), default="online")
    p.add_argument("--out", required=True, help="track file, or a directory for several inputs")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="score tracks against annotations")
    p.add_argument("annotations")
    p.add_argument("tracks", nargs="+")
    p.add_argument("--exclude", type=int, nargs="*", help="phase ids left out of the macro averages")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ribbon", parents=[common], help="render tracks of one video as SVG")
    p.add_argument("annotations")
    p.add_argument("tracks", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ribbon)

    p = sub.add_parser("stream", parents=[common], help="online inference over float32 frames on stdin")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_stream)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("threads", 1), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrainingDiverged, NonFiniteGradient) as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:  # file-format errors are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
