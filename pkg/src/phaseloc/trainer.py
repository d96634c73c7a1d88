"""Target assignment, losses, native backpropagation and Adam training."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ScaleConfig, segments_from_frame_labels
from .encoder import encode_backward
from .localizer import heads_backward
from .model import PARAM_KEYS, Model

log = logging.getLogger(__name__)

LOSS_TERMS = ("ce_cls", "ce_local", "bce_global", "iou")


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, params=None, epoch=None, video=None):
        super().__init__(msg)
        self.params = params
        self.epoch = epoch
        self.video = video


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient in tensor {name!r}")
        self.name = name


# -- targets -----------------------------------------------------------------

@dataclass
class ScaleTargets:
    positive: np.ndarray      # bool (L,)
    label: np.ndarray         # int (L,), -1 where undefined
    start_slot: np.ndarray    # int (L,), index into the start side, -1 for negatives
    end_slot: np.ndarray
    seg_start: np.ndarray     # true segment bounds (frames) for each position, -1 for negatives
    seg_end: np.ndarray
    g_start: np.ndarray       # float (L,) boundary indicators
    g_end: np.ndarray
    mixed: np.ndarray         # bool (L,), span straddles a phase change



def assign_targets(video, ms_lengths, cfg: ScaleConfig) -> list:
    """Per-scale training targets for one labelled video.

    A position is positive when its frame span lies inside one segment and
    both of that segment's boundary features are reachable within the bin.
    """
    T = video.T
    labels = np.asarray(video.frame_labels)
    seg_id = np.empty(T, dtype=int)
    seg_s = np.array([s.start for s in video.segments])
    seg_e = np.array([s.end for s in video.segments])
    for j, s in enumerate(video.segments):
        seg_id[s.start:s.end] = j
    half = cfg.half_bin
    out = []
    for k, L in enumerate(ms_lengths):
        span = cfg.span(k)
        i = np.arange(L)
        first = np.minimum(i * span, T - 1)
        last = np.minimum((i + 1) * span, T) - 1
        contained = seg_id[first] == seg_id[last]
        sid = seg_id[first]
        ts = seg_s[sid] // span
        te = (seg_e[sid] - 1) // span
        d_s = i - ts
        d_e = te - i
        pos = contained & (d_s >= 1) & (d_s <= half) & (d_e >= 1) & (d_e <= half)
        g_s = np.zeros(L)
        g_e = np.zeros(L)
        g_s[seg_s // span] = 1.0
        g_e[(seg_e - 1) // span] = 1.0
        out.append(ScaleTargets(
            positive=pos,
            label=np.where(pos, labels[first], -1),
            start_slot=np.where(pos, ts - (i - half), -1),
            end_slot=np.where(pos, te - (i + 1), -1),
            seg_start=np.where(pos, seg_s[sid], -1),
            seg_end=np.where(pos, seg_e[sid], -1),
            g_start=g_s,
            g_end=g_e,
            mixed=~contained,
        ))
    return out


# -- loss --------------------------------------------------------------------

def _slot_edges(out, span, T):
    L = len(out["p_s"])
    a = np.clip(out["start_t"], 0, L - 1) * span
    b = np.minimum((np.clip(out["end_t"], 0, L - 1) + 1) * span, T)
    return a.astype(float), b.astype(float)


def expected_segment(out, span, T):
    """Probability-weighted start and end frames for every centre."""
    a, b = _slot_edges(out, span, T)
    return (out["p_s"] * a).sum(axis=1), (out["p_e"] * b).sum(axis=1)


def loss_terms(outs, targets, cfg: ScaleConfig, T: int, with_grad: bool = True):
    """Total loss, per-term breakdown and gradients on every head output.

    Gradients are returned as one dict per scale keyed like the head outputs
    (``s_logit``, ``e_logit``, ``start_logit``, ``end_logit``, ``cls_logit``).
    """
    n_pos = sum(int(t.positive.sum()) for t in targets)
    n_cls = n_pos + sum(int(t.mixed.sum()) for t in targets)
    n_all = sum(len(t.positive) for t in targets)
    terms = dict.fromkeys(LOSS_TERMS, 0.0)
    grads = []
    if n_pos == 0:
        log.warning("no positive positions; classification, local and IoU terms are zero")
    for k, (o, tg) in enumerate(zip(outs, targets)):
        L = len(tg.positive)
        span = cfg.span(k)
        d = {}
        # boundary indicators, every position
        z_s, z_e = o["start_logit"], o["end_logit"]
        bce = (np.logaddexp(0, z_s) - tg.g_start * z_s) + (np.logaddexp(0, z_e) - tg.g_end * z_e)
        terms["bce_global"] += bce.sum() / n_all
        d["start_logit"] = (o["g_s"] - tg.g_start) / n_all
        d["end_logit"] = (o["g_e"] - tg.g_end) / n_all

        d["cls_logit"] = np.zeros_like(o["cls_logit"])
        d["s_logit"] = np.zeros_like(o["s_logit"])
        d["e_logit"] = np.zeros_like(o["e_logit"])
        # straddling positions are pulled towards the uniform distribution (KL, so 0 at optimum)
        mix = np.flatnonzero(tg.mixed)
        if len(mix):
            gm = o["g_cls"][mix]
            P = gm.shape[1]
            terms["ce_cls"] += (-np.log(P) - np.log(gm).mean(axis=1)).sum() / n_cls
            d["cls_logit"][mix] = (gm - 1.0 / P) / n_cls
        idx = np.flatnonzero(tg.positive)
        if n_pos and len(idx):
            y = tg.label[idx]
            gc = o["g_cls"][idx]
            terms["ce_cls"] += -np.log(gc[np.arange(len(idx)), y]).sum() / n_cls
            dc = gc.copy()
            dc[np.arange(len(idx)), y] -= 1.0
            d["cls_logit"][idx] = dc / n_cls

            ps, pe = o["p_s"][idx], o["p_e"][idx]
            js, je = tg.start_slot[idx], tg.end_slot[idx]
            r = np.arange(len(idx))
            terms["ce_local"] += (-np.log(ps[r, js]) - np.log(pe[r, je])).sum() / n_pos
            dls = ps.copy()
            dls[r, js] -= 1.0
            dle = pe.copy()
            dle[r, je] -= 1.0

            a, b = _slot_edges(o, span, T)
            a, b = a[idx], b[idx]
            s_hat = (ps * a).sum(axis=1)
            e_hat = (pe * b).sum(axis=1)
            s_true = tg.seg_start[idx].astype(float)
            e_true = tg.seg_end[idx].astype(float)
            inter = np.minimum(e_hat, e_true) - np.maximum(s_hat, s_true)
            inter_pos = inter > 0
            inter = np.maximum(inter, 0.0)
            union = (e_hat - s_hat) + (e_true - s_true) - inter
            iou = inter / union
            terms["iou"] += (1.0 - iou).sum() / n_pos
            # d(inter)/d(e_hat), d(inter)/d(s_hat); exact ties take the symmetric subgradient
            di_de = np.where(e_hat < e_true, 1.0, np.where(e_hat == e_true, 0.5, 0.0)) * inter_pos
            di_ds = -np.where(s_hat > s_true, 1.0, np.where(s_hat == s_true, 0.5, 0.0)) * inter_pos
            diou_de = (di_de * union - inter * (1.0 - di_de)) / union ** 2
            diou_ds = (di_ds * union - inter * (-1.0 - di_ds)) / union ** 2
            gs_hat = -diou_ds[:, None]
            ge_hat = -diou_de[:, None]
            dls += gs_hat * ps * (a - s_hat[:, None])
            dle += ge_hat * pe * (b - e_hat[:, None])
            d["s_logit"][idx] = np.where(o["smask"][idx], dls, 0.0) / n_pos
            d["e_logit"][idx] = np.where(o["emask"][idx], dle, 0.0) / n_pos
        grads.append(d)
    total = sum(terms.values())
    return total, terms, grads


def loss_and_grads(model: Model, video, targets=None):
    ms, outs, enc_cache, head_caches = model.forward(video.features)
    if targets is None:
        targets = assign_targets(video, ms.lengths(), model.cfg)
    total, terms, dout = loss_terms(outs, targets, model.cfg, video.T)
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    dscales = []
    for d, cache in zip(dout, head_caches):
        g, df = heads_backward(model.params, cache, d)
        for k, v in g.items():
            grads[k] += v
        dscales.append(df)
    for k, v in encode_backward(model.params, enc_cache, dscales).items():
        grads[k] += v
    return total, terms, grads


def loss_value(model: Model, video, targets=None) -> float:
    ms, outs, _, _ = model.forward(video.features)
    if targets is None:
        targets = assign_targets(video, ms.lengths(), model.cfg)
    return loss_terms(outs, targets, model.cfg, video.T)[0]


# -- optimiser ---------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def backward_and_step(state: OptimizerState, params: dict, grads: dict) -> None:
    """One Adam update with bias correction, applied in place."""
    for name in PARAM_KEYS if set(PARAM_KEYS) <= set(grads) else sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradient(name)
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name in grads:
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- training loop -----------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    fast_channels: int = 8
    slow_channels: Optional[int] = None
    hidden: int = 16
    global_weight: float = 1.0
    shuffle: bool = True
    reverse_copies: bool = True
    stream_clips: int = 1


def reversed_video(video):
    """The same procedure played backwards; boundaries swap roles."""
    T = video.T
    segs = [type(s)(T - s.end, T - s.start, s.label) for s in reversed(video.segments)]
    return type(video)(video.features[::-1].copy(), segs, video.video_id + "~rev")


def stream_clip(video, t, augment=None):
    """Pseudo-complete clip of the first ``t`` frames, labelled through its index map."""
    from .streamer import AugmentConfig, build_pseudo_complete
    pc = build_pseudo_complete(video.features[:t], augment or AugmentConfig())
    labels = [video.frame_labels[i] for i in pc.index_map]
    return type(video)(pc.frames, segments_from_frame_labels(labels), f"{video.video_id}@{t}")


def train(dataset, cfg: ScaleConfig, tcfg: TrainConfig = TrainConfig(), init_rng=None, shuffle_rng=None,
          log_fn: Optional[Callable[[dict], None]] = None, model: Optional[Model] = None) -> Model:
    """Train encoder and heads jointly, one video per optimisation step."""
    if not dataset:
        raise ValueError("training needs at least one video")
    dim = dataset[0].features.shape[1]
    num_phases = 1 + max(s.label for v in dataset for s in v.segments)
    if model is None:
        model = Model.init(dim, num_phases, cfg, tcfg.fast_channels, tcfg.slow_channels, tcfg.hidden,
                           init_rng if init_rng is not None else np.random.default_rng(0), tcfg.global_weight)
    state = OptimizerState(lr=tcfg.lr)
    if tcfg.reverse_copies:
        dataset = list(dataset) + [reversed_video(v) for v in dataset]
    shuffle_rng = shuffle_rng if shuffle_rng is not None else np.random.default_rng(1)
    targets = [assign_targets(v, cfg.scale_lengths(v.T), cfg) for v in dataset]
    n_base = len(dataset)
    for epoch in range(tcfg.epochs):
        # fresh streaming clips every epoch; they are appended after the full videos
        clips = [stream_clip(v, int(shuffle_rng.integers(cfg.slow_stride, v.T + 1)))
                 for v in dataset[:n_base] for _ in range(tcfg.stream_clips)]
        pool = dataset + clips
        order = shuffle_rng.permutation(len(pool)) if tcfg.shuffle else np.arange(len(pool))
        sums = dict.fromkeys(("total",) + LOSS_TERMS, 0.0)
        for j in order:
            video = pool[j]
            tg = targets[j] if j < n_base else assign_targets(video, cfg.scale_lengths(video.T), cfg)
            total, terms, grads = loss_and_grads(model, video, tg)
            if not np.isfinite(total):
                raise TrainingDiverged(f"loss became {total} at epoch {epoch}, video {video.video_id!r}",
                                       {k: v.copy() for k, v in model.params.items()}, epoch, video.video_id)
            backward_and_step(state, model.params, grads)
            sums["total"] += total
            for t in LOSS_TERMS:
                sums[t] += terms[t]
            if log_fn is not None:
                log_fn({"epoch": epoch, "video": video.video_id, "total": float(total),
                        **{t: float(terms[t]) for t in LOSS_TERMS}})
        mean = {k: v / len(pool) for k, v in sums.items()}
        log.info("epoch %d  %s", epoch, json.dumps({k: round(v, 5) for k, v in mean.items()}))
        if log_fn is not None:
            log_fn({"epoch": epoch, "video": "*", **{k: float(v) for k, v in mean.items()}})
    return model


def gradient_check(model: Model, video, h: float = 1e-4, floor: float = 1e-6, keys=None):
    """Compare analytic gradients with central differences on every parameter entry.

    Returns ``(max_relative_error, worst_key)``.
    """
    targets = assign_targets(video, model.cfg.scale_lengths(video.T), model.cfg)
    _, _, grads = loss_and_grads(model, video, targets)
    worst, worst_key = 0.0, None
    for name in keys or PARAM_KEYS:
        p = model.params[name]
        flat = p.reshape(-1)
        ga = grads[name].reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            fp = loss_value(model, video, targets)
            flat[j] = old - h
            fm = loss_value(model, video, targets)
            flat[j] = old
            num = (fp - fm) / (2 * h)
            err = abs(num - ga[j]) / max(abs(num), abs(ga[j]), floor)
            if err > worst:
                worst, worst_key = err, (name, j)
    return worst, worst_key
