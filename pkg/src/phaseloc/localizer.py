"""Phase localization heads, boundary selection and Soft-NMS.

For a centre feature ``i`` the start side covers feature indices
``i - B/2 .. i - 1`` and the end side ``i + 1 .. i + B/2``.  Slots that
fall outside the sequence are masked out of the softmax rather than padded.
A proposal spans from the first frame of the chosen start feature to the
last frame of the chosen end feature.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn
from .core import PhaseSegment, Proposal

HEAD_KEYS = (
    "reg.conv.W", "reg.conv.b", "reg.start.W", "reg.start.b", "reg.end.W", "reg.end.b",
    "start.conv.W", "start.conv.b", "start.out.W", "start.out.b",
    "end.conv.W", "end.conv.b", "end.out.W", "end.out.b",
    "cls.conv.W", "cls.conv.b", "cls.out.W", "cls.out.b",
)


class DegenerateScaleError(ValueError):
    """Both sides of a bin are masked, i.e. the scale has a single feature."""


@dataclass
class LocalDistributions:
    p_start: np.ndarray
    p_end: np.ndarray
    start_mask: np.ndarray
    end_mask: np.ndarray

    @property
    def left_degenerate(self) -> bool:
        return not self.start_mask.any()

    @property
    def right_degenerate(self) -> bool:
        return not self.end_mask.any()


@dataclass
class GlobalScores:
    g_start: np.ndarray
    g_end: np.ndarray
    g_cls: np.ndarray


def init_head_params(channels: int, num_phases: int, bin_size: int, hidden: int = 16, rng=None) -> dict:
    rng = np.random.default_rng(0) if rng is None else rng
    half = bin_size // 2

    def conv(cin, cout):
        return rng.standard_normal((3, cin, cout)) * np.sqrt(2.0 / (3 * cin)), np.zeros(cout)

    def lin(cin, cout):
        return rng.standard_normal((cin, cout)) * np.sqrt(1.0 / cin), np.zeros(cout)

    p = {}
    # the bin conv sees each slot's feature and its difference to the centre
    p["reg.conv.W"], p["reg.conv.b"] = conv(2 * channels, hidden)
    p["reg.start.W"] = rng.standard_normal(hidden) * np.sqrt(1.0 / hidden)
    p["reg.start.b"] = np.zeros(half)
    p["reg.end.W"] = rng.standard_normal(hidden) * np.sqrt(1.0 / hidden)
    p["reg.end.b"] = np.zeros(half)
    for name, out in (("start", 1), ("end", 1), ("cls", num_phases)):
        p[f"{name}.conv.W"], p[f"{name}.conv.b"] = conv(channels, hidden)
        p[f"{name}.out.W"], p[f"{name}.out.b"] = lin(hidden, out)
    return p


def check_head_params(params: dict, channels: int, bin_size: int) -> None:
    missing = [k for k in HEAD_KEYS if k not in params]
    if missing:
        raise ValueError(f"head parameters missing: {missing}")
    hidden = params["reg.conv.W"].shape[2]
    if params["reg.conv.W"].shape[1] != 2 * channels:
        raise ValueError(f"regression head expects {params['reg.conv.W'].shape[1] // 2} channels, got {channels}")
    if params["reg.start.b"].shape != (bin_size // 2,) or params["reg.start.W"].shape != (hidden,):
        raise ValueError("regression head shape is inconsistent with the bin size")


def bin_masks(L: int, half: int):
    i = np.arange(L)[:, None]
    j = np.arange(half)[None, :]
    start_t = i - half + j
    end_t = i + 1 + j
    return start_t, end_t, start_t >= 0, end_t < L


def heads_forward(f: np.ndarray, params: dict, bin_size: int):
    """Run every head on one scale.  Returns ``(outputs, cache)``."""
    p = params
    L, C = f.shape
    half = bin_size // 2

    # bin of B+1 slots around every centre plus one slot of conv context per side
    padded = np.zeros((L + bin_size + 2, C))
    padded[half + 1:half + 1 + L] = f
    gidx = np.arange(L)[:, None] + np.arange(bin_size + 3)[None, :]
    slot = np.arange(bin_size + 3)[None, :]
    pos = gidx - half - 1
    valid = ((pos >= 0) & (pos < L) & (slot >= 1) & (slot <= bin_size + 1)).astype(f.dtype)[..., None]
    G = padded[gidx] * valid
    U = np.concatenate([G, (G - f[:, None, :]) * valid], axis=2)
    cols = np.concatenate([U[:, d:d + bin_size + 1] for d in range(3)], axis=2)
    Wr = p["reg.conv.W"].reshape(-1, p["reg.conv.W"].shape[2])
    zr = cols @ Wr + p["reg.conv.b"]
    hr = nn.relu(zr)
    s_logit = hr[:, :half] @ p["reg.start.W"] + p["reg.start.b"]
    e_logit = hr[:, half + 1:] @ p["reg.end.W"] + p["reg.end.b"]
    start_t, end_t, smask, emask = bin_masks(L, half)
    p_s = nn.masked_softmax(s_logit, smask)
    p_e = nn.masked_softmax(e_logit, emask)

    out = {"s_logit": s_logit, "e_logit": e_logit, "p_s": p_s, "p_e": p_e,
           "start_t": start_t, "end_t": end_t, "smask": smask, "emask": emask}
    cache = {"f": f, "zr": zr, "hr": hr, "cols": cols, "gidx": gidx, "valid": valid}
    for name in ("start", "end", "cls"):
        z, c = nn.conv1d(f, p[f"{name}.conv.W"], p[f"{name}.conv.b"])
        h = nn.relu(z)
        logit = h @ p[f"{name}.out.W"] + p[f"{name}.out.b"]
        cache[name] = (z, c, h)
        out[f"{name}_logit"] = logit
    out["start_logit"] = out["start_logit"][:, 0]
    out["end_logit"] = out["end_logit"][:, 0]
    out["g_s"] = nn.sigmoid(out["start_logit"])
    out["g_e"] = nn.sigmoid(out["end_logit"])
    out["g_cls"] = nn.softmax(out["cls_logit"])
    return out, cache


def heads_backward(params: dict, cache: dict, d: dict):
    """Backward through the heads of one scale.

    ``d`` holds gradients w.r.t. ``s_logit``, ``e_logit``, ``start_logit``,
    ``end_logit`` and ``cls_logit`` (missing keys mean zero).  Returns the
    parameter gradients and the gradient on the scale's features.
    """
    p = params
    f = cache["f"]
    L = len(f)
    g = {}
    df = np.zeros_like(f)

    half = len(p["reg.start.b"])
    B = 2 * half
    C = f.shape[1]
    hr = cache["hr"]
    dh = np.zeros_like(hr)
    for side, sl, key in (("start", slice(0, half), "s_logit"), ("end", slice(half + 1, B + 1), "e_logit")):
        dl = d.get(key)
        if dl is None:
            dl = np.zeros((L, half))
        g[f"reg.{side}.W"] = np.einsum("lsh,ls->h", hr[:, sl], dl)
        g[f"reg.{side}.b"] = dl.sum(axis=0)
        dh[:, sl] = dl[..., None] * p[f"reg.{side}.W"]
    dz = dh * (cache["zr"] > 0)
    Wr = p["reg.conv.W"].reshape(-1, p["reg.conv.W"].shape[2])
    H = Wr.shape[1]
    g["reg.conv.W"] = (cache["cols"].reshape(-1, Wr.shape[0]).T @ dz.reshape(-1, H)).reshape(p["reg.conv.W"].shape)
    g["reg.conv.b"] = dz.sum(axis=(0, 1))
    dcols = (dz @ Wr.T).reshape(L, B + 1, 3, 2 * C)
    dU = np.zeros((L, B + 3, 2 * C))
    for k in range(3):
        dU[:, k:k + B + 1] += dcols[:, :, k]
    valid = cache["valid"]
    ddiff = dU[..., C:] * valid
    dG = (dU[..., :C] + ddiff) * valid
    df -= ddiff.sum(axis=1)
    dpadded = np.zeros((L + B + 2, C))
    np.add.at(dpadded, cache["gidx"], dG)
    df += dpadded[half + 1:half + 1 + L]

    for name in ("start", "end", "cls"):
        z, c, h = cache[name]
        dl = d.get(f"{name}_logit")
        if dl is None:
            dl = np.zeros((L, p[f"{name}.out.W"].shape[1]))
        elif dl.ndim == 1:
            dl = dl[:, None]
        g[f"{name}.out.W"] = h.T @ dl
        g[f"{name}.out.b"] = dl.sum(axis=0)
        dz = (dl @ p[f"{name}.out.W"].T) * (z > 0)
        dfx, g[f"{name}.conv.W"], g[f"{name}.conv.b"] = nn.conv1d_backward(dz, p[f"{name}.conv.W"], c)
        df += dfx
    return g, df


def local_start_end(f_k: np.ndarray, i: int, bin_size: int, params: dict) -> LocalDistributions:
    L = len(f_k)
    if not 0 <= i < L:
        raise IndexError(f"centre {i} outside a scale of length {L}")
    out, _ = heads_forward(f_k, params, bin_size)
    loc = LocalDistributions(out["p_s"][i], out["p_e"][i], out["smask"][i], out["emask"][i])
    if loc.left_degenerate and loc.right_degenerate:
        raise DegenerateScaleError("scale has a single feature; both bin sides are masked")
    return loc


def global_scores(f_k: np.ndarray, params: dict, bin_size: int = 2) -> GlobalScores:
    if len(f_k) < 1:
        raise ValueError("empty feature sequence")
    out, _ = heads_forward(f_k, params, bin_size)
    return GlobalScores(out["g_s"], out["g_e"], out["g_cls"])


def select_boundaries(p_s, p_e, smask, emask, start_t, end_t, g_s, g_e, global_weight=1.0):
    """Vectorised boundary argmax for every centre of a scale.

    Start ties go to the earlier index and end ties to the later one, so the
    widest segment wins.  A fully masked side falls back to the centre.
    """
    L = len(p_s)
    centres = np.arange(L)
    comb_s = np.where(smask, p_s + global_weight * g_s[np.clip(start_t, 0, L - 1)], -np.inf)
    comb_e = np.where(emask, p_e + global_weight * g_e[np.clip(end_t, 0, L - 1)], -np.inf)
    js = comb_s.argmax(axis=1)
    je = comb_e.shape[1] - 1 - comb_e[:, ::-1].argmax(axis=1)
    ts = np.where(smask.any(axis=1), start_t[centres, js], centres)
    te = np.where(emask.any(axis=1), end_t[centres, je], centres)
    return ts, te


def propose_at(f_k, i, bin_size, local: LocalDistributions, glob: GlobalScores, span: int = 1,
               num_frames: Optional[int] = None, scale: int = 0, global_weight: float = 1.0) -> Proposal:
    """Build the proposal for centre ``i`` from already computed head outputs."""
    L = len(f_k)
    half = bin_size // 2
    T = L * span if num_frames is None else num_frames
    ts_cand = np.arange(i - half, i)
    te_cand = np.arange(i + 1, i + half + 1)
    t_s, t_e = i, i
    if local.start_mask.any():
        comb = np.where(local.start_mask, local.p_start + global_weight * glob.g_start[np.clip(ts_cand, 0, L - 1)],
                        -np.inf)
        t_s = int(ts_cand[int(np.argmax(comb))])
    if local.end_mask.any():
        comb = np.where(local.end_mask, local.p_end + global_weight * glob.g_end[np.clip(te_cand, 0, L - 1)],
                        -np.inf)
        t_e = int(te_cand[len(comb) - 1 - int(np.argmax(comb[::-1]))])
    label = int(np.argmax(glob.g_cls[i]))
    score = float(glob.g_cls[i, label] * 0.5 * (glob.g_start[t_s] + glob.g_end[t_e]))
    seg = PhaseSegment(t_s * span, min((t_e + 1) * span, T), label)
    return Proposal(seg, score, scale)


def propose_scale(out: dict, span: int, num_frames: int, scale: int, global_weight: float = 1.0):
    """Arrays ``(start, end, label, score, scale)`` for every centre of one scale."""
    ts, te = select_boundaries(out["p_s"], out["p_e"], out["smask"], out["emask"],
                               out["start_t"], out["end_t"], out["g_s"], out["g_e"], global_weight)
    g_cls = out["g_cls"]
    label = g_cls.argmax(axis=1)
    conf = g_cls[np.arange(len(g_cls)), label]
    score = conf * 0.5 * (out["g_s"][ts] + out["g_e"][te])
    start = ts * span
    end = np.minimum((te + 1) * span, num_frames)
    return start, end, label, score, np.full(len(ts), scale)


def proposals_from_arrays(start, end, label, score, scale) -> list:
    return [Proposal(PhaseSegment(int(a), int(b), int(c)), float(s), int(k))
            for a, b, c, s, k in zip(start, end, label, score, scale)]


def propose_all(ms, params: dict, cfg, global_weight: float = 1.0) -> list:
    """One proposal per (scale, centre) in frame coordinates of the encoded sequence."""
    props = []
    for k, f in enumerate(ms.scales):
        out, _ = heads_forward(f, params, cfg.bin_size)
        props.extend(proposals_from_arrays(*propose_scale(out, cfg.span(k), ms.num_frames, k, global_weight)))
    return props


def _pick(idx, score, start, scale, end):
    best = score[idx].max()
    cand = idx[score[idx] == best]
    if len(cand) > 1:
        order = np.lexsort((cand, end[cand], scale[cand], start[cand]))
        return cand[order[0]]
    return cand[0]


def soft_nms_arrays(start, end, label, score, scale, sigma=0.5, score_threshold=0.15):
    """Gaussian Soft-NMS applied per label.  Returns kept indices and their decayed scores."""
    start = np.asarray(start)
    end = np.asarray(end)
    label = np.asarray(label)
    scale = np.asarray(scale)
    score = np.array(score, dtype=np.float64)
    kept_idx, kept_score = [], []
    for c in np.unique(label):
        alive = np.flatnonzero((label == c) & (score >= score_threshold))
        while len(alive):
            sel = _pick(alive, score, start, scale, end)
            kept_idx.append(sel)
            kept_score.append(score[sel])
            alive = alive[alive != sel]
            if not len(alive):
                break
            inter = np.minimum(end[alive], end[sel]) - np.maximum(start[alive], start[sel])
            inter = np.maximum(inter, 0)
            union = (end[alive] - start[alive]) + (end[sel] - start[sel]) - inter
            iou = inter / union
            score[alive] = score[alive] * np.exp(-(iou * iou) / sigma)
            alive = alive[score[alive] >= score_threshold]
    kept_idx = np.asarray(kept_idx, dtype=int)
    kept_score = np.asarray(kept_score, dtype=np.float64)
    if len(kept_idx):
        order = np.lexsort((label[kept_idx], end[kept_idx], scale[kept_idx], start[kept_idx], -kept_score))
        kept_idx, kept_score = kept_idx[order], kept_score[order]
    return kept_idx, kept_score


def soft_nms(proposals, sigma: float = 0.5, score_threshold: float = 0.15) -> list:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not proposals:
        return []
    arr = [np.array([getattr(p, a) for p in proposals]) for a in ("start", "end", "label", "score", "scale")]
    idx, sc = soft_nms_arrays(*arr, sigma=sigma, score_threshold=score_threshold)
    return [Proposal(proposals[i].segment, float(s), proposals[i].scale) for i, s in zip(idx, sc)]
