"""Colour-coded phase ribbons rendered as standalone SVG."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

DEFAULT_PALETTE = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1",
    "#ff9da7", "#9c755f", "#bab0ac", "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78",
    "#2ca02c", "#98df8a", "#d62728", "#ff9896", "#9467bd", "#c5b0d5",
]
NONE_COLOR = "#c8c8c8"

BAND_H = 18
GAP = 6
LABEL_W = 110


def _runs(track):
    runs = []
    start = 0
    for t in range(1, len(track) + 1):
        if t == len(track) or track[t] != track[start]:
            runs.append((start, t, track[start]))
            start = t
    return runs


def ribbon_svg(tracks: Sequence[tuple], gt: Sequence[int], phase_names: Optional[Sequence[str]] = None,
               palette: Optional[Sequence[str]] = None) -> str:
    """SVG text with one band per ``(name, track)`` pair followed by the ground truth.

    Every frame is one horizontal unit; ``None`` frames are drawn hatched grey.
    """
    palette = list(DEFAULT_PALETTE if palette is None else palette)
    T = len(gt)
    bands = list(tracks) + [("ground truth", list(gt))]
    for name, tr in bands:
        if len(tr) != T:
            raise ValueError(f"track {name!r} has {len(tr)} frames, ground truth has {T}")
        for lab in tr:
            if lab is not None and not 0 <= lab < len(palette):
                raise ValueError(f"no palette entry for phase {lab}")
    used = sorted({lab for _, tr in bands for lab in tr if lab is not None})
    if phase_names is None:
        phase_names = [f"phase {i}" for i in range(max(used, default=-1) + 1)]

    height_bands = len(bands) * (BAND_H + GAP)
    legend_rows = len(used) + 1
    width = LABEL_W + T + 10
    height = height_bands + 10 + legend_rows * 16 + 6
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        '<defs><pattern id="none-hatch" width="4" height="4" patternUnits="userSpaceOnUse">'
        f'<rect width="4" height="4" fill="{NONE_COLOR}"/>'
        '<path d="M0,4 L4,0" stroke="#888888" stroke-width="1"/></pattern></defs>',
    ]
    for b, (name, tr) in enumerate(bands):
        y = b * (BAND_H + GAP)
        out.append(f'<g class="band" data-name="{escape(str(name))}" data-frames="{T}">')
        out.append(f'<text x="0" y="{y + BAND_H - 5}">{escape(str(name))}</text>')
        for s, e, lab in _runs(tr):
            fill = "url(#none-hatch)" if lab is None else palette[lab]
            out.append(f'<rect x="{LABEL_W + s}" y="{y}" width="{e - s}" height="{BAND_H}" fill="{fill}"/>')
        out.append("</g>")
    y = height_bands + 10
    out.append('<g class="legend">')
    for row, lab in enumerate(used + [None]):
        yy = y + row * 16
        fill = "url(#none-hatch)" if lab is None else palette[lab]
        name = "none" if lab is None else (phase_names[lab] if lab < len(phase_names) else f"phase {lab}")
        out.append(f'<rect x="{LABEL_W}" y="{yy}" width="12" height="12" fill="{fill}"/>')
        out.append(f'<text x="{LABEL_W + 18}" y="{yy + 10}">{escape(str(name))}</text>')
    out.append("</g></svg>")
    return "\n".join(out) + "\n"


def render_ribbon(tracks, gt, path, phase_names=None, palette=None) -> None:
    Path(path).write_text(ribbon_svg(tracks, gt, phase_names, palette))
