"""Deterministic SVG rendering of a snippet with predicted modes.

Ground truth is green, the ego history gray, and predicted modes take the
palette colors in order: red, orange and yellow, then three spares. Mode
probabilities are written next to each mode's end point.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractError

GROUND_TRUTH = "#2ca02c"
HISTORY = "#7f7f7f"
MAP_COLOR = "#404040"
PALETTE = ("#d62728", "#ff7f0e", "#e6c300", "#9467bd", "#8c564b", "#e377c2")

_SIZE = 600
_MARGIN = 10.0


def _fmt(v):
    return f"{v:.2f}"


def _polyline(points, transform, color, width=1.5, dash=None, extra=""):
    pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in transform(np.asarray(points, dtype=float)))
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"'
            f'{dash_attr}{extra}/>')


def render_svg(snippet, modes=None, probabilities=None, segments: int = 1, comment: str = "") -> str:
    """SVG text for ``snippet`` and world-frame ``modes`` (K, steps, 2)."""
    modes = np.zeros((0, 1, 2)) if modes is None else np.asarray(modes, dtype=float)
    if modes.ndim != 3 or modes.shape[-1] != 2:
        raise ContractError(f"modes must be (K, steps, 2), got {modes.shape}")
    if len(modes) > len(PALETTE):
        raise ContractError(f"at most {len(PALETTE)} modes can be drawn, got {len(modes)}")
    T = snippet.T
    history = snippet.states[:T + 1, :2]
    future = snippet.states[T:(1 + segments) * T + 1, :2]
    pts = np.vstack([history, future] + [m for m in modes])
    lo, hi = pts.min(axis=0) - _MARGIN, pts.max(axis=0) + _MARGIN
    span = float(max(hi - lo))
    scale = _SIZE / span

    def transform(p):
        p = np.atleast_2d(p)
        return np.stack([(p[:, 0] - lo[0]) * scale, _SIZE - (p[:, 1] - lo[1]) * scale], axis=1)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
             f'viewBox="0 0 {_SIZE} {_SIZE}">',
             *([f"<!-- {comment} -->"] if comment else []),
             f'<rect x="0" y="0" width="{_SIZE}" height="{_SIZE}" fill="#ffffff"/>',
             '<g>']
    if snippet.scene_map is not None:
        for line in snippet.scene_map.boundaries:
            parts.append(_polyline(line, transform, MAP_COLOR, 1.0))
    parts.append(_polyline(history, transform, HISTORY, 2.0))
    parts.append(_polyline(future, transform, GROUND_TRUTH, 2.5))
    for k, mode in enumerate(modes):
        start = snippet.states[T:T + 1, :2]
        parts.append(_polyline(np.vstack([start, mode]), transform, PALETTE[k], 2.0,
                               extra=f' data-mode="{k}"'))
        if probabilities is not None:
            x, y = transform(mode[-1])[0]
            parts.append(f'<text x="{_fmt(x + 4)}" y="{_fmt(y)}" font-size="12" fill="{PALETTE[k]}">'
                         f'{float(probabilities[k]):.2f}</text>')
    parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_trajectories(snippet, prediction, path, probabilities=None, segments: int = 1, comment: str = "") -> Path:
    """Write the SVG for ``snippet`` with world-frame modes ``prediction`` (K, steps, 2) or None."""
    text = render_svg(snippet, prediction, probabilities, segments, comment)
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(text)
    return path
