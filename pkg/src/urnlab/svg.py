"""Minimal self-contained SVG line plots (fixed 800x600 viewBox, inline styles)."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

WIDTH, HEIGHT = 800, 600
_MARGIN = 60
_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def line_plot(series: Mapping[str, tuple[Sequence[float], Sequence[float]]], title: str = "",
              xlabel: str = "", ylabel: str = "") -> str:
    """Render one or more ``label -> (x, y)`` series as an SVG document string."""
    if not series:
        raise ValueError("nothing to plot")
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(min(ys.min(), 0.0)), float(ys.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0
    pw, ph = WIDTH - 2 * _MARGIN, HEIGHT - 2 * _MARGIN

    def px(x):
        return _MARGIN + (x - x0) / (x1 - x0) * pw

    def py(y):
        return HEIGHT - _MARGIN - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" style="fill:#ffffff"/>',
        f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{pw}" height="{ph}" style="fill:none;stroke:#000000;stroke-width:1"/>',
    ]
    for k in range(6):
        fx, fy = x0 + k * (x1 - x0) / 5, y0 + k * (y1 - y0) / 5
        out.append(f'<text x="{_fmt(px(fx))}" y="{HEIGHT - _MARGIN + 18}" style="font:11px sans-serif;text-anchor:middle">{_fmt(fx)}</text>')
        out.append(f'<text x="{_MARGIN - 6}" y="{_fmt(py(fy) + 4)}" style="font:11px sans-serif;text-anchor:end">{_fmt(fy)}</text>')
    for k, (label, (x, y)) in enumerate(series.items()):
        colour = _COLOURS[k % len(_COLOURS)]
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, y))
        out.append(f'<polyline points="{pts}" style="fill:none;stroke:{colour};stroke-width:2"/>')
        out.append(f'<text x="{WIDTH - _MARGIN - 4}" y="{_MARGIN + 16 + 16 * k}" style="font:12px sans-serif;text-anchor:end;fill:{colour}">{_escape(label)}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{_MARGIN / 2}" style="font:16px sans-serif;text-anchor:middle">{_escape(title)}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" style="font:13px sans-serif;text-anchor:middle">{_escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{HEIGHT / 2}" transform="rotate(-90 15 {HEIGHT / 2})" style="font:13px sans-serif;text-anchor:middle">{_escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_line_plot(path, series, **labels) -> None:
    with open(path, "w") as fh:
        fh.write(line_plot(series, **labels))
