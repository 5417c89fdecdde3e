"""Minimal deterministic SVG line charts (log-scale y axis)."""
from __future__ import annotations

import math

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=30, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def line_chart(series: dict, title: str, xlabel: str, ylabel: str) -> str:
    """Render ``{label: (xs, ys)}`` as an SVG string; y is plotted as log10.

    Non-positive or non-finite y values are skipped. Output depends only on
    the inputs, so re-plotting identical data gives identical bytes.
    """
    pts = {}
    for label, (xs, ys) in series.items():
        keep = [(float(x), math.log10(y)) for x, y in zip(xs, ys)
                if math.isfinite(float(x)) and math.isfinite(float(y)) and y > 0]
        pts[label] = keep
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = math.floor(min(ally)), math.ceil(max(ally))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN["top"] + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2 - MARGIN["right"] / 2:.2f}" y="18" text-anchor="middle">{_esc(title)}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
        'fill="none" stroke="black"/>',
    ]
    for xt in _nice_ticks(x0, x1):
        out.append(f'<line x1="{_fmt(sx(xt))}" y1="{MARGIN["top"] + ph}" x2="{_fmt(sx(xt))}" '
                   f'y2="{MARGIN["top"] + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(sx(xt))}" y="{MARGIN["top"] + ph + 18}" '
                   f'text-anchor="middle">{xt:.4g}</text>')
    for e in range(int(y0), int(y1) + 1):
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{_fmt(sy(e))}" x2="{MARGIN["left"] + pw}" '
                   f'y2="{_fmt(sy(e))}" stroke="#dddddd"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{_fmt(sy(e) + 4)}" '
                   f'text-anchor="end">1e{e}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.2f}" y="{HEIGHT - 12}" '
               f'text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.2f})">{_esc(ylabel)}</text>')
    for k, (label, p) in enumerate(pts.items()):
        color = COLORS[k % len(COLORS)]
        if p:
            path = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in p)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = MARGIN["top"] + 12 + 18 * k
        lx = MARGIN["left"] + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" '
                   'stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_chart(path, series: dict, title: str, xlabel: str, ylabel: str = "loss") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(line_chart(series, title, xlabel, ylabel))
