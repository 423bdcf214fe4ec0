"""Minimal SVG emitters (line charts, box plots, heatmaps).

Pure functions from plain data to SVG text, so every figure is regenerable
from the logged CSVs without a plotting dependency.
"""

from __future__ import annotations

import numpy as np

W, H = 640, 480
ML, MR, MT, MB = 70, 20, 40, 55  # margins
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _esc(s: str) -> str:
    return (str(s).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


class _Canvas:
    def __init__(self, title: str, xlabel: str = "", ylabel: str = ""):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="sans-serif">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="16">'
            f'{_esc(title)}</text>',
        ]
        if xlabel:
            self.parts.append(
                f'<text x="{(ML + W - MR) / 2}" y="{H - 10}" text-anchor="middle" '
                f'font-size="13">{_esc(xlabel)}</text>')
        if ylabel:
            self.parts.append(
                f'<text x="18" y="{(MT + H - MB) / 2}" text-anchor="middle" '
                f'font-size="13" transform="rotate(-90 18 {(MT + H - MB) / 2})">'
                f'{_esc(ylabel)}</text>')

    def add(self, s: str) -> None:
        self.parts.append(s)

    def finish(self) -> str:
        self.parts.append("</svg>")
        return "\n".join(self.parts)


def _scales(xmin, xmax, ymin, ymax):
    if xmax <= xmin:
        xmax = xmin + 1.0
    if ymax <= ymin:
        ymax = ymin + 1.0

    def sx(x):
        return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR)

    def sy(y):
        return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB)

    return sx, sy


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n)


def _axes(c: _Canvas, sx, sy, xmin, xmax, ymin, ymax):
    c.add(f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
          f'fill="none" stroke="#333"/>')
    for t in _ticks(xmin, xmax):
        c.add(f'<line x1="{sx(t):.1f}" y1="{H - MB}" x2="{sx(t):.1f}" '
              f'y2="{H - MB + 5}" stroke="#333"/>')
        c.add(f'<text x="{sx(t):.1f}" y="{H - MB + 18}" text-anchor="middle" '
              f'font-size="11">{t:.3g}</text>')
    for t in _ticks(ymin, ymax):
        c.add(f'<line x1="{ML - 5}" y1="{sy(t):.1f}" x2="{ML}" y2="{sy(t):.1f}" '
              f'stroke="#333"/>')
        c.add(f'<text x="{ML - 8}" y="{sy(t):.1f}" text-anchor="end" '
              f'dominant-baseline="middle" font-size="11">{t:.3g}</text>')


def svg_lines(x, series: dict, title: str = "", xlabel: str = "",
              ylabel: str = "") -> str:
    """Multi-line chart; series maps a legend label to a y array."""
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    all_y = np.concatenate([v[np.isfinite(v)] for v in ys.values()]) if ys else np.array([0.0])
    if all_y.size == 0:
        all_y = np.array([0.0])
    xmin, xmax = float(x.min()), float(x.max())
    ymin, ymax = float(all_y.min()), float(all_y.max())
    pad = 0.05 * (ymax - ymin or 1.0)
    ymin, ymax = ymin - pad, ymax + pad
    c = _Canvas(title, xlabel, ylabel)
    sx, sy = _scales(xmin, xmax, ymin, ymax)
    _axes(c, sx, sy, xmin, xmax, ymin, ymax)
    for i, (name, y) in enumerate(ys.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x, y)
                       if np.isfinite(b))
        c.add(f'<polyline points="{pts}" fill="none" stroke="{color}" '
              f'stroke-width="1.5"/>')
        c.add(f'<text x="{W - MR - 8}" y="{MT + 16 + 16 * i}" text-anchor="end" '
              f'font-size="12" fill="{color}">{_esc(name)}</text>')
    return c.finish()


def svg_boxplot(groups: dict, title: str = "", ylabel: str = "") -> str:
    """Box plot per group: quartile box, median line, mean diamond,
    min/max whiskers, and the individual points."""
    names = list(groups.keys())
    vals = [np.asarray(list(groups[n]), dtype=float) for n in names]
    flat = np.concatenate(vals) if vals else np.array([0.0])
    ymin, ymax = float(flat.min()), float(flat.max())
    pad = 0.08 * (ymax - ymin or 1.0)
    ymin, ymax = ymin - pad, ymax + pad
    c = _Canvas(title, "", ylabel)
    sx, sy = _scales(0, len(names), ymin, ymax)
    _axes(c, sx, sy, 0, len(names), ymin, ymax)
    for i, (name, v) in enumerate(zip(names, vals)):
        cx = sx(i + 0.5)
        half = 0.3 * (sx(1) - sx(0))
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        mean = v.mean()
        c.add(f'<line x1="{cx:.1f}" y1="{sy(v.min()):.1f}" x2="{cx:.1f}" '
              f'y2="{sy(v.max()):.1f}" stroke="#666"/>')
        c.add(f'<rect x="{cx - half:.1f}" y="{sy(q3):.1f}" width="{2 * half:.1f}" '
              f'height="{abs(sy(q1) - sy(q3)):.1f}" fill="{PALETTE[i % len(PALETTE)]}" '
              f'fill-opacity="0.35" stroke="#333"/>')
        c.add(f'<line x1="{cx - half:.1f}" y1="{sy(med):.1f}" x2="{cx + half:.1f}" '
              f'y2="{sy(med):.1f}" stroke="#333" stroke-width="2"/>')
        c.add(f'<path d="M {cx:.1f} {sy(mean) - 5:.1f} l 5 5 l -5 5 l -5 -5 Z" '
              f'fill="#000"/>')
        for j, val in enumerate(v):
            jitter = (j / max(len(v) - 1, 1) - 0.5) * half
            c.add(f'<circle cx="{cx + jitter:.1f}" cy="{sy(val):.1f}" r="2.4" '
                  f'fill="#444" fill-opacity="0.6"/>')
        c.add(f'<text x="{cx:.1f}" y="{H - MB + 18}" text-anchor="middle" '
              f'font-size="12">{_esc(name)}</text>')
    return c.finish()


def _viridis(t: float) -> str:
    anchors = [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98),
               (253, 231, 37)]
    t = min(max(t, 0.0), 1.0) * (len(anchors) - 1)
    i = min(int(t), len(anchors) - 2)
    f = t - i
    rgb = [round(a + (b - a) * f) for a, b in zip(anchors[i], anchors[i + 1])]
    return f"rgb({rgb[0]},{rgb[1]},{rgb[2]})"


def svg_heatmap(matrix, extent: tuple[float, float, float, float],
                title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Heatmap of a 2D array over a box (x0, x1, y0, y1); row 0 is the
    bottom of the box (ascending y)."""
    M = np.asarray(matrix, dtype=float)
    x0, x1, y0, y1 = extent
    lo, hi = float(np.nanmin(M)), float(np.nanmax(M))
    c = _Canvas(title, xlabel, ylabel)
    sx, sy = _scales(x0, x1, y0, y1)
    ny, nx = M.shape
    cw = (sx(x1) - sx(x0)) / nx
    ch = (sy(y0) - sy(y1)) / ny
    for i in range(ny):
        for j in range(nx):
            t = 0.0 if hi == lo else (M[i, j] - lo) / (hi - lo)
            px = sx(x0) + j * cw
            py = sy(y0) - (i + 1) * ch
            c.add(f'<rect x="{px:.1f}" y="{py:.1f}" width="{cw + 0.5:.2f}" '
                  f'height="{ch + 0.5:.2f}" fill="{_viridis(t)}"/>')
    _axes(c, sx, sy, x0, x1, y0, y1)
    c.add(f'<text x="{W - MR}" y="{MT - 6}" text-anchor="end" font-size="11">'
          f'range [{lo:.3g}, {hi:.3g}]</text>')
    return c.finish()


def write_svg(path, svg: str) -> None:
    with open(path, "w") as f:
        f.write(svg)
