"""Minimal SVG figures: line, uncertainty band, scatter and heatmap panels."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = {"fsp": "#1b7837", "laplace": "#2166ac", "map": "#b2182b", "gp": "#762a83", "data": "#777777"}


def _fmt(v):
    return f"{v:.2f}"


class Panel:
    """Linear axes over a padded data range, drawn into a ``width x height`` box."""

    def __init__(self, title="", width=420, height=300, margin=36):
        self.title = title
        self.width, self.height, self.margin = width, height, margin
        self.items = []
        self.xs, self.ys = [], []

    def _track(self, x, y):
        self.xs.append(np.asarray(x, dtype=float).ravel())
        self.ys.append(np.asarray(y, dtype=float).ravel())

    def line(self, x, y, color, width=1.5, opacity=1.0):
        self._track(x, y)
        self.items.append(("line", np.asarray(x, float), np.asarray(y, float), color, width, opacity))

    def band(self, x, lo, hi, color, opacity=0.25):
        self._track(x, lo)
        self._track(x, hi)
        self.items.append(("band", np.asarray(x, float), np.asarray(lo, float), np.asarray(hi, float), color, opacity))

    def scatter(self, x, y, color, r=2.5):
        self._track(x, y)
        self.items.append(("scatter", np.asarray(x, float), np.asarray(y, float), color, r))

    def heatmap(self, x, y, values, vmin=None, vmax=None):
        """``values`` has shape (len(y), len(x)); cells are colored white to green."""
        x, y = np.asarray(x, float), np.asarray(y, float)
        self._track(x, np.full_like(x, y.min()))
        self._track(x, np.full_like(x, y.max()))
        self.items.append(("heat", x, y, np.asarray(values, float), vmin, vmax))

    def _scales(self):
        xs = np.concatenate(self.xs) if self.xs else np.zeros(1)
        ys = np.concatenate(self.ys) if self.ys else np.zeros(1)
        xs, ys = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
        x0, x1 = xs.min(), xs.max()
        y0, y1 = ys.min(), ys.max()
        px = 0.05 * (x1 - x0 or 1.0)
        py = 0.05 * (y1 - y0 or 1.0)
        x0, x1, y0, y1 = x0 - px, x1 + px, y0 - py, y1 + py
        m, w, h = self.margin, self.width, self.height
        sx = lambda v: m + (np.asarray(v) - x0) / (x1 - x0) * (w - 2 * m)
        sy = lambda v: h - m - (np.asarray(v) - y0) / (y1 - y0) * (h - 2 * m)
        return sx, sy, (x0, x1, y0, y1)

    def render(self, ox=0, oy=0) -> str:
        sx, sy, (x0, x1, y0, y1) = self._scales()
        m, w, h = self.margin, self.width, self.height
        out = [f'<g transform="translate({ox},{oy})">']
        out.append(f'<rect x="{m}" y="{m}" width="{w - 2 * m}" height="{h - 2 * m}" fill="none" stroke="#000" stroke-width="0.5"/>')
        for kind, *args in self.items:
            if kind == "line":
                x, y, color, width, op = args
                pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(sx(x), sy(y)))
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}" stroke-opacity="{op}"/>')
            elif kind == "band":
                x, lo, hi, color, op = args
                top = [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(sx(x), sy(hi))]
                bot = [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(sx(x[::-1]), sy(lo[::-1]))]
                out.append(f'<path d="M {" L ".join(top + bot)} Z" fill="{color}" fill-opacity="{op}" stroke="none"/>')
            elif kind == "scatter":
                x, y, color, r = args
                for a, b in zip(sx(x), sy(y)):
                    out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="{r}" fill="{color}"/>')
            elif kind == "heat":
                x, y, vals, vmin, vmax = args
                lo = np.nanmin(vals) if vmin is None else vmin
                hi = np.nanmax(vals) if vmax is None else vmax
                dx = (x[1] - x[0]) if len(x) > 1 else 1.0
                dy = (y[1] - y[0]) if len(y) > 1 else 1.0
                cw = abs(sx(dx) - sx(0)) + 0.5
                ch = abs(sy(dy) - sy(0)) + 0.5
                for j, yv in enumerate(y):
                    for i, xv in enumerate(x):
                        t = 0.0 if hi == lo else float(np.clip((vals[j, i] - lo) / (hi - lo), 0, 1))
                        g = int(255 - 150 * t)
                        rb = int(255 - 230 * t)
                        out.append(f'<rect x="{_fmt(sx(xv - dx / 2))}" y="{_fmt(sy(yv + dy / 2))}" '
                                   f'width="{_fmt(cw)}" height="{_fmt(ch)}" fill="rgb({rb},{g},{rb})"/>')
        for v, anchor in ((x0, "start"), (x1, "end")):
            out.append(f'<text x="{_fmt(sx(v))}" y="{h - m + 14}" font-size="10" text-anchor="{anchor}">{v:.2g}</text>')
        for v in (y0, y1):
            out.append(f'<text x="{m - 4}" y="{_fmt(sy(v))}" font-size="10" text-anchor="end">{v:.2g}</text>')
        if self.title:
            out.append(f'<text x="{w / 2}" y="{m - 10}" font-size="12" text-anchor="middle">{escape(self.title)}</text>')
        out.append("</g>")
        return "\n".join(out)


def write_svg(path, panels, columns=None) -> None:
    """Lay panels out on a grid and write a standalone SVG document."""
    panels = list(panels)
    columns = columns or len(panels)
    rows = -(-len(panels) // columns)
    pw, ph = panels[0].width, panels[0].height
    W, H = pw * columns, ph * rows
    body = [p.render((i % columns) * pw, (i // columns) * ph) for i, p in enumerate(panels)]
    doc = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
           f'<rect width="{W}" height="{H}" fill="#fff"/>\n' + "\n".join(body) + "\n</svg>\n")
    with open(path, "w") as fh:
        fh.write(doc)
