"""Deterministic CSV, JSON and SVG writers."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from typing import Sequence

import numpy as np

from .metrics import residual_at
from .problem import DopDefinition, Trajectory


def fmt(v) -> str:
    """Fixed 12-digit scientific notation; the same value always gives the same text."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v == 0.0:
        v = 0.0  # drop the sign of negative zero
    return f"{v:.12e}"


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([x if isinstance(x, str) else (str(x) if isinstance(x, (int, np.integer)) else fmt(x))
                    for x in row])
    return buf.getvalue()


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def json_text(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def trajectory_csv(dop: DopDefinition, traj: Trajectory, grid: int = 500) -> str:
    """States, inputs and residual components on a uniform time grid."""
    t = np.linspace(traj.t0, traj.tf, grid)
    x, _, u = traj.evaluate(t)
    eps = residual_at(dop, traj, t)
    names_x = list(dop.state_names) or [f"x{i}" for i in range(dop.n)]
    names_u = list(dop.input_names) or [f"u{i}" for i in range(dop.m)]
    header = ["t"] + names_x + names_u + [f"eps{j}" for j in range(dop.n_eq)]
    rows = np.vstack([t[None, :], x, u, eps]).T
    return csv_text(header, rows)


# ----- SVG ----------------------------------------------------------------------

class SvgPlot:
    """Minimal line/marker plot on linear or logarithmic axes."""

    def __init__(self, title="", xlabel="", ylabel="", logx=False, logy=False, width=640, height=420):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.logx, self.logy = logx, logy
        self.width, self.height = width, height
        self.series = []
        self.markers = []

    def line(self, x, y, label="", color="#1f77b4"):
        self.series.append((np.asarray(x, float), np.asarray(y, float), label, color))

    def points(self, x, y, radius, label="", color="#d62728"):
        self.markers.append((np.asarray(x, float), np.asarray(y, float), np.asarray(radius, float), label, color))

    def _tx(self, v, log):
        return np.log10(v) if log else v

    def render(self) -> str:
        xs, ys = [], []
        for x, y, *_ in self.series + self.markers:
            ok = np.isfinite(x) & np.isfinite(y)
            if self.logx:
                ok &= x > 0
            if self.logy:
                ok &= y > 0
            xs.append(self._tx(x[ok], self.logx))
            ys.append(self._tx(y[ok], self.logy))
        allx = np.concatenate(xs) if xs else np.zeros(0)
        ally = np.concatenate(ys) if ys else np.zeros(0)
        x0, x1 = (allx.min(), allx.max()) if allx.size else (0.0, 1.0)
        y0, y1 = (ally.min(), ally.max()) if ally.size else (0.0, 1.0)
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        L, R, T, B = 70, 20, 40, 50
        W, H = self.width - L - R, self.height - T - B

        def px(v):
            return L + W * (self._tx(v, self.logx) - x0) / (x1 - x0)

        def py(v):
            return T + H * (1 - (self._tx(v, self.logy) - y0) / (y1 - y0))

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}">',
               f'<rect x="{L}" y="{T}" width="{W}" height="{H}" fill="none" stroke="black"/>',
               f'<text x="{self.width / 2:.1f}" y="20" text-anchor="middle">{self.title}</text>',
               f'<text x="{L + W / 2:.1f}" y="{self.height - 10}" text-anchor="middle">{self.xlabel}</text>',
               f'<text x="15" y="{T + H / 2:.1f}" transform="rotate(-90 15 {T + H / 2:.1f})" '
               f'text-anchor="middle">{self.ylabel}</text>']
        for lo, hi, log, horiz in ((x0, x1, self.logx, True), (y0, y1, self.logy, False)):
            for v in np.linspace(lo, hi, 5):
                label = f"1e{v:.1f}" if log else f"{v:.3g}"
                if horiz:
                    p = L + W * (v - lo) / (hi - lo)
                    out.append(f'<text x="{p:.1f}" y="{T + H + 15}" font-size="10" text-anchor="middle">{label}</text>')
                else:
                    p = T + H * (1 - (v - lo) / (hi - lo))
                    out.append(f'<text x="{L - 5}" y="{p:.1f}" font-size="10" text-anchor="end">{label}</text>')
        for x, y, label, color in self.series:
            ok = np.isfinite(x) & np.isfinite(y) & ((x > 0) | (not self.logx)) & ((y > 0) | (not self.logy))
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
            out.append(f'<polyline fill="none" stroke="{color}" points="{pts}"><title>{label}</title></polyline>')
        for x, y, r, label, color in self.markers:
            for a, b, rr in zip(x, y, r):
                if not (np.isfinite(a) and np.isfinite(b)):
                    continue
                rad = rr if np.isfinite(rr) else 0.0
                out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="{rad:.6g}" fill="{color}" '
                           f'fill-opacity="0.6"><title>{label}</title></circle>')
        out.append("</svg>")
        return "\n".join(out) + "\n"
