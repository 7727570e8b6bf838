"""Static SVG charts for cumulative-response curves and loading profiles.

Hand-rolled SVG keeps the output deterministic: identical inputs yield
byte-identical files (no timestamps, no library version strings).
Positive-jump curves are drawn blue, negative red, the no-jump reference
dashed, and the bootstrap band as a shaded region.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 62, 16, 34, 44

COLOR_POS = "#1f77b4"
COLOR_NEG = "#d62728"
COLOR_REF = "#555555"
COLOR_BAND = "#b0c4de"
PC_COLORS = ("#1f77b4", "#d62728", "#e8b820")


class SchemaMismatch(ValueError):
    """A table file does not match the expected dump schema."""


def _read_table(path: str, expected_header: str) -> list[list[str]]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != expected_header:
            raise SchemaMismatch(f"{path}: expected header {expected_header!r}, got {header!r}")
        rows = []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(expected_header.split(",")):
                raise SchemaMismatch(f"{path}: bad row {line!r}")
            rows.append(parts)
    return rows


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str,
                 xlim: tuple[float, float], ylim: tuple[float, float]):
        self.parts: list[str] = []
        self.xlim = xlim
        self.ylim = ylim
        self.parts.append(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">')
        self.parts.append(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>')
        self.parts.append(
            f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" '
            f'font-family="monospace" font-size="13">{title}</text>')
        self.parts.append(
            f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle" '
            f'font-family="monospace" font-size="11">{xlabel}</text>')
        self.parts.append(
            f'<text x="14" y="{HEIGHT / 2:.1f}" text-anchor="middle" '
            f'font-family="monospace" font-size="11" '
            f'transform="rotate(-90 14 {HEIGHT / 2:.1f})">{ylabel}</text>')

    def x(self, v: float) -> float:
        lo, hi = self.xlim
        span = hi - lo if hi > lo else 1.0
        return MARGIN_L + (v - lo) / span * (WIDTH - MARGIN_L - MARGIN_R)

    def y(self, v: float) -> float:
        lo, hi = self.ylim
        span = hi - lo if hi > lo else 1.0
        return HEIGHT - MARGIN_B - (v - lo) / span * (HEIGHT - MARGIN_T - MARGIN_B)

    def axes(self) -> None:
        x0, y0 = MARGIN_L, HEIGHT - MARGIN_B
        x1, y1 = WIDTH - MARGIN_R, MARGIN_T
        self.parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" '
                          f'stroke="#000000" stroke-width="1"/>')
        self.parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" '
                          f'stroke="#000000" stroke-width="1"/>')
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            xv = self.xlim[0] + frac * (self.xlim[1] - self.xlim[0])
            yv = self.ylim[0] + frac * (self.ylim[1] - self.ylim[0])
            xp, yp = self.x(xv), self.y(yv)
            self.parts.append(f'<line x1="{xp:.2f}" y1="{y0}" x2="{xp:.2f}" y2="{y0 + 4}" '
                              f'stroke="#000000"/>')
            self.parts.append(f'<text x="{xp:.2f}" y="{y0 + 16}" text-anchor="middle" '
                              f'font-family="monospace" font-size="10">{xv:.4g}</text>')
            self.parts.append(f'<line x1="{x0 - 4}" y1="{yp:.2f}" x2="{x0}" y2="{yp:.2f}" '
                              f'stroke="#000000"/>')
            self.parts.append(f'<text x="{x0 - 6}" y="{yp + 3:.2f}" text-anchor="end" '
                              f'font-family="monospace" font-size="10">{yv:.4g}</text>')

    def polyline(self, xs, ys, color: str, dashed: bool = False) -> None:
        pts = " ".join(f"{self.x(a):.2f},{self.y(b):.2f}"
                       for a, b in zip(xs, ys) if math.isfinite(a) and math.isfinite(b))
        if not pts:
            return
        dash = ' stroke-dasharray="6 4"' if dashed else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                          f'stroke-width="1.6"{dash}/>')

    def band(self, xs, lo, hi, color: str) -> None:
        fwd = [(a, b) for a, b in zip(xs, lo) if math.isfinite(a) and math.isfinite(b)]
        bwd = [(a, b) for a, b in zip(xs, hi) if math.isfinite(a) and math.isfinite(b)]
        if not fwd or not bwd:
            return
        pts = " ".join(f"{self.x(a):.2f},{self.y(b):.2f}" for a, b in fwd + bwd[::-1])
        self.parts.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.5" '
                          f'stroke="none"/>')

    def legend(self, entries: list[tuple[str, str, bool]]) -> None:
        x0 = MARGIN_L + 10
        y = MARGIN_T + 12
        for label, color, dashed in entries:
            dash = ' stroke-dasharray="6 4"' if dashed else ""
            self.parts.append(f'<line x1="{x0}" y1="{y - 4}" x2="{x0 + 24}" y2="{y - 4}" '
                              f'stroke="{color}" stroke-width="1.6"{dash}/>')
            self.parts.append(f'<text x="{x0 + 30}" y="{y}" font-family="monospace" '
                              f'font-size="10">{label}</text>')
            y += 14

    def render(self) -> bytes:
        return ("".join(self.parts) + "</svg>").encode("utf-8")


def _limits(values: list[float]) -> tuple[float, float]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return (-1.0, 1.0)
    lo, hi = min(finite), max(finite)
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.06 * (hi - lo)
    return lo - pad, hi + pad


def render_curve_chart(path: str, title: str) -> bytes:
    """Chart for a ``minute,pos_mean,neg_mean,ref_mean,band_lo,band_hi`` dump."""
    rows = _read_table(path, "minute,pos_mean,neg_mean,ref_mean,band_lo,band_hi")

    def col(i: int) -> list[float]:
        return [float(r[i]) if r[i] != "" else math.nan for r in rows]

    minutes = col(0)
    pos, neg, ref = col(1), col(2), col(3)
    band_lo, band_hi = col(4), col(5)
    have_band = any(math.isfinite(v) for v in band_lo)
    if not have_band:
        warnings.warn(f"{path}: band columns empty; rendering curves only", RuntimeWarning)

    ylim = _limits(pos + neg + ref + band_lo + band_hi)
    canvas = _Canvas(title, "minutes since jump-interval start", "cumulative IV change (pts)",
                     (min(minutes), max(minutes)), ylim)
    if have_band:
        canvas.band(minutes, band_lo, band_hi, COLOR_BAND)
    canvas.axes()
    canvas.polyline(minutes, ref, COLOR_REF, dashed=True)
    canvas.polyline(minutes, pos, COLOR_POS)
    canvas.polyline(minutes, neg, COLOR_NEG)
    canvas.legend([("positive jumps", COLOR_POS, False),
                   ("negative jumps", COLOR_NEG, False),
                   ("no-jump reference", COLOR_REF, True)])
    return canvas.render()


def render_loadings_chart(path: str, maturity: str, title: str) -> bytes:
    """Chart of the rotated loading profiles for one maturity."""
    rows = [r for r in _read_table(path, "maturity,component,bin_lo,loading")
            if r[0] == maturity]
    if not rows:
        raise SchemaMismatch(f"{path}: no rows for maturity {maturity!r}")
    comps: dict[str, list[tuple[float, float]]] = {}
    for _mat, comp, bin_lo, loading in rows:
        comps.setdefault(comp, []).append((float(bin_lo), float(loading)))
    all_vals = [v for pts in comps.values() for _, v in pts]
    xs_all = [x for pts in comps.values() for x, _ in pts]
    canvas = _Canvas(title, "moneyness bin (lower edge)", "loading",
                     (min(xs_all), max(xs_all)), _limits(all_vals))
    canvas.axes()
    legend = []
    for i, comp in enumerate(sorted(comps)):
        pts = sorted(comps[comp])
        color = PC_COLORS[i % len(PC_COLORS)]
        canvas.polyline([p[0] for p in pts], [p[1] for p in pts], color)
        legend.append((comp, color, False))
    canvas.legend(legend)
    return canvas.render()
