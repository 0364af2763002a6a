"""Deterministic CSV and SVG rendering of run results."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .parser import format_number

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def to_csv(times, columns) -> str:
    """``columns`` is a list of (header, values); times go in the first column ``t``."""
    lines = [",".join(["t"] + [name for name, _ in columns])]
    for i, t in enumerate(times):
        lines.append(",".join([format_number(t)] + [format_number(values[i]) for _, values in columns]))
    return "\n".join(lines) + "\n"


def run_to_csv(run, variables=None) -> str:
    variables = list(variables) if variables else sorted(run.series)
    return to_csv(run.times, [(v, run.series[v]) for v in variables])


def nice_ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.floor(lo / step) * step
    ticks = []
    k = 0
    while first + k * step <= hi + step * 1e-9:
        ticks.append(round(first + k * step, 12))
        k += 1
    return ticks


def _tick_label(v):
    return f"{v:.6g}"


def svg_plot(times, columns, title="", width=640, height=400) -> str:
    """Line chart with one polyline per column; linear axes with tick labels."""
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    ys = [v for _, values in columns for v in values if math.isfinite(v)] or [0.0, 1.0]
    yticks = nice_ticks(min(0.0, min(ys)), max(ys))
    xticks = nice_ticks(min(times), max(times))
    x0, x1 = xticks[0], xticks[-1]
    y0, y1 = yticks[0], yticks[-1]

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for v in xticks:
        x = sx(v)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle">{_tick_label(v)}</text>')
    for v in yticks:
        y = sy(v)
        out.append(f'<line x1="{left - 5}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end">{_tick_label(v)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">t</text>')
    for i, (name, values) in enumerate(columns):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(t):.2f},{sy(v):.2f}" for t, v in zip(times, values) if math.isfinite(v))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def comparison_text(report, label_a="a", label_b="b") -> str:
    def fmt(v):
        return "none" if v is None else format_number(v)

    lines = [
        f"variable: {report.variable}",
        f"a: {label_a}",
        f"b: {label_b}",
        f"final_a: {fmt(report.values_a[-1])}",
        f"final_b: {fmt(report.values_b[-1])}",
        f"gap_pct_final: {fmt(report.gap_pct_final)}",
        f"divergence_month: {fmt(report.divergence_month)}",
        f"theta_rel: {fmt(report.theta_rel)}",
        f"eps_abs: {fmt(report.eps_abs)}",
    ]
    return "\n".join(lines) + "\n"
