"""Plain-text SVG charts for the sweep and the distribution comparison.

Coordinates are printed with fixed precision so identical inputs give
identical bytes.
"""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

from .core import CHANNEL_NAMES, Source
from .evaluation import DistributionReport, Regime, SweepRow, sweep_means

COLORS = {Regime.ZERO_SHOT: "#1f77b4", Regime.FINE_TUNED: "#2ca02c", Source.HUMAN: "#d62728", Source.ROBOT: "#1f77b4"}


def _f(v: float) -> str:
    return f"{v:.2f}"


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def _text(x: float, y: float, s: str, anchor: str = "middle", extra: str = "") -> str:
    return f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}"{extra}>{escape(s)}</text>'


def sweep_svg(rows: Sequence[SweepRow], width: int = 480, height: int = 320) -> str:
    """Mean test accuracy against training fraction, one line per regime."""
    means = sweep_means(rows)
    left, right, top, bottom = 50, 20, 30, 40
    pw, ph = width - left - right, height - top - bottom
    fractions = sorted({f for f, _ in means}) or [1.0]
    fmin, fmax = min(fractions + [0.0]), max(fractions)

    def sx(f):
        return left + (f - fmin) / ((fmax - fmin) or 1.0) * pw

    def sy(a):
        return top + (1.0 - a) * ph

    body = [_text(width / 2, 18, "Test accuracy vs. fraction of human training data")]
    body.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(tick)
        body.append(f'<line x1="{left - 4}" y1="{_f(y)}" x2="{left + pw}" y2="{_f(y)}" stroke="#ddd"/>')
        body.append(_text(left - 6, y + 4, f"{tick:.2f}", "end"))
    for f in fractions:
        body.append(_text(sx(f), top + ph + 16, f"{f:g}"))
    body.append(_text(left + pw / 2, height - 6, "fraction"))
    for k, regime in enumerate(Regime):
        pts = [(sx(f), sy(means[(f, regime)])) for f in fractions if (f, regime) in means]
        color = COLORS[regime]
        if pts:
            path = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
            body.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
            body += [f'<circle cx="{_f(x)}" cy="{_f(y)}" r="3" fill="{color}"/>' for x, y in pts]
        ly = top + 14 + 14 * k
        body.append(f'<line x1="{left + pw - 110}" y1="{ly - 4}" x2="{left + pw - 94}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        body.append(_text(left + pw - 90, ly, regime.value, "start"))
    return _svg(width, height, body)


def boxplot_svg(report: DistributionReport, width: int = 900, height: int = 360) -> str:
    """Grouped boxplots per channel, robot and human side by side.

    Each channel is scaled to its own range so that channels with very
    different units share one panel; whiskers are clipped to that range.
    """
    left, right, top, bottom = 20, 20, 40, 60
    pw, ph = width - left - right, height - top - bottom
    slot = pw / len(CHANNEL_NAMES)
    body = [_text(width / 2, 18, "Raw channel values by source (per-channel scale)")]
    for k, src in enumerate((Source.ROBOT, Source.HUMAN)):
        x = left + 10 + 80 * k
        body.append(f'<rect x="{x}" y="26" width="10" height="10" fill="{COLORS[src]}" fill-opacity="0.4" stroke="{COLORS[src]}"/>')
        body.append(_text(x + 14, 35, src.value, "start"))
    for c, ch in enumerate(CHANNEL_NAMES):
        boxes = [report.boxes[(ch, s)] for s in (Source.ROBOT, Source.HUMAN)]
        lo = min(min(b.whisker_low, b.q1) for b in boxes)
        hi = max(max(b.whisker_high, b.q3) for b in boxes)
        span = (hi - lo) or 1.0

        def sy(v):
            v = min(max(v, lo), hi)
            return top + (hi - v) / span * ph

        x0 = left + c * slot
        for k, (src, b) in enumerate(zip((Source.ROBOT, Source.HUMAN), boxes)):
            color = COLORS[src]
            bx = x0 + slot * (0.15 + 0.38 * k)
            bw = slot * 0.3
            mid = bx + bw / 2
            body.append(f'<line x1="{_f(mid)}" y1="{_f(sy(b.whisker_high))}" x2="{_f(mid)}" y2="{_f(sy(b.whisker_low))}" stroke="{color}"/>')
            body.append(f'<rect x="{_f(bx)}" y="{_f(sy(b.q3))}" width="{_f(bw)}" height="{_f(sy(b.q1) - sy(b.q3))}" '
                        f'fill="{color}" fill-opacity="0.4" stroke="{color}"/>')
            body.append(f'<line x1="{_f(bx)}" y1="{_f(sy(b.median))}" x2="{_f(bx + bw)}" y2="{_f(sy(b.median))}" stroke="black"/>')
        body.append(_text(x0 + slot / 2, top + ph + 16, ch))
        body.append(_text(x0 + slot / 2, top + ph + 30, f"ov {report.overlap[ch]:.2f}", extra=' fill="#555"'))
    return _svg(width, height, body)
