"""Tiny deterministic SVG line charts with error bars."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
W, H = 640, 420
ML, MR, MT, MB = 70, 170, 40, 60


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.2e}"
    return f"{v:.4g}"


def _nice_ticks(lo, hi, k=5):
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / k))
    for mult in (1, 2, 5, 10):
        if (hi - lo) / (step * mult) <= k:
            step *= mult
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * abs(hi):
        ticks.append(round(t, 12))
        t += step
    return ticks


def line_chart(series, title="", xlabel="", ylabel="") -> str:
    """``series`` is a list of ``(label, xs, ys, errs)``; ``errs`` are half-widths
    (NaN entries are skipped)."""
    pts = [(x, y, e) for _, xs, ys, es in series for x, y, e in zip(xs, ys, es) if math.isfinite(y)]
    xs_all = sorted({float(p[0]) for p in pts}) or [0.0, 1.0]
    logx = xs_all[0] > 0 and xs_all[-1] / xs_all[0] >= 10
    tx = (lambda v: math.log10(v)) if logx else float
    x_lo, x_hi = tx(xs_all[0]), tx(xs_all[-1])
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    lows = [y - (e if math.isfinite(e) else 0) for _, y, e in pts] or [0.0]
    highs = [y + (e if math.isfinite(e) else 0) for _, y, e in pts] or [1.0]
    y_lo, y_hi = min(lows), max(highs)
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(x):
        return ML + (tx(x) - x_lo) / (x_hi - x_lo) * (W - ML - MR)

    def py(y):
        return H - MB - (y - y_lo) / (y_hi - y_lo) * (H - MT - MB)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.0f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<line x1="{ML}" y1="{H - MB}" x2="{W - MR}" y2="{H - MB}" stroke="black"/>',
        f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H - MB}" stroke="black"/>',
    ]
    for x in xs_all:
        X = px(x)
        out.append(f'<line x1="{_fmt(X)}" y1="{H - MB}" x2="{_fmt(X)}" y2="{H - MB + 5}" stroke="black"/>')
        out.append(
            f'<text x="{_fmt(X)}" y="{H - MB + 18}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{_tick_label(x)}</text>'
        )
    for y in _nice_ticks(y_lo, y_hi):
        Y = py(y)
        out.append(f'<line x1="{ML - 5}" y1="{_fmt(Y)}" x2="{ML}" y2="{_fmt(Y)}" stroke="black"/>')
        out.append(
            f'<text x="{ML - 8}" y="{_fmt(Y + 4)}" text-anchor="end" font-family="sans-serif" '
            f'font-size="11">{_tick_label(y)}</text>'
        )
    out.append(
        f'<text x="{(ML + W - MR) / 2:.0f}" y="{H - 15}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="18" y="{(MT + H - MB) / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {(MT + H - MB) / 2:.0f})">{escape(ylabel)}</text>'
    )
    for k, (label, xs, ys, es) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        good = [(x, y, e) for x, y, e in zip(xs, ys, es) if math.isfinite(y)]
        if len(good) > 1:
            path = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y, _ in good)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y, e in good:
            X, Y = px(x), py(y)
            if math.isfinite(e) and e > 0:
                y0, y1 = py(y - e), py(y + e)
                out.append(f'<line x1="{_fmt(X)}" y1="{_fmt(y0)}" x2="{_fmt(X)}" y2="{_fmt(y1)}" stroke="{color}"/>')
                for yy in (y0, y1):
                    out.append(
                        f'<line x1="{_fmt(X - 4)}" y1="{_fmt(yy)}" x2="{_fmt(X + 4)}" y2="{_fmt(yy)}" stroke="{color}"/>'
                    )
            out.append(f'<circle cx="{_fmt(X)}" cy="{_fmt(Y)}" r="3" fill="{color}"/>')
        ly = MT + 10 + 20 * k
        lx = W - MR + 15
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(
            f'<text x="{lx + 26}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(str(label))}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
