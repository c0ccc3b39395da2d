"""Three-panel scatter figure (H~, R~, B~ against n_v~) as a standalone SVG.

Written by hand so the output is byte-for-byte deterministic: every number is
formatted with a fixed number of decimals and nothing depends on fonts or
a plotting backend.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from .sweep import FitResult, SweepRecord

PANEL_W, PANEL_H = 340, 280
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 56, 16, 34, 44
PANELS = (("H", "H/n²"), ("R", "R/n²"), ("B", "B/n²"))
ORDER_STYLE = {
    5: ("circle", "#1f77b4"),
    6: ("square", "#d62728"),
    7: ("triangle", "#2ca02c"),
    8: ("diamond", "#9467bd"),
}
FALLBACK_STYLE = ("circle", "#555555")


def _f(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    k = 0
    while first + k * step <= hi + 1e-9 * step:
        ticks.append(round(first + k * step, 10))
        k += 1
    return ticks


def _range(values: list[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi - lo < 1e-12:
        pad = max(abs(lo) * 0.05, 0.5)
    else:
        pad = 0.08 * (hi - lo)
    return lo - pad, hi + pad


def _marker(shape: str, x: float, y: float, color: str, filled: bool) -> str:
    fill = color if filled else "none"
    style = f'class="point" fill="{fill}" stroke="{color}" stroke-width="1.2"'
    r = 3.6
    if shape == "square":
        return f'<rect x="{_f(x - r)}" y="{_f(y - r)}" width="{_f(2 * r)}" height="{_f(2 * r)}" {style}/>'
    if shape == "triangle":
        pts = f"{_f(x)},{_f(y - r)} {_f(x - r)},{_f(y + r)} {_f(x + r)},{_f(y + r)}"
        return f'<polygon points="{pts}" {style}/>'
    if shape == "diamond":
        pts = f"{_f(x)},{_f(y - r)} {_f(x + r)},{_f(y)} {_f(x)},{_f(y + r)} {_f(x - r)},{_f(y)}"
        return f'<polygon points="{pts}" {style}/>'
    return f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}" {style}/>'


def _value(r: SweepRecord, q: str) -> float:
    return {"H": r.H_norm, "R": r.R_norm, "B": r.B_norm}[q]


def _panel(records, fit: FitResult | None, q: str, label: str, ox: float, draw_fit: bool) -> list[str]:
    pts = [(r.n_v_norm, _value(r, q), r) for r in records if math.isfinite(_value(r, q))]
    xs = [p[0] for p in pts] or [0.0]
    ys = [p[1] for p in pts] or [0.0]
    x0, x1 = _range(xs + [0.0])
    y0, y1 = _range(ys)
    pw = PANEL_W - MARGIN_L - MARGIN_R
    ph = PANEL_H - MARGIN_T - MARGIN_B

    def sx(x):
        return ox + MARGIN_L + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN_T + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<g class="panel" id="panel-{q}">']
    out.append(
        f'<rect x="{_f(ox + MARGIN_L)}" y="{_f(MARGIN_T)}" width="{_f(pw)}" height="{_f(ph)}" '
        'fill="white" stroke="#333" stroke-width="1"/>'
    )
    for tx in _nice_ticks(x0, x1):
        X = sx(tx)
        out.append(f'<line x1="{_f(X)}" y1="{_f(MARGIN_T + ph)}" x2="{_f(X)}" y2="{_f(MARGIN_T + ph + 4)}" stroke="#333"/>')
        out.append(f'<text x="{_f(X)}" y="{_f(MARGIN_T + ph + 16)}" text-anchor="middle">{tx:g}</text>')
    for ty in _nice_ticks(y0, y1):
        Y = sy(ty)
        out.append(f'<line x1="{_f(ox + MARGIN_L - 4)}" y1="{_f(Y)}" x2="{_f(ox + MARGIN_L)}" y2="{_f(Y)}" stroke="#333"/>')
        out.append(f'<text x="{_f(ox + MARGIN_L - 6)}" y="{_f(Y + 4)}" text-anchor="end">{ty:g}</text>')
    out.append(
        f'<text x="{_f(ox + MARGIN_L + pw / 2)}" y="{_f(PANEL_H - 8)}" text-anchor="middle">'
        "violations n_v/n²</text>"
    )
    out.append(f'<text x="{_f(ox + MARGIN_L + pw / 2)}" y="20" text-anchor="middle" font-weight="bold">{escape(label)}</text>')

    if draw_fit and fit is not None:
        b0, slope = fit.line(q)
        if math.isfinite(b0) and math.isfinite(slope):
            out.append(f'<clipPath id="clip-{q}"><rect x="{_f(ox + MARGIN_L)}" y="{_f(MARGIN_T)}" width="{_f(pw)}" height="{_f(ph)}"/></clipPath>')
            out.append(
                f'<line x1="{_f(sx(x0))}" y1="{_f(sy(b0 + slope * x0))}" x2="{_f(sx(x1))}" '
                f'y2="{_f(sy(b0 + slope * x1))}" stroke="#222" stroke-dasharray="5,3" clip-path="url(#clip-{q})"/>'
            )
            out.append(
                f'<text class="slope" x="{_f(ox + MARGIN_L + 6)}" y="{_f(MARGIN_T + 14)}">'
                f"slope {slope:+.3f}, intercept {b0:.3f}</text>"
            )
    for x, y, r in pts:
        shape, color = ORDER_STYLE.get(r.order, FALLBACK_STYLE)
        out.append(_marker(shape, sx(x), sy(y), color, r.converged))
    out.append("</g>")
    return out


def render_scatter_svg(records, fit: FitResult | None = None) -> str:
    records = sorted(records, key=SweepRecord.sort_key)
    if not records:
        raise ValueError("no records to plot")
    draw_fit = len({r.n_v_norm for r in records}) >= 2
    width = PANEL_W * len(PANELS)
    height = PANEL_H + 26
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for k, (q, label) in enumerate(PANELS):
        parts.extend(_panel(records, fit, q, label, k * PANEL_W, draw_fit))
    orders = sorted({r.order for r in records})
    lx = 12
    for order in orders:
        shape, color = ORDER_STYLE.get(order, FALLBACK_STYLE)
        parts.append(_marker(shape, lx + 4, PANEL_H + 12, color, True))
        parts.append(f'<text x="{lx + 12}" y="{PANEL_H + 16}">order {order}</text>')
        lx += 80
    parts.append(f'<text x="{lx + 8}" y="{PANEL_H + 16}">hollow markers: not converged</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_scatter_svg(records, fit: FitResult | None, path: str | Path) -> None:
    text = render_scatter_svg(records, fit)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
