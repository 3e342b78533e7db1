"""Deterministic hand-written SVG charts.

The output depends only on the input values: fixed float formatting, no
timestamps, no random ids.  Bars and points carry ``data-*`` attributes with
their raw values so reports can be checked without rasterizing.
"""
from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

PALETTE = {"SUPERVISED": "#2e8b57", "UDA": "#3b6fb6", "SSDA": "#8c8c8c"}
FALLBACK = ("#c05a2b", "#7a4fa3", "#b59b1f", "#2b9ac0")

W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 64, 150, 36, 56


def _f(x: float) -> str:
    return f"{x:.2f}"


def _color(name: str, i: int) -> str:
    return PALETTE.get(name, FALLBACK[i % len(FALLBACK)])


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>',
        f'<text x="{W / 2:.0f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{(LEFT + W - RIGHT) / 2:.0f}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{(TOP + H - BOTTOM) / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(TOP + H - BOTTOM) / 2:.0f})">{escape(ylabel)}</text>',
    ]


def _y_axis(lines: list[str], y_max: float, ticks: int = 5, fmt: str = "{:.2f}") -> None:
    plot_h = H - TOP - BOTTOM
    x0 = LEFT
    lines.append(f'<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{H - BOTTOM}" stroke="#000"/>')
    lines.append(f'<line x1="{x0}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="#000"/>')
    for i in range(ticks + 1):
        v = y_max * i / ticks
        y = H - BOTTOM - plot_h * i / ticks
        lines.append(f'<line x1="{x0 - 4}" y1="{_f(y)}" x2="{x0}" y2="{_f(y)}" stroke="#000"/>')
        lines.append(f'<text x="{x0 - 6}" y="{_f(y + 4)}" text-anchor="end">{fmt.format(v)}</text>')


def _legend(lines: list[str], names: Sequence[str]) -> None:
    for i, name in enumerate(names):
        y = TOP + 10 + 18 * i
        x = W - RIGHT + 16
        lines.append(f'<rect x="{x}" y="{y - 9}" width="12" height="12" fill="{_color(name, i)}"/>')
        lines.append(f'<text x="{x + 18}" y="{y + 1}">{escape(name)}</text>')


def grouped_bars(groups: Sequence[str], series: Mapping[str, Mapping[str, float]], title: str,
                 xlabel: str, ylabel: str, y_max: float = 1.0) -> str:
    """One cluster per group label, one bar per series; missing values are skipped."""
    lines = _frame(title, xlabel, ylabel)
    _y_axis(lines, y_max)
    plot_w = W - LEFT - RIGHT
    plot_h = H - TOP - BOTTOM
    names = list(series)
    slot = plot_w / max(len(groups), 1)
    bar_w = slot * 0.8 / max(len(names), 1)
    for gi, g in enumerate(groups):
        gx = LEFT + gi * slot + slot * 0.1
        lines.append(f'<text x="{_f(LEFT + (gi + 0.5) * slot)}" y="{H - BOTTOM + 16}" '
                     f'text-anchor="middle">{escape(g)}</text>')
        for si, name in enumerate(names):
            if g not in series[name]:
                continue
            v = series[name][g]
            h = plot_h * min(max(v / y_max, 0.0), 1.0)
            x = gx + si * bar_w
            lines.append(
                f'<rect class="bar" data-series="{escape(name)}" data-group="{escape(g)}" data-value="{v:.6g}" '
                f'x="{_f(x)}" y="{_f(H - BOTTOM - h)}" width="{_f(bar_w)}" height="{_f(h)}" '
                f'fill="{_color(name, si)}"/>'
            )
    _legend(lines, names)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def scatter_frontier(points: Sequence[tuple[float, float, str]], front: Sequence[tuple[float, float]],
                     title: str, xlabel: str, ylabel: str) -> str:
    """All ``(cost, AR, series)`` points with the Pareto frontier drawn as a step line."""
    lines = _frame(title, xlabel, ylabel)
    costs = [p[0] for p in points] or [1.0]
    x_max = max(costs) * 1.05 or 1.0
    y_max = 1.0
    _y_axis(lines, y_max)
    plot_w = W - LEFT - RIGHT
    plot_h = H - TOP - BOTTOM

    def sx(c):
        return LEFT + plot_w * c / x_max

    def sy(a):
        return H - BOTTOM - plot_h * min(max(a / y_max, 0.0), 1.0)

    for i in range(6):
        c = x_max * i / 5
        lines.append(f'<text x="{_f(sx(c))}" y="{H - BOTTOM + 16}" text-anchor="middle">{c:.4g}</text>')
    names = sorted({p[2] for p in points})
    for c, a, name in points:
        lines.append(f'<circle class="point" data-series="{escape(name)}" data-cost="{c:.6g}" data-value="{a:.6g}" '
                     f'cx="{_f(sx(c))}" cy="{_f(sy(a))}" r="4" fill="{_color(name, names.index(name))}"/>')
    if front:
        path = [f"M {_f(sx(front[0][0]))} {_f(sy(front[0][1]))}"]
        for (c0, a0), (c1, a1) in zip(front[:-1], front[1:]):
            path.append(f"L {_f(sx(c1))} {_f(sy(a0))} L {_f(sx(c1))} {_f(sy(a1))}")
        lines.append(f'<path class="frontier" d="{" ".join(path)}" fill="none" stroke="#d62728" stroke-width="2"/>')
        for c, a in front:
            lines.append(f'<circle class="frontier-point" data-cost="{c:.6g}" data-value="{a:.6g}" '
                         f'cx="{_f(sx(c))}" cy="{_f(sy(a))}" r="6" fill="none" stroke="#d62728"/>')
    _legend(lines, names)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cost_lines(labels: Sequence[str], series: Mapping[str, Sequence[float]], title: str,
               xlabel: str, ylabel: str) -> str:
    """Polyline per series over categorical x positions."""
    lines = _frame(title, xlabel, ylabel)
    y_max = max((v for vals in series.values() for v in vals), default=1.0) * 1.1 or 1.0
    _y_axis(lines, y_max, fmt="{:.4g}")
    plot_w = W - LEFT - RIGHT
    plot_h = H - TOP - BOTTOM
    step = plot_w / max(len(labels), 1)
    for i, lab in enumerate(labels):
        lines.append(f'<text x="{_f(LEFT + (i + 0.5) * step)}" y="{H - BOTTOM + 16}" text-anchor="middle" '
                     f'font-size="10">{escape(lab)}</text>')
    names = list(series)
    for si, name in enumerate(names):
        pts = [(LEFT + (i + 0.5) * step, H - BOTTOM - plot_h * v / y_max) for i, v in enumerate(series[name])]
        d = " ".join(f"{'M' if i == 0 else 'L'} {_f(x)} {_f(y)}" for i, (x, y) in enumerate(pts))
        lines.append(f'<path d="{d}" fill="none" stroke="{_color(name, si)}" stroke-width="2"/>')
        for (x, y), v in zip(pts, series[name]):
            lines.append(f'<circle data-series="{escape(name)}" data-value="{v:.6g}" cx="{_f(x)}" cy="{_f(y)}" '
                         f'r="3" fill="{_color(name, si)}"/>')
    _legend(lines, names)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
