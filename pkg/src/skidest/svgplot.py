"""Minimal static SVG charts, emitted as plain path/text primitives.

Line charts (estimate traces against bound lines) and grouped bar
charts (violation summaries). Output depends only on the inputs, so
re-rendering the same data yields identical bytes.
"""

from __future__ import annotations

from typing import Sequence

WIDTH = 880
HEIGHT = 520
MARGIN_LEFT = 70
MARGIN_RIGHT = 30
MARGIN_TOP = 40
MARGIN_BOTTOM = 60

PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
    "#17becf",
)


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _tick_label(value: float) -> str:
    return f"{value:.4g}"


def _scale(lo: float, hi: float) -> tuple[float, float]:
    if hi <= lo:
        pad = 1.0 if hi == 0 else abs(hi) * 0.1
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


class _Canvas:
    def __init__(self, title: str, x_label: str, y_label: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-size="15">{title}</text>',
            f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle">{x_label}</text>',
            f'<text x="18" y="{HEIGHT / 2:.0f}" text-anchor="middle" '
            f'transform="rotate(-90 18 {HEIGHT / 2:.0f})">{y_label}</text>',
        ]
        self.x0 = MARGIN_LEFT
        self.x1 = WIDTH - MARGIN_RIGHT
        self.y0 = HEIGHT - MARGIN_BOTTOM
        self.y1 = MARGIN_TOP

    def x_pix(self, v: float, lo: float, hi: float) -> float:
        return self.x0 + (v - lo) / (hi - lo) * (self.x1 - self.x0)

    def y_pix(self, v: float, lo: float, hi: float) -> float:
        return self.y0 - (v - lo) / (hi - lo) * (self.y0 - self.y1)

    def axes(self, x_range: tuple[float, float], y_range: tuple[float, float], ticks: int = 6):
        self.parts.append(
            f'<rect x="{self.x0}" y="{self.y1}" width="{self.x1 - self.x0}" '
            f'height="{self.y0 - self.y1}" fill="none" stroke="#333"/>'
        )
        for i in range(ticks):
            frac = i / (ticks - 1)
            xv = x_range[0] + frac * (x_range[1] - x_range[0])
            xp = self.x_pix(xv, *x_range)
            self.parts.append(f'<line x1="{_fmt(xp)}" y1="{self.y0}" x2="{_fmt(xp)}" y2="{self.y0 + 5}" stroke="#333"/>')
            self.parts.append(
                f'<text x="{_fmt(xp)}" y="{self.y0 + 20}" text-anchor="middle">{_tick_label(xv)}</text>'
            )
            yv = y_range[0] + frac * (y_range[1] - y_range[0])
            yp = self.y_pix(yv, *y_range)
            self.parts.append(f'<line x1="{self.x0 - 5}" y1="{_fmt(yp)}" x2="{self.x0}" y2="{_fmt(yp)}" stroke="#333"/>')
            self.parts.append(
                f'<text x="{self.x0 - 8}" y="{_fmt(yp + 4)}" text-anchor="end">{_tick_label(yv)}</text>'
            )

    def legend(self, names: Sequence[str], colors: Sequence[str]):
        for i, (name, color) in enumerate(zip(names, colors)):
            y = self.y1 + 14 + i * 16
            self.parts.append(f'<line x1="{self.x1 - 150}" y1="{y}" x2="{self.x1 - 125}" y2="{y}" stroke="{color}" stroke-width="2"/>')
            self.parts.append(f'<text x="{self.x1 - 120}" y="{y + 4}">{name}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def line_chart(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str,
    x_label: str,
    y_label: str,
    h_lines: Sequence[tuple[str, float]] = (),
) -> str:
    """Render (name, xs, ys) series plus labeled dashed horizontal lines."""
    if not series:
        raise ValueError("nothing to plot")
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    ys_all += [v for _, v in h_lines]
    x_range = _scale(min(xs_all), max(xs_all))
    y_range = _scale(min(ys_all), max(ys_all))

    canvas = _Canvas(title, x_label, y_label)
    canvas.axes(x_range, y_range)
    colors = [PALETTE[i % len(PALETTE)] for i in range(len(series))]
    for (name, xs, ys), color in zip(series, colors):
        pts = " ".join(
            f"{_fmt(canvas.x_pix(x, *x_range))},{_fmt(canvas.y_pix(y, *y_range))}"
            for x, y in zip(xs, ys)
        )
        canvas.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    for name, value in h_lines:
        yp = canvas.y_pix(value, *y_range)
        canvas.parts.append(
            f'<line x1="{canvas.x0}" y1="{_fmt(yp)}" x2="{canvas.x1}" y2="{_fmt(yp)}" '
            f'stroke="#555" stroke-dasharray="6 4"/>'
        )
        canvas.parts.append(f'<text x="{canvas.x0 + 6}" y="{_fmt(yp - 4)}" fill="#555">{name}</text>')
    canvas.legend([name for name, _, _ in series], colors)
    return canvas.render()


def bar_chart(
    group_labels: Sequence[str],
    categories: Sequence[str],
    values: Sequence[Sequence[float]],
    title: str,
    y_label: str,
) -> str:
    """Render grouped bars: ``values[c][g]`` is category c in group g."""
    if not group_labels or not categories:
        raise ValueError("nothing to plot")
    highest = max(max(row) for row in values)
    y_range = (0.0, highest * 1.1 if highest > 0 else 1.0)

    canvas = _Canvas(title, "", y_label)
    canvas.axes((0.0, float(len(group_labels))), y_range)
    group_width = (canvas.x1 - canvas.x0) / len(group_labels)
    bar_width = group_width * 0.8 / len(categories)
    colors = [PALETTE[i % len(PALETTE)] for i in range(len(categories))]
    for g, label in enumerate(group_labels):
        x_group = canvas.x0 + g * group_width
        for c in range(len(categories)):
            v = values[c][g]
            top = canvas.y_pix(v, *y_range)
            x = x_group + group_width * 0.1 + c * bar_width
            canvas.parts.append(
                f'<rect x="{_fmt(x)}" y="{_fmt(top)}" width="{_fmt(bar_width)}" '
                f'height="{_fmt(canvas.y0 - top)}" fill="{colors[c]}"/>'
            )
        canvas.parts.append(
            f'<text x="{_fmt(x_group + group_width / 2)}" y="{canvas.y0 + 20}" '
            f'text-anchor="middle">{label}</text>'
        )
    canvas.legend(categories, colors)
    return canvas.render()
