"""Standalone SVG plots with deterministic output."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .errors import ValidationError
from .experiment import fit_loglog_slope, mean_log_errors
from .solvers import RunRecord

WIDTH, HEIGHT = 640, 440
MARGIN = dict(left=70, right=150, top=40, bottom=55)


def _num(v: float) -> str:
    return f"{v:.3f}"


class _Canvas:
    def __init__(self, xlim, ylim, title, xlabel, ylabel):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        ]
        self._axes(xlabel, ylabel)

    def px(self, x: float) -> float:
        span = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * span

    def py(self, y: float) -> float:
        span = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return HEIGHT - MARGIN["bottom"] - (y - self.y0) / (self.y1 - self.y0) * span

    def _axes(self, xlabel, ylabel):
        left, right = MARGIN["left"], WIDTH - MARGIN["right"]
        top, bottom = MARGIN["top"], HEIGHT - MARGIN["bottom"]
        self.parts.append(
            f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
            'fill="none" stroke="black"/>'
        )
        for x in np.linspace(self.x0, self.x1, 5):
            self.parts.append(
                f'<text x="{_num(self.px(x))}" y="{bottom + 16}" text-anchor="middle">{x:.3g}</text>'
            )
        for y in np.linspace(self.y0, self.y1, 5):
            self.parts.append(
                f'<text x="{left - 6}" y="{_num(self.py(y) + 4)}" text-anchor="end">{y:.3g}</text>'
            )
        self.parts.append(
            f'<text x="{(left + right) / 2}" y="{HEIGHT - 14}" text-anchor="middle">{escape(xlabel)}</text>'
        )
        self.parts.append(
            f'<text x="18" y="{(top + bottom) / 2}" text-anchor="middle" '
            f'transform="rotate(-90 18 {(top + bottom) / 2})">{escape(ylabel)}</text>'
        )

    def line(self, xs, ys, colour, dash=None, width=1.5):
        points = " ".join(f"{_num(self.px(x))},{_num(self.py(y))}" for x, y in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{points}" fill="none" stroke="{colour}" stroke-width="{width}"{extra}/>'
        )

    def marker(self, x, y, colour, r=4):
        self.parts.append(
            f'<circle cx="{_num(self.px(x))}" cy="{_num(self.py(y))}" r="{r}" fill="{colour}"/>'
        )

    def legend(self, entries):
        x = WIDTH - MARGIN["right"] + 12
        for i, (label, colour, dash) in enumerate(entries):
            y = MARGIN["top"] + 14 + 18 * i
            extra = f' stroke-dasharray="{dash}"' if dash else ""
            self.parts.append(
                f'<line x1="{x}" y1="{y - 4}" x2="{x + 20}" y2="{y - 4}" stroke="{colour}" stroke-width="2"{extra}/>'
            )
            self.parts.append(f'<text x="{x + 26}" y="{y}">{escape(label)}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _limits(values, pad=0.08):
    lo, hi = float(min(values)), float(max(values))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    d = (hi - lo) * pad
    return lo - d, hi + d


def render_scaling_svg(rows, lam: float | None = None) -> str:
    """Mean log error against log discount complexity.

    Draws the per-gamma means, the OLS line when there are two or more points,
    and two dashed reference lines through the leftmost mean: slope ``-lam``
    (the instance-dependent rate) and slope 0 (the worst-case rate).
    """
    rows = list(rows)
    x, y = mean_log_errors(rows)
    if len(x) == 0:
        raise ValidationError("no rows with positive error to plot")
    refs = []
    if lam is not None:
        refs.append((f"slope {-lam:g}", -lam, "#d62728"))
    refs.append(("slope 0", 0.0, "#7f7f7f"))
    xlim = _limits(x)
    ys = list(y)
    for _, s, _ in refs:
        ys += [y[0] + s * (xlim[0] - x[0]), y[0] + s * (xlim[1] - x[0])]
    fit = fit_loglog_slope(rows) if len(x) >= 2 else None
    if fit is not None:
        ys += [fit.intercept + fit.slope * v for v in xlim]
    c = _Canvas(xlim, _limits(ys), "VR-QL error scaling", "log 1/(1-gamma)", "mean log ell_inf error")
    legend = []
    for label, s, colour in refs:
        c.line(xlim, [y[0] + s * (v - x[0]) for v in xlim], colour, dash="6,4")
        legend.append((label, colour, "6,4"))
    if fit is not None:
        c.line(xlim, [fit.intercept + fit.slope * v for v in xlim], "#1f77b4")
        legend.append((f"fit {fit.slope:.3f}", "#1f77b4", None))
    for xi, yi in zip(x, y):
        c.marker(xi, yi, "#1f77b4")
    c.legend(legend)
    return c.render()


def render_trace_svg(record: RunRecord, every: int = 1) -> str:
    """Log error against samples used, one colour band per epoch.

    Long traces are thinned to about 2000 points.
    """
    every = max(every, len(record.errors) // 2000, 1)
    trace = list(record.trace_rows(every))
    if not trace:
        raise ValidationError("trace is empty; run with the true Q-function to record errors")
    used = [t[2] for t in trace]
    logs = [math.log10(max(t[3], 1e-300)) for t in trace]
    c = _Canvas(_limits(used, 0.02), _limits(logs), "VR-QL error trace", "samples used", "log10 ell_inf error")
    colours = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]
    epochs = sorted({t[0] for t in trace})
    legend = []
    for i, e in enumerate(epochs):
        pts = [(u, l) for (ep, _, u, _), l in zip(trace, logs) if ep == e]
        colour = colours[i % len(colours)]
        c.line([p[0] for p in pts], [p[1] for p in pts], colour)
        legend.append((f"epoch {e}", colour, None))
    c.legend(legend)
    return c.render()


def render_svg(data, lam: float | None = None, every: int = 1) -> str:
    """Scaling plot for experiment rows, trace plot for a :class:`RunRecord`."""
    if isinstance(data, RunRecord):
        return render_trace_svg(data, every)
    return render_scaling_svg(data, lam)
