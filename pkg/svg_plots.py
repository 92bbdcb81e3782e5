# svg_plots.py
"""Gráficos SVG simples (linhas com faixa de ±kσ e barras) para os relatórios."""
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from xml.sax.saxutils import escape

logger = logging.getLogger(__name__)

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 640, 420
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 150, 40, 55


@dataclass
class Series:
    label: str
    xs: Sequence[float]
    ys: Sequence[float]
    std: Sequence[float] | None = None

    def __post_init__(self):
        self.xs = [float(x) for x in self.xs]
        self.ys = [float(y) for y in self.ys]
        if self.std is not None:
            self.std = [float(s) for s in self.std]


class SvgChart:
    """Acumula elementos SVG num texto, como um builder."""

    def __init__(self, width: int = WIDTH, height: int = HEIGHT):
        self.width = width
        self.height = height
        self.svg = (f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
                    f'height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
                    f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n')

    @property
    def plot_box(self) -> tuple[float, float, float, float]:
        return MARGIN_LEFT, MARGIN_TOP, self.width - MARGIN_RIGHT, self.height - MARGIN_BOTTOM

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, extra=""):
        self.svg += (f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
                     f'stroke="{stroke}" stroke-width="{width}" {extra}/>\n')

    def polyline(self, points, stroke, width=2.0):
        coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in points)
        self.svg += f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="{width}"/>\n'

    def polygon(self, points, fill, opacity=0.2):
        coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in points)
        self.svg += f'<polygon points="{coords}" fill="{fill}" fill-opacity="{opacity}" stroke="none"/>\n'

    def circle(self, x, y, radius, fill):
        self.svg += f'<circle cx="{x:.1f}" cy="{y:.1f}" r="{radius}" fill="{fill}"/>\n'

    def rect(self, x1, y1, x2, y2, fill):
        self.svg += (f'<rect x="{x1:.1f}" y="{min(y1, y2):.1f}" width="{x2 - x1:.1f}" '
                     f'height="{abs(y2 - y1):.1f}" fill="{fill}"/>\n')

    def text(self, x, y, string, size=12, anchor="start", extra=""):
        self.svg += (f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" text-anchor="{anchor}" {extra}>'
                     f'{escape(str(string))}</text>\n')

    def get_svg(self) -> str:
        return f"{self.svg}</svg>\n"

    def save(self, path: str) -> str:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.get_svg())
        logger.info("Gráfico salvo em %s", path)
        return path


def _extent(values: Sequence[float]) -> tuple[float, float]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    low, high = min(finite), max(finite)
    if low == high:
        pad = abs(low) * 0.1 or 1.0
        return low - pad, high + pad
    pad = (high - low) * 0.05
    return low - pad, high + pad


def _ticks(low: float, high: float, count: int = 5) -> list[float]:
    return [low + (high - low) * i / (count - 1) for i in range(count)]


def _axes(chart: SvgChart, title: str, x_label: str, y_label: str, x_range, y_range, x_ticks: bool = True):
    left, top, right, bottom = chart.plot_box
    chart.line(left, bottom, right, bottom)
    chart.line(left, top, left, bottom)
    chart.text(chart.width / 2, 22, title, size=15, anchor="middle")
    chart.text((left + right) / 2, chart.height - 15, x_label, anchor="middle")
    chart.text(18, (top + bottom) / 2, y_label, anchor="middle",
               extra=f'transform="rotate(-90 18 {(top + bottom) / 2:.1f})"')
    for value in _ticks(*x_range) if x_ticks else []:
        x = left + (value - x_range[0]) / (x_range[1] - x_range[0]) * (right - left)
        chart.line(x, bottom, x, bottom + 5)
        chart.text(x, bottom + 18, f"{value:.3g}", size=10, anchor="middle")
    for value in _ticks(*y_range):
        y = bottom - (value - y_range[0]) / (y_range[1] - y_range[0]) * (bottom - top)
        chart.line(left - 5, y, left, y)
        chart.line(left, y, right, y, stroke="#ddd", width=0.5)
        chart.text(left - 8, y + 4, f"{value:.3g}", size=10, anchor="end")


def _legend(chart: SvgChart, labels: Sequence[str]):
    _, top, right, _ = chart.plot_box
    for i, label in enumerate(labels):
        y = top + 10 + 18 * i
        color = PALETTE[i % len(PALETTE)]
        chart.line(right + 12, y, right + 32, y, stroke=color, width=3)
        chart.text(right + 38, y + 4, label, size=11)


def line_chart(path: str, title: str, x_label: str, y_label: str, series: Sequence[Series],
               band_sigma: float = 3.0) -> str:
    """
    Curvas y(x) com faixa sombreada de ±``band_sigma`` desvios padrão quando ``std`` é dado.

    Returns:
        str: Caminho do arquivo escrito
    """
    chart = SvgChart()
    xs = [x for s in series for x in s.xs]
    ys = []
    for s in series:
        spread = s.std or [0.0] * len(s.ys)
        for y, sd in zip(s.ys, spread):
            ys.extend((y - band_sigma * sd, y + band_sigma * sd))
    x_range, y_range = _extent(xs), _extent(ys)
    _axes(chart, title, x_label, y_label, x_range, y_range)
    left, top, right, bottom = chart.plot_box

    def to_px(x, y):
        return (left + (x - x_range[0]) / (x_range[1] - x_range[0]) * (right - left),
                bottom - (y - y_range[0]) / (y_range[1] - y_range[0]) * (bottom - top))

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        points = [(x, y) for x, y in zip(s.xs, s.ys) if math.isfinite(y)]
        if s.std:
            upper = [to_px(x, y + band_sigma * sd) for x, y, sd in zip(s.xs, s.ys, s.std)]
            lower = [to_px(x, y - band_sigma * sd) for x, y, sd in zip(s.xs, s.ys, s.std)]
            chart.polygon(upper + lower[::-1], color)
        pixels = [to_px(x, y) for x, y in points]
        if len(pixels) > 1:
            chart.polyline(pixels, color)
        for x, y in pixels:
            chart.circle(x, y, 3, color)
    _legend(chart, [s.label for s in series])
    return chart.save(path)


def bar_chart(path: str, title: str, labels: Sequence[str], values: Sequence[float],
              y_label: str = "") -> str:
    """Barras verticais, uma por rótulo (ex.: fração podada por camada)."""
    chart = SvgChart(width=max(WIDTH, 60 * len(labels) + MARGIN_LEFT + MARGIN_RIGHT))
    y_range = (0.0, max([1.0] + [v for v in values if math.isfinite(v)]))
    left, top, right, bottom = chart.plot_box
    _axes(chart, title, "", y_label, (0.0, 1.0), y_range, x_ticks=False)
    slot = (right - left) / max(len(labels), 1)
    for i, (label, value) in enumerate(zip(labels, values)):
        x1 = left + slot * i + slot * 0.15
        x2 = left + slot * (i + 1) - slot * 0.15
        height = (value / y_range[1]) * (bottom - top) if math.isfinite(value) else 0.0
        chart.rect(x1, bottom - height, x2, bottom, PALETTE[0])
        chart.text((x1 + x2) / 2, bottom + 32, label, size=9, anchor="middle")
    return chart.save(path)
