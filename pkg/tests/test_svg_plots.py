# tests/test_svg_plots.py
from svg_plots import Series, SvgChart, bar_chart, line_chart


def test_line_chart_with_band(tmp_path):
    path = str(tmp_path / "curve.svg")
    series = [Series("ticket", [0.5, 0.8, 0.9], [0.9, 0.88, 0.7], [0.01, 0.02, 0.05])]
    assert line_chart(path, "esparsidade", "p", "acurácia", series) == path
    svg = (tmp_path / "curve.svg").read_text(encoding="utf-8")
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<polygon") == 1
    assert svg.count("<polyline") == 1
    assert svg.count("<circle") == 3


def test_line_chart_without_band(tmp_path):
    path = str(tmp_path / "plain.svg")
    line_chart(path, "t", "x", "y", [Series("a", [1, 2], [3, 4]), Series("b", [1, 2], [4, 3])])
    svg = (tmp_path / "plain.svg").read_text(encoding="utf-8")
    assert "<polygon" not in svg
    assert svg.count("<polyline") == 2


def test_nan_points_skipped(tmp_path):
    path = str(tmp_path / "nan.svg")
    line_chart(path, "t", "x", "y", [Series("a", [1, 2, 3], [1.0, float("nan"), 2.0])])
    assert (tmp_path / "nan.svg").read_text(encoding="utf-8").count("<circle") == 2


def test_bar_chart(tmp_path):
    path = str(tmp_path / "bars.svg")
    bar_chart(path, "camadas", ["base/0", "top/0", "neck/0"], [0.2, 0.9, 0.95], "fração podada")
    svg = (tmp_path / "bars.svg").read_text(encoding="utf-8")
    # fundo + uma barra por rótulo
    assert svg.count("<rect") == 4
    assert "top/0" in svg


def test_text_is_escaped():
    chart = SvgChart()
    chart.text(0, 0, "a<b & c")
    assert "a&lt;b &amp; c" in chart.get_svg()
