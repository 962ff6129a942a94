import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osplab.figures import (
    FIGURES,
    FigureDataError,
    Plot,
    Series,
    build_plot,
    color_for,
    emit_figure_data,
    read_csv,
    render_svg,
    rows_to_csv,
)

SUMMARY = [
    {"arch": "transformer", "T": 32, "state_bits": 262144, "step_flops": 8192, "n_star": 6, "bound_n_star": 74898,
     "r": 0.1875, "r_attn": None, "utilization": 6 / 74898},
    {"arch": "mamba_N16", "T": 32, "state_bits": 65536, "step_flops": 1024, "n_star": 1, "bound_n_star": 18724,
     "r": 1 / 32, "r_attn": None, "utilization": 1 / 18724},
    {"arch": "gla", "T": 32, "state_bits": 65536, "step_flops": 4096, "n_star": 0, "bound_n_star": 18724,
     "r": 0.0, "r_attn": None, "utilization": 0.0},
]


def test_empty_rows_raise_instead_of_writing(tmp_path):
    with pytest.raises(FigureDataError):
        emit_figure_data([], "5a", tmp_path)
    with pytest.raises(FigureDataError):
        rows_to_csv([])
    assert list(tmp_path.iterdir()) == []


def test_missing_series_columns_rejected():
    with pytest.raises(FigureDataError, match="bound_n_star"):
        build_plot([{"arch": "gla", "n_star": 1}], "5a")
    with pytest.raises(FigureDataError):
        build_plot(SUMMARY, "9z")


@settings(max_examples=80, deadline=None)
@given(st.lists(st.fixed_dictionaries({
    "arch": st.sampled_from(["gla", "mamba_N16", "a,b", 'q"x']),
    "n": st.integers(-5, 10**6),
    "acc": st.one_of(st.none(), st.floats(allow_nan=False, allow_infinity=False)),
    "flag": st.booleans(),
}), min_size=1, max_size=8))
def test_csv_round_trips_bit_exactly(rows):
    text = rows_to_csv(rows)
    back = read_csv(text)
    assert rows_to_csv(back) == text
    for r, b in zip(rows, back):
        assert b["arch"] == r["arch"] and int(b["n"]) == r["n"]
        assert (b["acc"] == "") if r["acc"] is None else float(b["acc"]) == r["acc"]


def test_bound_scatter_has_infeasible_region_and_diagonal():
    svg = render_svg(build_plot(SUMMARY, "5a"))
    assert 'id="infeasible-region"' in svg and 'id="diagonal"' in svg
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_svg_is_deterministic(tmp_path):
    a = emit_figure_data(SUMMARY, "3c", tmp_path / "a")
    b = emit_figure_data(SUMMARY, "3c", tmp_path / "b")
    assert a[0].read_bytes() == b[0].read_bytes() and a[1].read_bytes() == b[1].read_bytes()


def test_colors_keyed_by_architecture():
    assert color_for("transformer") == "#1f77b4"
    assert color_for("hybrid_r0.25") == color_for("hybrid_r0.75")
    assert color_for("unknown_model") == color_for("unknown_model")
    svg = render_svg(build_plot(SUMMARY, "3a"))
    assert color_for("mamba_N16") in svg


@pytest.mark.parametrize("fid", [f for f in FIGURES if f not in ("1a", "4")])
def test_every_summary_figure_renders(fid, tmp_path):
    csv_path, svg_path = emit_figure_data(SUMMARY, fid, tmp_path)
    assert csv_path.name == f"fig_{fid}.csv" and svg_path.exists()


def test_accuracy_and_hybrid_figures():
    rows = [{"arch": "gla", "n": n, "accuracy": 1.0 / n} for n in (1, 2, 4)] + [{"arch": "gla", "n": 8, "accuracy": None}]
    plot = build_plot(rows, "1a")
    assert plot.series[0].xs == [1.0, 2.0, 4.0]
    hyb = [{"r_attn": r / 8, "n_star": r} for r in range(9)]
    assert build_plot(hyb, "4").series[0].ys == [float(r) for r in range(9)]


def test_series_validation():
    with pytest.raises(FigureDataError):
        Series("x", [1.0], [])
    with pytest.raises(FigureDataError):
        render_svg(Plot("empty", "x", "y"))
    with pytest.raises(FigureDataError):
        render_svg(Plot("log", "x", "y", [Series("s", [0.0], [1.0])], logx=True))
