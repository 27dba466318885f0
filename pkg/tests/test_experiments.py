import csv
import io
import math

import pytest

from errors import ConfigError
from experiments import (SWEEP_FIELDS, BoundRow, ExperimentSweep, load_presets, moments_path, run_bound_validation,
                         run_point, run_sweep, sweep_from_preset, write_sweep_csv, write_validation_csv)
from settings import apply_overrides, check_config


def rows_of(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture(scope="module")
def tiny_sweep_result(tiny_cfg):
    sweep = ExperimentSweep(name="dth", param="D_th", values=[2, 5, 11], seeds=range(2))
    return run_sweep(sweep, tiny_cfg)


def test_presets_load_and_validate(default_cfg):
    presets = load_presets()
    assert {"pu_orthogonal", "pu_shared", "ue_cache", "file_length", "delay_threshold", "tiny_optimal"} <= set(presets)
    for name in presets:
        sweep = sweep_from_preset(name)
        sweep.validate(default_cfg)
        assert sweep.seeds == tuple(range(presets[name].get("seeds", 20)))


def test_preset_overrides():
    sweep = sweep_from_preset("pu_shared", seeds=3, methods=["heuristic"])
    assert sweep.seeds == (0, 1, 2)
    assert sweep.methods == ("heuristic",)
    assert [name for name, _ in sweep.variant_items()] == ["dth5", "dth11"]
    with pytest.raises(ConfigError):
        sweep_from_preset("no_such_preset")


def test_sweep_definition_checked(default_cfg):
    with pytest.raises(ConfigError):
        ExperimentSweep(name="x", param="U", values=[], seeds=[0])
    with pytest.raises(ConfigError):
        ExperimentSweep(name="x", param="U", values=[1], seeds=[])
    with pytest.raises(ConfigError):
        ExperimentSweep(name="x", param="U", values=[1], seeds=[0], methods=["greedy"])
    with pytest.raises(ConfigError):
        ExperimentSweep(name="x", param="not_a_key", values=[1], seeds=[0]).validate(default_cfg)
    with pytest.raises(ConfigError):
        ExperimentSweep(name="x", param="U", values=[1], seeds=[0], fixed={"bogus": 1}).validate(default_cfg)


def test_point_config_keeps_integer_keys(tiny_cfg):
    sweep = ExperimentSweep(name="u", param="U", values=[3.0], seeds=[0], variants={"few": {"W": 1}})
    cfg = sweep.point_config(tiny_cfg, "few", 3.0)
    assert cfg["U"] == 3 and isinstance(cfg["U"], int)
    assert cfg["W"] == 1


def test_sweep_rows(tiny_sweep_result):
    result = tiny_sweep_result
    assert result.errors == 0
    rows = rows_of(result.to_csv())
    assert list(rows[0]) == SWEEP_FIELDS
    data = [r for r in rows if r["row_type"] == "data"]
    aggregate = [r for r in rows if r["row_type"] == "aggregate"]
    meta = {r["param"]: r["value"] for r in rows if r["row_type"] == "meta"}
    assert len(data) == 3 * 2 * 2
    assert len(aggregate) == 3 * 2
    assert meta["seeds"] == "2" and meta["methods"] == "heuristic no_d2d" and meta["distinct_ranks"] == "1"
    assert [(r["value"], r["seed"], r["method"]) for r in data[:4]] == [
        ("2", "0", "heuristic"), ("2", "0", "no_d2d"), ("2", "1", "heuristic"), ("2", "1", "no_d2d")]
    assert all(0.0 <= float(r["sdr"]) <= 1.0 for r in data)
    assert all(r["detail"] == "2/2 seeds" and r["status"] == "ok" for r in aggregate)


def test_aggregates_use_sample_std(tiny_sweep_result):
    for row in tiny_sweep_result.aggregates():
        members = [p.sdr for p in tiny_sweep_result.points
                   if str(p.value) == row["value"] and p.method == row["method"]]
        mean = sum(members) / 2
        std = math.sqrt(sum((s - mean) ** 2 for s in members) / 1)
        assert float(row["sdr"]) == pytest.approx(mean)
        assert float(row["sdr_std"]) == pytest.approx(std)


def test_mean_sdr_matches_aggregates(tiny_sweep_result):
    agg = {(r["value"], r["method"]): float(r["sdr"]) for r in tiny_sweep_result.aggregates()}
    for method in ("heuristic", "no_d2d"):
        curve = tiny_sweep_result.mean_sdr("", method)
        assert curve == pytest.approx([agg[(v, method)] for v in ("2", "5", "11")])


def test_rerun_is_identical_apart_from_runtime(tiny_cfg, tiny_sweep_result, tmp_path):
    sweep = ExperimentSweep(name="dth", param="D_th", values=[2, 5, 11], seeds=range(2))
    again = run_sweep(sweep, tiny_cfg)

    def strip(text):
        return [{k: v for k, v in r.items() if k != "runtime_s"} for r in rows_of(text)]

    assert strip(again.to_csv()) == strip(tiny_sweep_result.to_csv())
    path = tmp_path / "sweep.csv"
    write_sweep_csv(str(path), again)
    assert path.read_text() == again.to_csv()


def test_invalid_points_become_error_rows(tiny_cfg):
    sweep = ExperimentSweep(name="w", param="W", values=[0, 2], seeds=[0], methods=["no_d2d"])
    result = run_sweep(sweep, tiny_cfg)
    assert [(p.value, p.status) for p in result.points] == [(0, "error"), (2, "ok")]
    assert result.errors == 1
    agg = {r["value"]: r for r in result.aggregates()}
    assert agg["0"]["status"] == "error" and agg["2"]["status"] == "ok"
    assert math.isnan(result.mean_sdr("", "no_d2d")[0])


def test_failed_method_does_not_stop_the_point(tiny_cfg):
    cfg = check_config(apply_overrides(tiny_cfg, {"solver.max_states": 10}))
    out = run_point(cfg, 0, ("optimal", "no_d2d"))
    assert [p.status for p in out] == ["error", "ok"]
    assert out[0].detail.startswith("SearchLimitError")


@pytest.mark.slow
def test_optimal_sweep_on_tiny(tiny_cfg):
    sweep = ExperimentSweep(name="tiny", param="D_th", values=[5], seeds=[0], methods=["optimal", "heuristic"])
    result = run_sweep(sweep, tiny_cfg)
    assert result.errors == 0
    optimal, heuristic = result.points
    assert optimal.sdr >= heuristic.sdr - 1e-12


def test_bound_row_margin():
    ok = BoundRow(kind="zeta0", theta=10.0, interferer=None, T=1, empirical=0.2, stderr=0.01, bound=0.3)
    bad = BoundRow(kind="zeta0", theta=10.0, interferer=None, T=1, empirical=0.5, stderr=0.01, bound=0.3)
    assert ok.margin == pytest.approx(0.13) and not ok.flagged
    assert bad.flagged
    assert ok.as_dict()["interferer"] == "" and bad.as_dict()["flagged"] == "1"


def test_bound_validation_grid(default_cfg, tmp_path):
    cfg = apply_overrides(default_cfg, {"validation.thetas": [10.0, 100.0], "validation.interferer_thetas": [1.0],
                                        "validation.T": [1, 2, 3]})
    result = run_bound_validation(cfg, trials=5000, moments=False)
    assert len(result.rows) == 4 * 4
    assert [r.kind for r in result.rows[:4]] == ["zeta0"] * 3 + ["mean_zeta0"]
    assert result.rows[-1].kind == "mean_zeta1"
    assert result.passed, [r.as_dict() for r in result.flagged]

    path = tmp_path / "bounds.csv"
    write_validation_csv(str(path), result)
    assert len(rows_of(path.read_text())) == 16
    assert not (tmp_path / "bounds_moments.csv").exists()


@pytest.mark.slow
def test_bound_validation_full_grid(default_cfg):
    result = run_bound_validation(default_cfg, trials=100_000)
    # 4 links and 4 x 3 interfered links, each with T = 1..10 plus one mean row
    assert len(result.rows) == (4 + 4 * 3) * 11
    assert {r.theta for r in result.rows} == {1.0, 10.0, 100.0, 1000.0}
    assert result.passed, [r.as_dict() for r in result.flagged]
    assert result.moments.passed


def test_diverging_link_reports_infinite_mean(default_cfg):
    cfg = apply_overrides(default_cfg, {"validation.thetas": [0.01], "validation.interferer_thetas": [1000.0],
                                        "validation.T": [1]})
    result = run_bound_validation(cfg, trials=200, moments=False)
    mean_row = [r for r in result.rows if r.kind == "mean_zeta1"][0]
    assert mean_row.bound == math.inf
    assert not mean_row.flagged


def test_moments_path():
    assert moments_path("results/bound_validation.csv") == "results/bound_validation_moments.csv"
    assert moments_path("out") == "out_moments.csv"


def non_decreasing(curve) -> bool:
    return all(b >= a - 1e-12 for a, b in zip(curve, curve[1:]))


@pytest.mark.slow
@pytest.mark.parametrize("param,values,rising", [
    ("C_U", [0, 100, 200], True),
    ("L", [50, 100, 200], False),
    ("D_th", [2, 5, 11], True),
])
def test_desk_scale_trends(default_cfg, param, values, rising):
    sweep = ExperimentSweep(name=param, param=param, values=values, seeds=range(20), methods=["heuristic"],
                            fixed={"U": 10, "F": 50})
    result = run_sweep(sweep, default_cfg)
    assert result.errors == 0
    curve = result.mean_sdr("", "heuristic")
    assert all(0.0 <= s <= 1.0 for s in curve)
    assert non_decreasing(curve if rising else curve[::-1]), curve
