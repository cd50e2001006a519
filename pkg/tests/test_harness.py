import time

import numpy as np
import pytest

from carqte import (
    DataValidationError,
    DgpSpec,
    QuantileGrid,
    ScenarioSpec,
    SchemeSpec,
    emit_table,
    parse_table,
    run_scenario,
)
from carqte.harness import _result_records


def _tiny_spec(**overrides):
    base = dict(
        dgp=DgpSpec("dgp1", 120),
        scheme=SchemeSpec("srs"),
        methods=("na", "lp"),
        reps=4,
        B=40,
        taus=QuantileGrid.of([0.25, 0.75]),
        seed=5,
    )
    base.update(overrides)
    return ScenarioSpec(**base)


TRUTH2 = np.array([0.6, 1.4])  # placeholder truths for the two grid points


def test_repeat_runs_are_byte_identical():
    spec = _tiny_spec()
    r1 = run_scenario(spec, TRUTH2)
    r2 = run_scenario(spec, TRUTH2)
    assert emit_table(r1) == emit_table(r2)
    assert r1.rows == r2.rows


def test_zero_delta_makes_power_equal_size():
    spec = _tiny_spec(delta=0.0)
    res = run_scenario(spec, TRUTH2)
    for row in res.rows.values():
        assert row["size"] == row["power"]


def test_rates_are_decision_means_with_mcse():
    spec = _tiny_spec()
    res = run_scenario(spec, TRUTH2)
    for row in res.rows.values():
        assert 0.0 <= row["size"] <= 1.0
        assert 0.0 <= row["power"] <= 1.0
        p = row["size"]
        assert row["size_mcse"] == pytest.approx(np.sqrt(p * (1 - p) / row["reps"]))
    # three tests per method on a 2-point grid: pointwise x2, diff, uniform
    tests = {k[1] for k in res.rows}
    assert tests == {"pointwise@0.25", "pointwise@0.75", "diff(0.75,0.25)", "uniform"}


def test_emit_parse_round_trip():
    res = run_scenario(_tiny_spec(), TRUTH2)
    text = emit_table(res, "csv")
    assert parse_table(text) == _result_records(res)
    assert parse_table("") == []


def test_emit_text_renders_rows():
    res = run_scenario(_tiny_spec(reps=2), TRUTH2)
    text = emit_table(res, "text")
    lines = text.strip().splitlines()
    assert lines[0].startswith("dgp")
    assert len(lines) == 1 + len(res.rows)


def test_empty_results_render_header_only():
    assert emit_table([], "csv").strip().split(",")[0] == "dgp"
    assert len(emit_table([], "csv").strip().splitlines()) == 1


def test_worker_count_does_not_change_results():
    spec1 = _tiny_spec(reps=4)
    spec2 = _tiny_spec(reps=4, workers=2)
    assert emit_table(run_scenario(spec1, TRUTH2)) == emit_table(run_scenario(spec2, TRUTH2))


def test_smoke_scenario_within_time_budget():
    start = time.time()
    spec = _tiny_spec(
        dgp=DgpSpec("dgp1", 100), reps=5, B=50, taus=QuantileGrid.of([0.5]),
        methods=("na", "lp"), scheme=SchemeSpec("sbr"),
    )
    res = run_scenario(spec, np.array([1.0]))
    assert time.time() - start < 30.0
    assert res.failures == 0


def test_failure_budget_enforced():
    # n = 12 over up to 4 strata under SRS: some replication leaves a cell
    # empty, and with reps this small any failure exceeds the 1% budget.
    spec = ScenarioSpec(
        dgp=DgpSpec("dgp1", 12),
        scheme=SchemeSpec("srs"),
        methods=("na",),
        reps=40,
        B=20,
        taus=QuantileGrid.of([0.5]),
        seed=1,
    )
    with pytest.raises(DataValidationError, match="failed"):
        run_scenario(spec, np.array([1.0]))


def test_spec_validation():
    with pytest.raises(DataValidationError):
        _tiny_spec(methods=("na", "ols"))
    with pytest.raises(DataValidationError):
        _tiny_spec(reps=0)
    with pytest.raises(DataValidationError):
        run_scenario(_tiny_spec(), np.array([1.0, 2.0, 3.0]))
