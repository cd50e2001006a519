import numpy as np
import pytest
from conftest import TableModel, brute_force_arm, make_stratified_dataset, solve_both_ways

from carqte import (
    ArmQuantileProblem,
    Dataset,
    DataValidationError,
    DegenerateCellError,
    QuantileGrid,
    WeightVector,
    fit_none,
    index_strata,
    pilot_quantiles,
    qte,
    run_bootstrap,
    solve_arm_quantile,
)
from carqte.estimator import check_sandwich


def _unit_problem(arm, tau, n, mhat=None):
    return ArmQuantileProblem(
        arm=arm, tau=tau, weights=WeightVector.unit(n),
        mhat_values=np.zeros(n) if mhat is None else mhat,
    )


def test_single_candidate():
    ds = Dataset.from_arrays([5.0, 1.0, 2.0], [1, 0, 0], [1, 1, 1], np.zeros((3, 1)))
    st = index_strata(ds)
    for tau in (0.1, 0.5, 0.9):
        assert solve_arm_quantile(_unit_problem(1, tau, 3), ds, st) == 5.0


def test_boundary_tie_returns_smaller_candidate():
    ds = Dataset.from_arrays([1.0, 2.0, 3.0, 4.0], [1, 0, 1, 0], [1, 1, 1, 1], np.zeros((4, 1)))
    st = index_strata(ds)
    assert solve_arm_quantile(_unit_problem(1, 0.5, 4), ds, st) == 1.0


def test_constant_adjustment_cancels():
    rng = np.random.default_rng(8)
    ds = make_stratified_dataset(rng, n=30, k=2)
    st = index_strata(ds)
    base = solve_arm_quantile(_unit_problem(1, 0.5, 30), ds, st)
    for c in (-7.0, 0.3, 12.0):
        got = solve_arm_quantile(_unit_problem(1, 0.5, 30, np.full(30, c)), ds, st)
        assert got == base


def test_solver_matches_brute_force():
    rng = np.random.default_rng(99)
    for trial in range(300):
        k = int(rng.integers(1, 4))
        n = int(rng.integers(3 * k, 41))
        ds = make_stratified_dataset(rng, n=n, k=k)
        xi = rng.exponential(1.0, n) if trial % 2 else np.ones(n)
        kind = "bootstrap" if trial % 2 else "unit"
        mhat = rng.normal(0.0, 1.5, n)
        tau = float(rng.choice(np.arange(0.1, 0.95, 0.1)))
        for arm in (0, 1):
            got, want = solve_both_ways(ds, xi, mhat, tau, arm, kind)
            assert got == want


def test_sandwich_conditions_hold():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(6, 40))
        ds = make_stratified_dataset(rng, n=n, k=2)
        st = index_strata(ds)
        xi = rng.exponential(1.0, n)
        prob = ArmQuantileProblem(
            arm=1, tau=float(rng.uniform(0.1, 0.9)),
            weights=WeightVector(xi, kind="bootstrap"),
            mhat_values=rng.normal(0, 1, n),
        )
        sol = solve_arm_quantile(prob, ds, st)
        assert check_sandwich(prob, ds, st, sol)


def test_na_matches_classical_quantile_convention():
    # One stratum, equal arms: the arm solution is the left-continuous
    # empirical quantile inf{y: F(y) >= tau} of that arm's outcomes.
    rng = np.random.default_rng(33)
    for _ in range(20):
        m = int(rng.integers(3, 30))
        y = np.concatenate([rng.normal(0, 1, m), rng.normal(0, 1, m)])
        a = np.array([1] * m + [0] * m)
        ds = Dataset.from_arrays(y, a, np.ones(2 * m), np.zeros((2 * m, 1)))
        st = index_strata(ds)
        grid = QuantileGrid.of([0.1, 0.3, 0.5, 0.7, 0.9])
        est = qte(ds, st, fit_none(grid), grid)
        for j, tau in enumerate(grid):
            assert est.q1[j] == np.quantile(y[a == 1], tau, method="inverted_cdf")
            assert est.q0[j] == np.quantile(y[a == 0], tau, method="inverted_cdf")


def test_swapping_arms_negates_qte():
    rng = np.random.default_rng(44)
    ds = make_stratified_dataset(rng, n=60, k=3)
    grid = QuantileGrid.of([0.25, 0.5, 0.75])
    st = index_strata(ds)
    est = qte(ds, st, fit_none(grid), grid)
    flipped = Dataset.from_arrays(ds.y, 1 - ds.a, ds.s, ds.x)
    est2 = qte(flipped, index_strata(flipped), fit_none(grid), grid)
    assert np.array_equal(est2.qte, -est.qte)


def test_constant_shift_recovered():
    rng = np.random.default_rng(55)
    n = 5000
    y0 = rng.normal(0, 1, n) + 4.0 * rng.uniform(-1, 1, n)
    a = (rng.uniform(size=n) < 0.5).astype(int)
    y = np.where(a == 1, y0 + 3.0, y0)
    ds = Dataset.from_arrays(y, a, np.ones(n), np.zeros((n, 1)))
    st = index_strata(ds)
    grid = QuantileGrid.of([0.25, 0.5, 0.75])
    est = qte(ds, st, fit_none(grid), grid)
    assert np.all(np.abs(est.qte - 3.0) < 0.3)


def test_pilot_matches_na_and_is_monotone():
    rng = np.random.default_rng(66)
    ds = make_stratified_dataset(rng, n=80, k=2)
    st = index_strata(ds)
    grid = QuantileGrid.of([0.1, 0.25, 0.5, 0.75, 0.9])
    pilot = pilot_quantiles(ds, st, grid)
    est = qte(ds, st, fit_none(grid), grid)
    assert np.array_equal(pilot.q1, est.q1)
    assert np.array_equal(pilot.q0, est.q0)
    assert np.all(np.diff(pilot.q1) >= 0)
    assert np.all(np.diff(pilot.q0) >= 0)
    again = pilot_quantiles(ds, st, grid)
    assert np.array_equal(again.q1, pilot.q1)


def test_location_shift_invariance_bitwise():
    rng = np.random.default_rng(77)
    grid = QuantileGrid.of([0.3, 0.7])
    for _ in range(30):
        ds = make_stratified_dataset(rng, n=60, k=2)
        st = index_strata(ds)
        values = {
            (a, t): rng.normal(0, 1, 60) for a in (0, 1) for t in grid
        }
        model = TableModel(values)
        shifts = {(a, s): float(rng.normal(0, 5)) for a in (0, 1) for s in range(2)}
        shifted = model.shifted(ds, shifts)
        est = qte(ds, st, model, grid)
        est_s = qte(ds, st, shifted, grid)
        assert np.array_equal(est.qte, est_s.qte)
        d1 = run_bootstrap(ds, st, model, grid, 20, np.random.default_rng(123))
        d2 = run_bootstrap(ds, st, shifted, grid, 20, np.random.default_rng(123))
        assert np.array_equal(d1.draws, d2.draws)


def test_fixed_pi_mode():
    rng = np.random.default_rng(88)
    ds = make_stratified_dataset(rng, n=41, k=2)  # odd n: pi_hat != 0.5
    st = index_strata(ds)
    grid = QuantileGrid.of([0.5])
    values = {(a, 0.5): rng.normal(0, 1, 41) for a in (0, 1)}
    model = TableModel(values)
    est_estimated = qte(ds, st, model, grid)
    est_fixed = qte(ds, st, model, grid, pi_source="fixed", fixed_pi=0.5)
    xi = np.ones(41)
    want = brute_force_arm(1, ds, xi, np.full(2, 0.5), values[(1, 0.5)], 0.5)
    assert est_fixed.q1[0] == want
    assert est_estimated.q1[0] != est_fixed.q1[0] or est_estimated.q0[0] != est_fixed.q0[0]
    # exactly balanced data: the two modes coincide
    rng_b = np.random.default_rng(3)
    y_b = rng_b.normal(size=40)
    a_b = np.tile([0, 1], 20)
    ds_b = Dataset.from_arrays(y_b, a_b, np.ones(40), np.zeros((40, 1)))
    st_b = index_strata(ds_b)
    m = TableModel({(0, 0.5): np.zeros(40), (1, 0.5): np.zeros(40)})
    assert qte(ds_b, st_b, m, grid).qte[0] == qte(
        ds_b, st_b, m, grid, pi_source="fixed", fixed_pi=0.5
    ).qte[0]


def test_degenerate_cell_hard_error():
    ds = Dataset.from_arrays([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 0], [1, 1, 2, 2], np.zeros((4, 1)))
    st = index_strata(ds)
    grid = QuantileGrid.of([0.5])
    with pytest.raises(DegenerateCellError):
        qte(ds, st, fit_none(grid), grid)


def test_qte_identity():
    rng = np.random.default_rng(10)
    ds = make_stratified_dataset(rng, n=50, k=2)
    st = index_strata(ds)
    grid = QuantileGrid.of([0.25, 0.75])
    est = qte(ds, st, fit_none(grid), grid)
    assert np.array_equal(est.qte, est.q1 - est.q0)


def test_weight_length_mismatch():
    ds = Dataset.from_arrays([1.0, 2.0], [1, 0], [1, 1], np.zeros((2, 1)))
    st = index_strata(ds)
    prob = ArmQuantileProblem(
        arm=1, tau=0.5, weights=WeightVector.unit(3), mhat_values=np.zeros(3)
    )
    with pytest.raises(DataValidationError):
        solve_arm_quantile(prob, ds, st)


def test_problem_validation():
    with pytest.raises(DataValidationError):
        ArmQuantileProblem(arm=2, tau=0.5, weights=WeightVector.unit(2), mhat_values=np.zeros(2))
    with pytest.raises(DataValidationError):
        ArmQuantileProblem(arm=1, tau=1.0, weights=WeightVector.unit(2), mhat_values=np.zeros(2))
