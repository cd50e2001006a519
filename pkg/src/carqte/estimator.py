"""Regression-adjusted quantile estimation via subgradient conditions.

The per-arm problems are piecewise-linear in the candidate quantile, so the
minimizer is an observed outcome of that arm found by a single sorted sweep
over cumulative inverse-propensity weights; no iterative optimization is
involved.  The same sweep serves the unit-weight point estimator and every
multiplier-bootstrap draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, QuantileGrid, StrataStats, WeightVector, weighted_arm_counts
from .errors import DataValidationError, DegenerateCellError, NumericalError


@dataclass(frozen=True)
class ArmQuantileProblem:
    """One weighted per-arm quantile problem.

    ``mhat_values`` holds the adjustment evaluated on every dataset row for
    this arm and tau.  ``pi_source`` is "estimated" (weighted treated
    fractions recomputed from ``weights``) or "fixed" (use ``fixed_pi``).
    """

    arm: int
    tau: float
    weights: WeightVector
    mhat_values: np.ndarray
    pi_source: str = "estimated"
    fixed_pi: object = 0.5

    def __post_init__(self) -> None:
        if self.arm not in (0, 1):
            raise DataValidationError("arm must be 0 or 1")
        if not (0.0 < self.tau < 1.0):
            raise DataValidationError("tau must lie strictly inside (0, 1)")
        if self.pi_source not in ("estimated", "fixed"):
            raise DataValidationError("pi_source must be 'estimated' or 'fixed'")


@dataclass(frozen=True)
class QteEstimate:
    """Per-tau arm quantiles and their difference."""

    taus: tuple[float, ...]
    q1: np.ndarray
    q0: np.ndarray

    @property
    def qte(self) -> np.ndarray:
        return self.q1 - self.q0

    def at(self, tau: float) -> float:
        return float(self.qte[self.taus.index(float(tau))])


@dataclass(frozen=True)
class PilotQuantiles:
    """Unadjusted per-arm quantiles used to build adjustment labels."""

    taus: tuple[float, ...]
    q1: np.ndarray
    q0: np.ndarray

    def q(self, arm: int, tau: float) -> float:
        i = self.taus.index(float(tau))
        return float(self.q1[i] if arm == 1 else self.q0[i])


@dataclass(frozen=True)
class _ArmIndex:
    """Sorted-outcome view of one arm, with distinct-value group ends."""

    rows: np.ndarray
    y_sorted: np.ndarray
    s_sorted: np.ndarray
    group_last: np.ndarray
    y_distinct: np.ndarray


def _arm_index(dataset: Dataset, arm: int) -> _ArmIndex:
    rows = np.flatnonzero(dataset.a == arm)
    if rows.size == 0:
        raise DegenerateCellError([], f"arm {arm} has no observations")
    order = np.argsort(dataset.y[rows], kind="stable")
    rows = rows[order]
    ys = dataset.y[rows]
    change = np.flatnonzero(np.diff(ys) != 0.0)
    group_last = np.append(change, ys.size - 1)
    return _ArmIndex(
        rows=rows,
        y_sorted=ys,
        s_sorted=dataset.s[rows],
        group_last=group_last,
        y_distinct=ys[group_last],
    )


def _pi_by_stratum(
    dataset: Dataset,
    xi: np.ndarray,
    pi_source: str,
    fixed_pi,
    n_strata: int,
) -> np.ndarray:
    if pi_source == "fixed":
        if np.isscalar(fixed_pi):
            pis = np.full(n_strata, float(fixed_pi))
        else:
            pis = np.asarray(fixed_pi, dtype=np.float64)
            if pis.shape != (n_strata,):
                raise DataValidationError("fixed pi has wrong per-stratum length")
        if not np.all((pis > 0.0) & (pis < 1.0)):
            raise DataValidationError("fixed pi must lie strictly inside (0, 1)")
        return pis
    n1w, nw = weighted_arm_counts(dataset.s, dataset.a.astype(np.float64), xi, n_strata)
    bad = (nw <= 0.0) | (n1w <= 0.0) | (n1w >= nw)
    if np.any(bad):
        raise DegenerateCellError(
            [dataset.strata_labels[i] for i in np.flatnonzero(bad)],
            "weighted treated fraction is degenerate in strata "
            f"{[dataset.strata_labels[i] for i in np.flatnonzero(bad)]}",
        )
    return n1w / nw


def _solve_sorted(
    index: _ArmIndex,
    dataset: Dataset,
    arm: int,
    xi: np.ndarray,
    pis: np.ndarray,
    mhat: np.ndarray | None,
    taus: np.ndarray,
) -> np.ndarray:
    """Smallest minimizer of the weighted check objective, per tau.

    Implements the sandwich characterization: the solution is the first
    distinct arm outcome whose cumulative weight reaches the adjusted target
    mass.  Duplicate outcomes are grouped so the cumulative mass jumps once
    per distinct value, and exact boundary ties resolve to the smaller value.
    Targets outside the attainable range clip to the endpoint candidates,
    matching the argmin over observed arm outcomes.
    """
    denom_sorted = pis[index.s_sorted] if arm == 1 else 1.0 - pis[index.s_sorted]
    w = xi[index.rows] / denom_sorted
    cum = np.cumsum(w)
    total = cum[-1]
    if not np.isfinite(total) or total <= 0.0:
        raise NumericalError(f"arm {arm} has no weighted mass")
    targets = taus * total
    if mhat is not None:
        pi_full = pis[dataset.s]
        af = dataset.a.astype(np.float64)
        if arm == 1:
            coef = xi * (af - pi_full) / pi_full
            targets = targets - coef @ mhat
        else:
            coef = xi * (af - pi_full) / (1.0 - pi_full)
            targets = targets + coef @ mhat
    group_cum = cum[index.group_last]
    k = np.searchsorted(group_cum, targets, side="left")
    k = np.minimum(k, index.y_distinct.size - 1)
    return index.y_distinct[k]


def solve_arm_quantile(
    problem: ArmQuantileProblem, dataset: Dataset, stats: StrataStats
) -> float:
    """Solve one per-arm problem; returns an observed outcome of that arm."""
    if problem.weights.n != dataset.n:
        raise DataValidationError("weights length does not match dataset")
    m = np.asarray(problem.mhat_values, dtype=np.float64)
    if m.shape != (dataset.n,):
        raise DataValidationError("mhat_values must have one entry per row")
    pis = _pi_by_stratum(
        dataset, problem.weights.w, problem.pi_source, problem.fixed_pi, stats.n_strata
    )
    index = _arm_index(dataset, problem.arm)
    out = _solve_sorted(
        index, dataset, problem.arm, problem.weights.w, pis, m,
        np.array([problem.tau]),
    )
    return float(out[0])


def check_sandwich(
    problem: ArmQuantileProblem, dataset: Dataset, stats: StrataStats, solution: float,
    tol: float = 1e-10,
) -> bool:
    """Verify the subgradient inequalities at a proposed solution.

    Uses the grouped convention: the slack on the lower inequality is the
    total weight of all arm units tied at the solution value, which reduces
    to the single unit's weight when outcomes are distinct.  Targets outside
    the attainable mass range certify the endpoint candidates instead.
    """
    xi = problem.weights.w
    pis = _pi_by_stratum(dataset, xi, problem.pi_source, problem.fixed_pi, stats.n_strata)
    index = _arm_index(dataset, problem.arm)
    denom_sorted = pis[index.s_sorted] if problem.arm == 1 else 1.0 - pis[index.s_sorted]
    w = xi[index.rows] / denom_sorted
    cum = np.cumsum(w)
    total = cum[-1]
    t = problem.tau * total
    pi_full = pis[dataset.s]
    af = dataset.a.astype(np.float64)
    m = np.asarray(problem.mhat_values, dtype=np.float64)
    if problem.arm == 1:
        t = t - (xi * (af - pi_full) / pi_full) @ m
    else:
        t = t + (xi * (af - pi_full) / (1.0 - pi_full)) @ m
    where = np.flatnonzero(index.y_distinct == solution)
    if where.size != 1:
        return False
    k = int(where[0])
    below = cum[index.group_last[k - 1]] if k > 0 else 0.0
    at = cum[index.group_last[k]]
    scale = max(abs(t), abs(total), 1.0)
    if t > at + tol * scale:
        return k == index.y_distinct.size - 1  # target above attainable mass
    if t < below - tol * scale:
        return k == 0  # target below attainable mass
    return True


def qte(
    dataset: Dataset,
    stats: StrataStats,
    model,
    grid: QuantileGrid,
    weights: WeightVector | None = None,
    pi_source: str = "estimated",
    fixed_pi=0.5,
) -> QteEstimate:
    """Adjusted QTE curve: per-tau difference of the two arm solutions.

    The model is evaluated on the dataset rows once per (arm, tau); with
    bootstrap weights the treated fractions are recomputed from the weights
    while the fitted adjustment stays fixed.
    """
    if weights is None:
        weights = WeightVector.unit(dataset.n)
    degenerate = [stats.labels[i] for i in stats.degenerate]
    if degenerate:
        raise DegenerateCellError(degenerate)
    taus = np.asarray(tuple(grid))
    m1 = np.column_stack([model.evaluate_all(1, t, dataset) for t in grid])
    m0 = np.column_stack([model.evaluate_all(0, t, dataset) for t in grid])
    pis = _pi_by_stratum(dataset, weights.w, pi_source, fixed_pi, stats.n_strata)
    idx1 = _arm_index(dataset, 1)
    idx0 = _arm_index(dataset, 0)
    q1 = _solve_sorted(idx1, dataset, 1, weights.w, pis, m1, taus)
    q0 = _solve_sorted(idx0, dataset, 0, weights.w, pis, m0, taus)
    return QteEstimate(taus=tuple(grid), q1=q1, q0=q0)


def pilot_quantiles(dataset: Dataset, stats: StrataStats, grid: QuantileGrid) -> PilotQuantiles:
    """Unadjusted arm quantiles (zero adjustment, unit weights)."""
    from .adjust import fit_none

    est = qte(dataset, stats, fit_none(grid), grid)
    return PilotQuantiles(taus=est.taus, q1=est.q1, q0=est.q0)
