"""Multiplier bootstrap and the inference products built from its draws.

Each replicate perturbs unit contributions with iid standard-exponential
weights, recomputes the weighted treated fractions, and re-solves the two
arm problems from the subgradient conditions; the fitted adjustment is never
re-estimated.  From the resulting draw matrix we build pointwise confidence
intervals and Wald tests, quantile-difference tests, and uniform bands.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import Dataset, QuantileGrid, StrataStats, WeightVector, weighted_arm_counts
from .errors import DataValidationError, DegenerateCellError, DegenerateWeightedCellError
from .estimator import _arm_index, _pi_by_stratum, _solve_sorted

# Spread of the standard normal between the 2.5% and 97.5% critical values.
_NORMAL_SPREAD = norm.ppf(0.975) - norm.ppf(0.025)

# A bootstrap draw is discarded when an arm's weighted mass in some stratum
# falls below this fraction of the stratum count.
_DEGENERATE_FRACTION = 1e-8
_MAX_RESAMPLE = 1000


@dataclass(frozen=True)
class BootstrapDraws:
    """B x len(grid) matrix of bootstrap QTE estimates."""

    draws: np.ndarray
    grid: QuantileGrid
    n_resampled: int = 0

    @property
    def B(self) -> int:
        return self.draws.shape[0]

    def at(self, tau: float) -> np.ndarray:
        return self.draws[:, self.grid.index_of(tau)]


@dataclass(frozen=True)
class InferenceResult:
    """Point estimate with bootstrap standard error, CI/band, and decision.

    Fields are scalars for pointwise/difference tests and per-tau arrays for
    the uniform band.  ``reject`` is None when no null value was supplied.
    """

    estimate: object
    se: object
    ci_lower: object
    ci_upper: object
    critical_value: float
    alpha: float
    reject: object = None
    null_value: object = None


def draw_weights(n: int, rng: np.random.Generator) -> WeightVector:
    """n iid standard-exponential bootstrap weights."""
    if n < 1:
        raise DataValidationError("need at least one weight")
    return WeightVector(rng.exponential(scale=1.0, size=n), kind="bootstrap")


def empirical_quantile(values: np.ndarray, nu) -> np.ndarray:
    """Order statistics with linear interpolation at rank nu*(B-1)+1.

    This single convention is shared by the standard-error, difference-test,
    and uniform-band constructions.
    """
    return np.quantile(np.asarray(values, dtype=np.float64), nu, method="linear")


def bootstrap_se(draws_at_tau: np.ndarray) -> float:
    """Normal-scaled interquantile spread of the bootstrap draws."""
    d = np.asarray(draws_at_tau, dtype=np.float64)
    if d.size < 2:
        raise DataValidationError("need at least two bootstrap draws")
    lo, hi = empirical_quantile(d, [0.025, 0.975])
    return float((hi - lo) / _NORMAL_SPREAD)


def run_bootstrap(
    dataset: Dataset,
    stats: StrataStats,
    model,
    grid: QuantileGrid,
    B: int,
    rng: np.random.Generator,
    pi_source: str = "estimated",
    fixed_pi=0.5,
) -> BootstrapDraws:
    """B multiplier-bootstrap QTE draws over the grid.

    One child RNG stream is spawned per replicate, so the draw matrix does
    not depend on execution order.  Draws in which some stratum's arm mass
    collapses are resampled within their stream and counted.
    """
    if B < 2:
        raise DataValidationError("need at least two bootstrap replicates")
    degenerate = [stats.labels[i] for i in stats.degenerate]
    if degenerate:
        raise DegenerateCellError(degenerate)
    n = dataset.n
    taus = np.asarray(tuple(grid))
    m1 = np.column_stack([model.evaluate_all(1, t, dataset) for t in grid])
    m0 = np.column_stack([model.evaluate_all(0, t, dataset) for t in grid])
    idx1 = _arm_index(dataset, 1)
    idx0 = _arm_index(dataset, 0)
    af = dataset.a.astype(np.float64)
    floor = _DEGENERATE_FRACTION * stats.n.astype(np.float64)

    draws = np.empty((B, taus.size))
    n_resampled = 0
    streams = rng.spawn(B)
    for b, stream in enumerate(streams):
        for _attempt in range(_MAX_RESAMPLE + 1):
            xi = draw_weights(n, stream).w
            n1w, nw = weighted_arm_counts(dataset.s, af, xi, stats.n_strata)
            n0w = nw - n1w
            if np.all(n1w > floor) and np.all(n0w > floor):
                break
            n_resampled += 1
        else:
            raise DegenerateWeightedCellError(
                f"replicate {b}: bootstrap weights kept zeroing an arm in some stratum"
            )
        if pi_source == "fixed":
            pis = _pi_by_stratum(dataset, xi, "fixed", fixed_pi, stats.n_strata)
        else:
            pis = n1w / nw
        q1 = _solve_sorted(idx1, dataset, 1, xi, pis, m1, taus)
        q0 = _solve_sorted(idx0, dataset, 0, xi, pis, m0, taus)
        draws[b] = q1 - q0
    return BootstrapDraws(draws=draws, grid=grid, n_resampled=n_resampled)


def pointwise_test(
    estimate: float,
    draws_at_tau: np.ndarray,
    null_value: float | None = None,
    alpha: float = 0.05,
) -> InferenceResult:
    """Normal-critical-value CI around the estimate, and a Wald decision.

    With a zero bootstrap standard error the test degenerates to an equality
    check of the estimate against the null.
    """
    se = bootstrap_se(draws_at_tau)
    z_hi = norm.ppf(1.0 - alpha / 2.0)
    z_lo = norm.ppf(alpha / 2.0)
    if se == 0.0:
        reject = None if null_value is None else bool(estimate != null_value)
        return InferenceResult(
            estimate=float(estimate), se=0.0, ci_lower=float(estimate),
            ci_upper=float(estimate), critical_value=float(z_hi), alpha=alpha,
            reject=reject, null_value=null_value,
        )
    reject = None
    if null_value is not None:
        reject = bool(abs(estimate - null_value) / se >= z_hi)
    return InferenceResult(
        estimate=float(estimate),
        se=se,
        ci_lower=float(estimate + z_lo * se),
        ci_upper=float(estimate + z_hi * se),
        critical_value=float(z_hi),
        alpha=alpha,
        reject=reject,
        null_value=null_value,
    )


def difference_test(
    estimate_1: float,
    estimate_2: float,
    draws_at_tau1: np.ndarray,
    draws_at_tau2: np.ndarray,
    null_value: float | None = None,
    alpha: float = 0.05,
) -> InferenceResult:
    """Test q(tau1) - q(tau2) using per-draw differences of the estimates."""
    d1 = np.asarray(draws_at_tau1, dtype=np.float64)
    d2 = np.asarray(draws_at_tau2, dtype=np.float64)
    if d1.shape != d2.shape:
        raise DataValidationError("draw columns must have equal length")
    return pointwise_test(estimate_1 - estimate_2, d1 - d2, null_value, alpha)


def sup_critical_value(sups: np.ndarray, alpha: float) -> float:
    """Smallest z covering at least 1-alpha of the sup statistics."""
    s = np.sort(np.asarray(sups, dtype=np.float64))
    b = s.size
    k = int(np.ceil((1.0 - alpha) * b))
    k = min(max(k, 1), b)
    return float(s[k - 1])


def uniform_band(
    estimates: np.ndarray,
    draws: np.ndarray,
    alpha: float = 0.05,
    null_values: np.ndarray | None = None,
) -> InferenceResult:
    """Simultaneous confidence band over the quantile grid.

    Per-tau standard errors come from the shared interquantile convention;
    draws are centered at their per-tau bootstrap median and studentized, and
    the critical value is the (1-alpha) empirical quantile of the per-draw
    sup.  Grid points with zero standard error are excluded from the sup
    (with a warning) and contribute a zero-width band segment.
    """
    est = np.asarray(estimates, dtype=np.float64)
    d = np.asarray(draws, dtype=np.float64)
    if d.ndim != 2 or d.shape[1] != est.size:
        raise DataValidationError("draws must be B x len(estimates)")
    if d.shape[0] < 2:
        raise DataValidationError("need at least two bootstrap draws")
    se = np.array([bootstrap_se(d[:, j]) for j in range(d.shape[1])])
    ok = se > 0.0
    if not ok.any():
        crit = 0.0
    else:
        if not ok.all():
            warnings.warn(
                "uniform band: zero bootstrap SE at some grid points; "
                "excluded from the sup",
                stacklevel=2,
            )
        center = np.quantile(d[:, ok], 0.5, axis=0, method="linear")
        stud = np.abs((d[:, ok] - center) / se[ok])
        crit = sup_critical_value(stud.max(axis=1), alpha)
    lower = est - crit * se
    upper = est + crit * se
    reject = None
    if null_values is not None:
        nv = np.asarray(null_values, dtype=np.float64)
        if nv.shape != est.shape:
            raise DataValidationError("null function must match the grid length")
        reject = bool(np.any((nv < lower) | (nv > upper)))
    return InferenceResult(
        estimate=est,
        se=se,
        ci_lower=lower,
        ci_upper=upper,
        critical_value=float(crit),
        alpha=alpha,
        reject=reject,
        null_value=null_values,
    )
