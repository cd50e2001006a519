"""Auxiliary-regression working models for quantile adjustment.

Every method fits, per (arm, stratum, tau) cell, a model of the probability
that the outcome falls below the arm's pilot quantile, and exposes the
adjustment value ``tau - fitted probability form`` through a single
:class:`AdjustmentModel` container.  Methods:

* ``na``     zero adjustment,
* ``lp``     linear probability with within-cell demeaned regressors,
* ``ml``     logistic quasi-ML; ``mlx`` adds pairwise interactions,
* ``lpml``   optimal linear recombination of the two logistic probability
             columns, ridge-stabilized; ``lpmlx`` with interactions,
* ``np``     logistic on a sieve basis with frozen median thresholds,
* ``lasso``  l1-penalized logistic with iterated penalty loadings and a
             post-selection refit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .data import Dataset, QuantileGrid, StrataStats
from .errors import (
    CellTooSmallError,
    DataValidationError,
    UnfittedTauError,
    UnknownStratumError,
)

METHODS = ("na", "lp", "ml", "lpml", "mlx", "lpmlx", "np", "lasso")

# Coefficient magnitude beyond which a logistic fit is treated as separated.
_SEPARATION_CAP = 30.0
_SCORE_TOL = 1e-8


# ---------------------------------------------------------------------------
# Feature maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureMap:
    """A fixed list of regressor terms evaluated on covariate rows.

    Terms are tagged tuples; thresholds and knots are frozen at construction
    so that the same map evaluates identically on new points:

    * ``("const",)``                    intercept
    * ``("pow", j, k)``                 x_j ** k
    * ``("prod", i, j)``                x_i * x_j
    * ``("thr", j, t)``                 x_j * 1{x_j > t}
    * ``("thrprod", i, ti, j, tj)``     x_i 1{x_i > ti} * x_j 1{x_j > tj}
    * ``("hinge", j, t, k)``            max(x_j - t, 0) ** k
    """

    kind: str
    terms: tuple[tuple, ...]

    @property
    def width(self) -> int:
        return len(self.terms)

    @property
    def has_intercept(self) -> bool:
        return any(t[0] == "const" for t in self.terms)

    @property
    def intercept_column(self) -> int | None:
        for i, t in enumerate(self.terms):
            if t[0] == "const":
                return i
        return None

    def names(self) -> tuple[str, ...]:
        out = []
        for t in self.terms:
            tag = t[0]
            if tag == "const":
                out.append("1")
            elif tag == "pow":
                out.append(f"x{t[1] + 1}" if t[2] == 1 else f"x{t[1] + 1}^{t[2]}")
            elif tag == "prod":
                out.append(f"x{t[1] + 1}*x{t[2] + 1}")
            elif tag == "thr":
                out.append(f"x{t[1] + 1}>|{t[2]:g}")
            elif tag == "thrprod":
                out.append(f"x{t[1] + 1}>|{t[2]:g}*x{t[3] + 1}>|{t[4]:g}")
            else:
                out.append(f"(x{t[1] + 1}-{t[2]:g})+^{t[3]}")
        return tuple(out)

    def build(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the map on an (n, d) covariate matrix."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        n = x.shape[0]
        cols = np.empty((n, len(self.terms)))
        for c, t in enumerate(self.terms):
            tag = t[0]
            if tag == "const":
                cols[:, c] = 1.0
            elif tag == "pow":
                cols[:, c] = x[:, t[1]] ** t[2]
            elif tag == "prod":
                cols[:, c] = x[:, t[1]] * x[:, t[2]]
            elif tag == "thr":
                v = x[:, t[1]]
                cols[:, c] = v * (v > t[2])
            elif tag == "thrprod":
                vi = x[:, t[1]]
                vj = x[:, t[3]]
                cols[:, c] = vi * (vi > t[2]) * vj * (vj > t[4])
            elif tag == "hinge":
                cols[:, c] = np.maximum(x[:, t[1]] - t[2], 0.0) ** t[3]
            else:  # pragma: no cover - construction guards against this
                raise DataValidationError(f"unknown feature term {t!r}")
        return cols


def raw_features(d: int) -> FeatureMap:
    """The covariates themselves, no intercept (linear probability model)."""
    if d < 1:
        raise DataValidationError("raw feature map needs at least one covariate")
    return FeatureMap("raw", tuple(("pow", j, 1) for j in range(d)))


def logistic_features(d: int, interactions: bool = False) -> FeatureMap:
    """Intercept plus covariates; optionally all pairwise products."""
    if d < 1:
        raise DataValidationError("logistic feature map needs at least one covariate")
    terms: list[tuple] = [("const",)]
    terms += [("pow", j, 1) for j in range(d)]
    if interactions:
        terms += [("prod", i, j) for i in range(d) for j in range(i + 1, d)]
    return FeatureMap("with-interactions" if interactions else "logit-base", tuple(terms))


def hd_dictionary(d: int) -> FeatureMap:
    """Default high-dimensional dictionary: intercept plus raw covariates."""
    if d < 1:
        raise DataValidationError("dictionary needs at least one covariate")
    return FeatureMap("hd-dictionary", tuple([("const",)] + [("pow", j, 1) for j in range(d)]))


@dataclass(frozen=True)
class SieveSpec:
    """Which sieve basis to build.

    ``roster``      intercept, covariates, pairwise products, and pairwise
                    median-threshold products;
    ``polynomial``  per-covariate powers 1..degree;
    ``spline``      per-covariate truncated-power splines of the given order
                    with ``knots`` interior knots at equally spaced quantiles.
    """

    kind: str = "roster"
    degree: int = 2
    spline_order: int = 2
    knots: int = 1


def build_sieve_map(x_matrix: np.ndarray, spec: SieveSpec) -> FeatureMap:
    """Construct a sieve basis, freezing thresholds/knots from the sample."""
    x = np.asarray(x_matrix, dtype=np.float64)
    d = x.shape[1]
    terms: list[tuple] = [("const",)]
    if spec.kind == "roster":
        t = np.median(x, axis=0)
        terms += [("pow", j, 1) for j in range(d)]
        terms += [("prod", i, j) for i in range(d) for j in range(i + 1, d)]
        terms += [
            ("thrprod", i, float(t[i]), j, float(t[j]))
            for i in range(d)
            for j in range(i + 1, d)
        ]
    elif spec.kind == "polynomial":
        if spec.degree < 1:
            raise DataValidationError("polynomial degree must be at least 1")
        for j in range(d):
            terms += [("pow", j, k) for k in range(1, spec.degree + 1)]
    elif spec.kind == "spline":
        r = spec.spline_order
        if r < 2 or spec.knots < 1:
            raise DataValidationError("spline needs order >= 2 and >= 1 knot")
        qs = np.arange(1, spec.knots + 1) / (spec.knots + 1)
        for j in range(d):
            terms += [("pow", j, k) for k in range(1, r)]
            for t in np.quantile(x[:, j], qs):
                terms.append(("hinge", j, float(t), r - 1))
    else:
        raise DataValidationError(f"unknown sieve kind {spec.kind!r}")
    return FeatureMap("sieve", tuple(terms))


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdjustmentModel:
    """Fitted auxiliary regressions for every (arm, stratum, tau) cell.

    ``coef`` maps ``(arm, stratum_code, tau_index)`` to a coefficient vector,
    or ``None`` for a cell degraded to the zero adjustment.  The lpml family
    additionally stores the underlying logistic coefficients and the per-cell
    demeaning/scaling applied to the probability columns.
    """

    method: str
    taus: tuple[float, ...]
    n_strata: int | None
    feature_map: FeatureMap | None
    coef: dict
    ml_coef: dict | None = None
    normalization: dict | None = None
    support: dict | None = None
    diagnostics: dict = field(default_factory=dict)
    hd_raw_mhat: bool = False

    def tau_index(self, tau: float) -> int:
        try:
            return self.taus.index(float(tau))
        except ValueError:
            raise UnfittedTauError(f"tau={tau} not in fitted grid {self.taus}") from None

    def _check_stratum(self, s: int) -> None:
        if self.n_strata is not None and not (0 <= s < self.n_strata):
            raise UnknownStratumError(f"stratum code {s} outside fitted range")

    def evaluate_all(self, arm: int, tau: float, dataset: Dataset) -> np.ndarray:
        """Adjustment values for every row of a dataset at one (arm, tau)."""
        ti = self.tau_index(tau)
        n = dataset.n
        if self.method == "na":
            return np.zeros(n)
        if self.n_strata is not None and dataset.n_strata > self.n_strata:
            raise UnknownStratumError("dataset has strata the model was not fitted on")
        H = self.feature_map.build(dataset.x)
        out = np.zeros(n)
        for s in range(dataset.n_strata):
            rows = np.flatnonzero(dataset.s == s)
            if rows.size == 0:
                continue
            out[rows] = self._eval_cell(arm, s, ti, tau, H[rows])
        return out

    def evaluate(self, arm: int, tau: float, s: int, x_row: np.ndarray) -> float:
        """Adjustment value at one point; 0 for degraded or ``na`` cells."""
        ti = self.tau_index(tau)
        if self.method == "na":
            return 0.0
        self._check_stratum(int(s))
        H = self.feature_map.build(np.asarray(x_row, dtype=np.float64).reshape(1, -1))
        return float(self._eval_cell(arm, int(s), ti, tau, H)[0])

    def _eval_cell(self, arm: int, s: int, ti: int, tau: float, H: np.ndarray) -> np.ndarray:
        theta = self.coef.get((arm, s, ti))
        if theta is None:
            return np.zeros(H.shape[0])
        if self.method == "lp":
            return tau - H @ theta
        if self.method in ("ml", "mlx", "np"):
            return tau - expit(H @ theta)
        if self.method == "lasso":
            p = expit(H @ theta)
            return p if self.hd_raw_mhat else tau - p
        if self.method in ("lpml", "lpmlx"):
            th1 = self.ml_coef.get((1, s, ti))
            th0 = self.ml_coef.get((0, s, ti))
            if th1 is None or th0 is None:
                return np.zeros(H.shape[0])
            w = np.column_stack([expit(H @ th1), expit(H @ th0)])
            mean, sd = self.normalization[(arm, s, ti)]
            wd = np.where(sd > 0.0, (w - mean) / np.where(sd > 0.0, sd, 1.0), 0.0)
            return tau - wd @ theta
        raise DataValidationError(f"unknown method {self.method!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Logistic quasi-ML on one cell
# ---------------------------------------------------------------------------


def _logit_objective(H, y, theta, ridge):
    t = H @ theta
    nll = np.mean(np.logaddexp(0.0, t) - y * t)
    if ridge > 0.0:
        nll += 0.5 * ridge * float(theta @ theta)
    return nll


def _logit_newton(H, y, ridge, max_iter=200):
    n, p = H.shape
    theta = np.zeros(p)
    separated = False
    for _ in range(max_iter):
        t = H @ theta
        prob = expit(t)
        score = H.T @ (y - prob) / n - ridge * theta
        if np.max(np.abs(score)) <= _SCORE_TOL:
            return theta, True, separated
        w = prob * (1.0 - prob)
        hess = (H * w[:, None]).T @ H / n + ridge * np.eye(p)
        step = np.linalg.lstsq(hess, score, rcond=None)[0]
        obj = _logit_objective(H, y, theta, ridge)
        eta = 1.0
        cand = theta + step
        while _logit_objective(H, y, cand, ridge) > obj + 1e-14 and eta > 1e-10:
            eta *= 0.5
            cand = theta + eta * step
        theta = cand
        if ridge == 0.0 and np.max(np.abs(theta)) > _SEPARATION_CAP:
            return theta, False, True
    return theta, False, separated


def fit_logit_cell(features_matrix: np.ndarray, labels: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Logistic likelihood maximization on one cell by Newton iteration.

    Separation (coefficients running away) is detected via a magnitude cap
    and resolved by refitting with a small ridge penalty scaled as 1e-4 / n;
    the refit is flagged with a warning.
    """
    H = np.asarray(features_matrix, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != y.shape[0] or H.shape[0] < 1:
        raise DataValidationError("bad cell shapes for logistic fit")
    theta, converged, separated = _logit_newton(H, y, ridge)
    if separated:
        warnings.warn("separated logistic cell; refitting with small ridge", stacklevel=2)
        ridge_refit = max(ridge, 1e-4 / H.shape[0])
        theta, converged, _ = _logit_newton(H, y, ridge_refit)
    if not converged:
        warnings.warn("logistic fit did not reach score tolerance", stacklevel=2)
    return theta


# ---------------------------------------------------------------------------
# Cell iteration helpers
# ---------------------------------------------------------------------------


def _cell_rows(dataset: Dataset, stats: StrataStats):
    out = {}
    for s in range(stats.n_strata):
        in_s = dataset.s == s
        out[(1, s)] = np.flatnonzero(in_s & (dataset.a == 1))
        out[(0, s)] = np.flatnonzero(in_s & (dataset.a == 0))
    return out


def _degrade(coef: dict, a: int, s: int, n_taus: int) -> None:
    for ti in range(n_taus):
        coef[(a, s, ti)] = None


def _finish(model: AdjustmentModel, degraded: list) -> AdjustmentModel:
    if degraded:
        warnings.warn(
            f"{model.method}: {len(degraded)} cell(s) too small, degraded to zero adjustment",
            stacklevel=3,
        )
        if all(v is None for v in model.coef.values()):
            raise CellTooSmallError(f"{model.method}: every (arm, stratum) cell is too small")
    return model


# ---------------------------------------------------------------------------
# Fitters
# ---------------------------------------------------------------------------


def fit_none(grid: QuantileGrid) -> AdjustmentModel:
    """The no-adjustment model: evaluates to zero everywhere."""
    return AdjustmentModel(
        method="na", taus=tuple(grid), n_strata=None, feature_map=None, coef={}
    )


def fit_lp(
    dataset: Dataset,
    stats: StrataStats,
    pilot,
    grid: QuantileGrid,
    features: FeatureMap | None = None,
) -> AdjustmentModel:
    """Within-cell least squares of the outcome indicator on demeaned regressors."""
    fm = features if features is not None else raw_features(dataset.n_covariates)
    H = fm.build(dataset.x)
    p = fm.width
    taus = tuple(grid)
    cells = _cell_rows(dataset, stats)
    coef: dict = {}
    degraded: list = []
    singular: list = []
    for (a, s), rows in cells.items():
        if rows.size < p + 2:
            _degrade(coef, a, s, len(taus))
            degraded.append((a, s))
            continue
        Hc = H[rows]
        wdot = Hc - Hc.mean(axis=0)
        for ti, tau in enumerate(taus):
            labels = (dataset.y[rows] <= pilot.q(a, tau)).astype(np.float64)
            theta, _, rank, _ = np.linalg.lstsq(wdot, labels, rcond=None)
            if rank < p:
                singular.append((a, s, ti))
            coef[(a, s, ti)] = theta
    model = AdjustmentModel(
        method="lp",
        taus=taus,
        n_strata=stats.n_strata,
        feature_map=fm,
        coef=coef,
        diagnostics={"degraded": tuple(degraded), "singular_gram": tuple(singular)},
    )
    if singular:
        warnings.warn(
            f"lp: singular within-cell Gram in {len(singular)} cell(s); "
            "minimum-norm solution used",
            stacklevel=2,
        )
    return _finish(model, degraded)


def _fit_logit_family(
    dataset: Dataset,
    stats: StrataStats,
    pilot,
    grid: QuantileGrid,
    features: FeatureMap,
    method: str,
) -> AdjustmentModel:
    H = features.build(dataset.x)
    p = features.width
    taus = tuple(grid)
    cells = _cell_rows(dataset, stats)
    coef: dict = {}
    degraded: list = []
    separated: list = []
    for (a, s), rows in cells.items():
        if rows.size < p + 2:
            _degrade(coef, a, s, len(taus))
            degraded.append((a, s))
            continue
        Hc = H[rows]
        yc = dataset.y[rows]
        for ti, tau in enumerate(taus):
            labels = (yc <= pilot.q(a, tau)).astype(np.float64)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                theta = fit_logit_cell(Hc, labels)
            if any("separated" in str(w.message) for w in caught):
                separated.append((a, s, ti))
            coef[(a, s, ti)] = theta
    model = AdjustmentModel(
        method=method,
        taus=taus,
        n_strata=stats.n_strata,
        feature_map=features,
        coef=coef,
        diagnostics={"degraded": tuple(degraded), "separated": tuple(separated)},
    )
    return _finish(model, degraded)


def fit_ml(
    dataset: Dataset,
    stats: StrataStats,
    pilot,
    grid: QuantileGrid,
    features: FeatureMap | None = None,
    method: str = "ml",
) -> AdjustmentModel:
    """Logistic quasi-ML per cell on indicator labels below the pilot quantile."""
    fm = features if features is not None else logistic_features(dataset.n_covariates)
    return _fit_logit_family(dataset, stats, pilot, grid, fm, method)


def fit_np(
    dataset: Dataset,
    stats: StrataStats,
    pilot,
    grid: QuantileGrid,
    sieve_map: FeatureMap,
) -> AdjustmentModel:
    """Sieve logistic fit; identical machinery to ``ml`` on the sieve basis."""
    return _fit_logit_family(dataset, stats, pilot, grid, sieve_map, "np")


def fit_lpml(
    dataset: Dataset,
    stats: StrataStats,
    pilot,
    grid: QuantileGrid,
    features: FeatureMap | None = None,
    ml_model: AdjustmentModel | None = None,
    method: str = "lpml",
    ridge_delta: float | None = None,
) -> AdjustmentModel:
    """Optimal linear recombination of the two logistic probability columns.

    Per cell, the pair (treated-model probability, control-model probability)
    is demeaned, scaled by its cell standard deviation, and regressed on the
    indicator label with a ridge of 1/n on the 2x2 system.
    """
    fm = features if features is not None else logistic_features(dataset.n_covariates)
    if ml_model is None:
        ml_model = fit_ml(dataset, stats, pilot, grid, fm, method="ml")
    if ml_model.feature_map is not fm and ml_model.feature_map.terms != fm.terms:
        raise DataValidationError("ml_model was fitted with a different feature map")
    H = fm.build(dataset.x)
    taus = tuple(grid)
    cells = _cell_rows(dataset, stats)
    delta = 1.0 / dataset.n if ridge_delta is None else float(ridge_delta)
    coef: dict = {}
    norms: dict = {}
    degraded: list = []
    zero_var: list = []
    for (a, s), rows in cells.items():
        if rows.size < 4:  # two coefficients plus the usual slack
            _degrade(coef, a, s, len(taus))
            degraded.append((a, s))
            continue
        Hc = H[rows]
        yc = dataset.y[rows]
        for ti, tau in enumerate(taus):
            th1 = ml_model.coef.get((1, s, ti))
            th0 = ml_model.coef.get((0, s, ti))
            if th1 is None or th0 is None:
                coef[(a, s, ti)] = None
                continue
            w = np.column_stack([expit(Hc @ th1), expit(Hc @ th0)])
            mean = w.mean(axis=0)
            sd = w.std(axis=0)
            ok = sd > 0.0
            if not ok.all():
                zero_var.append((a, s, ti))
            wd = np.where(ok, (w - mean) / np.where(ok, sd, 1.0), 0.0)
            nc = rows.size
            gram = wd.T @ wd / nc + delta * np.eye(2)
            labels = (yc <= pilot.q(a, tau)).astype(np.float64)
            rhs = wd.T @ labels / nc
            theta = np.linalg.solve(gram, rhs)
            theta[~ok] = 0.0
            coef[(a, s, ti)] = theta
            norms[(a, s, ti)] = (mean, sd)
    model = AdjustmentModel(
        method=method,
        taus=taus,
        n_strata=stats.n_strata,
        feature_map=fm,
        coef=coef,
        ml_coef=dict(ml_model.coef),
        normalization=norms,
        diagnostics={"degraded": tuple(degraded), "zero_variance": tuple(zero_var)},
    )
    return _finish(model, degraded)


# ---------------------------------------------------------------------------
# L1-penalized logistic with iterated loadings, plus post-selection refit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LassoConfig:
    """Tuning constants for the penalized logistic fit.

    ``penalty_form`` selects how the penalty level depends on the cell size
    and dictionary width: "c31" uses Phi^-1(1 - 1/(p log n_cell)), "a9" uses
    Phi^-1(1 - 0.1/(4 log(n_cell) p)).  ``forced_support`` columns are always
    included in the post-selection refit (a flat tuple, or a mapping keyed by
    (arm, stratum)).  The intercept column is never penalized.
    """

    c: float = 1.1
    loading_iterations: int = 2
    forced_support: object = ()
    max_support_cap: int | None = None
    penalty_form: str = "c31"
    loading_tol: float = 1e-4
    kkt_tol: float = 1e-8
    max_outer: int = 200

    def __post_init__(self) -> None:
        if self.c <= 0.0 or self.loading_iterations < 1:
            raise DataValidationError("lasso config needs c > 0 and K >= 1")
        if self.penalty_form not in ("c31", "a9"):
            raise DataValidationError("penalty_form must be 'c31' or 'a9'")

    def forced_for(self, a: int, s: int) -> tuple[int, ...]:
        fs = self.forced_support
        if isinstance(fs, Mapping):
            return tuple(fs.get((a, s), ()))
        return tuple(fs)


def penalty_level(n_cell: int, p_penalized: int, config: LassoConfig) -> float:
    """Cell-level penalty c * sqrt(n) * Phi^-1(...) for the chosen form."""
    logn = max(np.log(n_cell), 1.0)
    if config.penalty_form == "c31":
        tail = 1.0 / (p_penalized * logn)
    else:
        tail = 0.1 / (4.0 * logn * p_penalized)
    tail = min(tail, 0.5)
    return config.c * np.sqrt(n_cell) * norm.ppf(1.0 - tail)


def _l1_kkt_residual(H, y, theta, lam):
    """Max violation of the subgradient optimality conditions."""
    n = H.shape[0]
    g = H.T @ (expit(H @ theta) - y) / n
    res = np.where(
        lam == 0.0,
        np.abs(g),
        np.where(
            theta != 0.0,
            np.abs(g + np.sign(theta) * lam),
            np.maximum(np.abs(g) - lam, 0.0),
        ),
    )
    return float(np.max(res)) if res.size else 0.0


def _l1_logit_cd(H, y, lam, theta0=None, max_outer=200, kkt_tol=1e-8):
    """Coordinate descent on iteratively reweighted quadratic majorizations.

    ``lam`` is the per-column penalty level on the mean negative
    log-likelihood scale; zero entries are unpenalized.
    """
    n, p = H.shape
    theta = np.zeros(p) if theta0 is None else theta0.copy()
    col_sq = H**2
    for _ in range(max_outer):
        t = H @ theta
        prob = expit(t)
        w = np.maximum(prob * (1.0 - prob), 1e-6)
        z = t + (y - prob) / w
        r = z - t
        denom = np.maximum((w[:, None] * col_sq).mean(axis=0), 1e-12)
        for _sweep in range(100):
            max_delta = 0.0
            for h in range(p):
                th_old = theta[h]
                rho = np.mean(w * H[:, h] * r) + denom[h] * th_old
                if lam[h] > 0.0:
                    th_new = np.sign(rho) * max(abs(rho) - lam[h], 0.0) / denom[h]
                else:
                    th_new = rho / denom[h]
                if th_new != th_old:
                    r = r - H[:, h] * (th_new - th_old)
                    theta[h] = th_new
                    max_delta = max(max_delta, abs(th_new - th_old))
            if max_delta < 1e-12:
                break
        kkt = _l1_kkt_residual(H, y, theta, lam)
        if kkt <= kkt_tol:
            return theta, kkt, True
    return theta, _l1_kkt_residual(H, y, theta, lam), False


def fit_hd_lasso(
    dataset: Dataset,
    stats: StrataStats,
    pilot,
    grid: QuantileGrid,
    dictionary: FeatureMap | None = None,
    config: LassoConfig | None = None,
    hd_raw_mhat: bool = False,
) -> AdjustmentModel:
    """Penalized logistic per cell, then an unpenalized refit on the support.

    Penalty loadings start from the second moments of the centered indicator
    label times each squared column and are refreshed from fitted residuals
    over ``config.loading_iterations`` rounds.  The selected support, joined
    with any forced columns (and the intercept), is refitted without penalty;
    evaluation uses the refitted coefficients.
    """
    fm = dictionary if dictionary is not None else hd_dictionary(dataset.n_covariates)
    cfg = config if config is not None else LassoConfig()
    H = fm.build(dataset.x)
    p = fm.width
    icol = fm.intercept_column
    pen_cols = np.array([j for j in range(p) if j != icol], dtype=np.int64)
    taus = tuple(grid)
    cells = _cell_rows(dataset, stats)
    coef: dict = {}
    support: dict = {}
    degraded: list = []
    kkt_diag: dict = {}
    hd_theta: dict = {}
    hd_lam: dict = {}
    empty_support: list = []
    not_converged: list = []
    for (a, s), rows in cells.items():
        if rows.size < 3:
            _degrade(coef, a, s, len(taus))
            degraded.append((a, s))
            continue
        Hc = H[rows]
        yc = dataset.y[rows]
        nc = rows.size
        rho = penalty_level(nc, max(pen_cols.size, 1), cfg)
        forced = tuple(j for j in cfg.forced_for(a, s) if 0 <= j < p)
        for ti, tau in enumerate(taus):
            labels = (yc <= pilot.q(a, tau)).astype(np.float64)
            ybar = labels.mean()
            # Initial loadings: centered-label second moments (no square root).
            sig = ((labels - ybar) ** 2)[:, None] * (Hc**2)
            loadings = sig.mean(axis=0)
            theta = None
            for _k in range(cfg.loading_iterations + 1):
                lam = np.zeros(p)
                lam[pen_cols] = rho * loadings[pen_cols] / nc
                lam = np.maximum(lam, 0.0)
                theta, kkt, ok = _l1_logit_cd(
                    Hc, labels, lam, theta0=theta, max_outer=cfg.max_outer,
                    kkt_tol=cfg.kkt_tol,
                )
                if not ok:
                    not_converged.append((a, s, ti, kkt))
                resid = labels - expit(Hc @ theta)
                new_loadings = np.sqrt(((Hc * resid[:, None]) ** 2).mean(axis=0))
                rel = np.max(
                    np.abs(new_loadings - loadings) / np.maximum(np.abs(loadings), 1e-12)
                )
                loadings = new_loadings
                if rel < cfg.loading_tol:
                    break
            kkt_diag[(a, s, ti)] = kkt
            hd_theta[(a, s, ti)] = theta.copy()
            hd_lam[(a, s, ti)] = lam.copy()
            selected = [j for j in pen_cols if theta[j] != 0.0]
            if cfg.max_support_cap is not None and len(selected) > cfg.max_support_cap:
                selected.sort(key=lambda j: -abs(theta[j]))
                selected = selected[: cfg.max_support_cap]
            keep = set(selected) | set(forced)
            if icol is not None:
                keep.add(icol)
            # Refit must stay overdetermined within the cell.
            cap = max(nc - 2, 1)
            if len(keep) > cap:
                ordered = sorted(
                    keep, key=lambda j: (j not in forced, j != icol, -abs(theta[j]))
                )
                keep = set(ordered[:cap]) | set(forced)
            cols = tuple(sorted(keep))
            if not cols:
                empty_support.append((a, s, ti))
                coef[(a, s, ti)] = np.zeros(p)
                support[(a, s, ti)] = ()
                continue
            theta_post = fit_logit_cell(Hc[:, cols], labels)
            full = np.zeros(p)
            full[list(cols)] = theta_post
            coef[(a, s, ti)] = full
            support[(a, s, ti)] = cols
    if empty_support:
        warnings.warn(
            f"lasso: empty support in {len(empty_support)} cell(s); zero coefficients kept",
            stacklevel=2,
        )
    if not_converged:
        worst = max(item[3] for item in not_converged)
        warnings.warn(
            f"lasso: inner solver hit iteration cap in {len(not_converged)} fit(s); "
            f"worst KKT residual {worst:.3e}",
            stacklevel=2,
        )
    model = AdjustmentModel(
        method="lasso",
        taus=taus,
        n_strata=stats.n_strata,
        feature_map=fm,
        coef=coef,
        support=support,
        diagnostics={
            "degraded": tuple(degraded),
            "kkt": kkt_diag,
            "hd_theta": hd_theta,
            "hd_lam": hd_lam,
            "empty_support": tuple(empty_support),
        },
        hd_raw_mhat=hd_raw_mhat,
    )
    return _finish(model, degraded)


# ---------------------------------------------------------------------------
# Method dispatch
# ---------------------------------------------------------------------------


def fit_adjustment(
    method: str,
    dataset: Dataset,
    stats: StrataStats,
    pilot,
    grid: QuantileGrid,
    lasso_config: LassoConfig | None = None,
    sieve_spec: SieveSpec | None = None,
) -> AdjustmentModel:
    """Fit the named auxiliary regression with its standard feature roster."""
    d = dataset.n_covariates
    if method == "na":
        return fit_none(grid)
    if method == "lp":
        return fit_lp(dataset, stats, pilot, grid)
    if method == "ml":
        return fit_ml(dataset, stats, pilot, grid, logistic_features(d))
    if method == "mlx":
        return fit_ml(dataset, stats, pilot, grid, logistic_features(d, True), method="mlx")
    if method == "lpml":
        return fit_lpml(dataset, stats, pilot, grid, logistic_features(d))
    if method == "lpmlx":
        return fit_lpml(
            dataset, stats, pilot, grid, logistic_features(d, True), method="lpmlx"
        )
    if method == "np":
        sieve = build_sieve_map(dataset.x, sieve_spec or SieveSpec("roster"))
        return fit_np(dataset, stats, pilot, grid, sieve)
    if method == "lasso":
        cfg = lasso_config
        if cfg is None:
            # Default forced support: the first covariate column of (1, x).
            cfg = LassoConfig(forced_support=(1,) if d >= 1 else ())
        return fit_hd_lasso(dataset, stats, pilot, grid, hd_dictionary(d), cfg)
    raise DataValidationError(f"unknown adjustment method {method!r}")
