"""Dataset container, quantile grid, and per-stratum bookkeeping.

Holds the (outcome, treatment, stratum, covariates) tuples of a randomized
experiment plus the weighted/unweighted stratum statistics every estimator in
the package consumes.  All containers are immutable after construction and
safe to share across workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import DataValidationError, EmptyStratumError


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """One experimental sample: outcomes, assignments, strata, covariates.

    ``s`` holds dense integer stratum codes ``0..n_strata-1``; the original
    labels (arbitrary hashable tokens) are kept in ``strata_labels`` in code
    order.  Use :meth:`from_arrays` rather than the raw constructor.
    """

    y: np.ndarray
    a: np.ndarray
    s: np.ndarray
    x: np.ndarray
    strata_labels: tuple

    @classmethod
    def from_arrays(cls, y, a, s, x) -> "Dataset":
        y = np.asarray(y, dtype=np.float64)
        a = np.asarray(a)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        s_in = np.asarray(s)
        n = y.shape[0]
        if n < 1:
            raise DataValidationError("dataset must contain at least one row")
        if y.ndim != 1 or a.ndim != 1 or s_in.ndim != 1 or x.ndim != 2:
            raise DataValidationError("y, a, s must be 1-D and x 2-D")
        if a.shape[0] != n or s_in.shape[0] != n or x.shape[0] != n:
            raise DataValidationError("y, a, s, x must share the same number of rows")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise DataValidationError("non-finite values in y or x")
        a_f = np.asarray(a, dtype=np.float64)
        if not np.all((a_f == 0.0) | (a_f == 1.0)):
            raise DataValidationError("treatment indicator a must be exactly 0 or 1")
        a_i = a_f.astype(np.int64)

        labels = list(dict.fromkeys(s_in.tolist()))
        try:
            labels = sorted(labels)
        except TypeError:
            pass  # mixed label types: keep first-appearance order
        code_of = {lab: k for k, lab in enumerate(labels)}
        codes = np.fromiter((code_of[v] for v in s_in.tolist()), dtype=np.int64, count=n)
        return cls(
            y=_readonly(y.copy()),
            a=_readonly(a_i),
            s=_readonly(codes),
            x=_readonly(x.copy()),
            strata_labels=tuple(labels),
        )

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_strata(self) -> int:
        return len(self.strata_labels)

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing quantile indices inside the open unit interval."""

    taus: tuple[float, ...]

    def __post_init__(self) -> None:
        t = np.asarray(self.taus, dtype=np.float64)
        if t.ndim != 1 or t.size < 1:
            raise DataValidationError("quantile grid must be a non-empty 1-D sequence")
        if not np.all((t > 0.0) & (t < 1.0)):
            raise DataValidationError("quantile indices must lie strictly inside (0, 1)")
        if t.size > 1 and not np.all(np.diff(t) > 0.0):
            raise DataValidationError("quantile indices must be strictly increasing")
        object.__setattr__(self, "taus", tuple(float(v) for v in t))

    @classmethod
    def of(cls, taus: Iterable[float]) -> "QuantileGrid":
        return cls(tuple(float(t) for t in taus))

    @classmethod
    def uniform(cls, lo: float, hi: float, count: int) -> "QuantileGrid":
        return cls(tuple(np.linspace(lo, hi, count)))

    def __iter__(self):
        return iter(self.taus)

    def __len__(self) -> int:
        return len(self.taus)

    def index_of(self, tau: float) -> int:
        try:
            return self.taus.index(float(tau))
        except ValueError:
            raise DataValidationError(f"tau={tau} is not on the grid {self.taus}") from None


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative per-unit weights; ``kind`` is "unit" or "bootstrap"."""

    w: np.ndarray
    kind: str = "unit"

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1:
            raise DataValidationError("weights must be 1-D")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise DataValidationError("weights must be finite and nonnegative")
        if self.kind not in ("unit", "bootstrap"):
            raise DataValidationError("weight kind must be 'unit' or 'bootstrap'")
        if self.kind == "unit" and not np.all(w == 1.0):
            raise DataValidationError("unit weights must all equal 1")
        object.__setattr__(self, "w", _readonly(w))

    @classmethod
    def unit(cls, n: int) -> "WeightVector":
        return cls(np.ones(n), kind="unit")

    @property
    def n(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class StrataStats:
    """Per-stratum counts, treated fractions, and imbalances.

    Arrays are indexed by dense stratum code.  ``imbalance`` is
    ``n1(s) - pi(s) * n(s)`` against the supplied target fraction.  The
    weighted fields are computed from the weight vector passed to
    :func:`index_strata`; with unit weights they coincide with the counts.
    """

    labels: tuple
    n: np.ndarray
    n1: np.ndarray
    n0: np.ndarray
    pi_hat: np.ndarray
    target_pi: np.ndarray
    imbalance: np.ndarray
    nw: np.ndarray
    n1w: np.ndarray
    n0w: np.ndarray
    pi_hat_w: np.ndarray
    degenerate: tuple[int, ...]
    weight_kind: str = "unit"

    @property
    def n_strata(self) -> int:
        return len(self.labels)

    @property
    def total(self) -> int:
        return int(self.n.sum())


def _per_stratum_targets(target_pi, labels: tuple) -> np.ndarray:
    """Expand a scalar / mapping / sequence target fraction to code order."""
    k = len(labels)
    if isinstance(target_pi, Mapping):
        try:
            out = np.array([float(target_pi[lab]) for lab in labels])
        except KeyError as exc:
            raise DataValidationError(f"target pi missing for stratum {exc.args[0]!r}") from None
    elif np.isscalar(target_pi):
        out = np.full(k, float(target_pi))
    else:
        out = np.asarray(target_pi, dtype=np.float64)
        if out.shape != (k,):
            raise DataValidationError("per-stratum target pi has wrong length")
    if not np.all((out > 0.0) & (out < 1.0)):
        raise DataValidationError("target fractions must lie strictly inside (0, 1)")
    return out


def weighted_arm_counts(
    s_codes: np.ndarray, a: np.ndarray, w: np.ndarray, n_strata: int
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted (treated, total) mass per stratum.

    Single accumulation path shared by point estimation and bootstrap so the
    two agree bit for bit when handed identical weights.
    """
    nw = np.bincount(s_codes, weights=w, minlength=n_strata)
    n1w = np.bincount(s_codes, weights=w * a, minlength=n_strata)
    return n1w, nw


def index_strata(
    dataset: Dataset,
    weights: WeightVector | None = None,
    target_pi=0.5,
) -> StrataStats:
    """Count units per stratum and arm, with weighted counterparts.

    Raises :class:`EmptyStratumError` when some stratum ends up with zero
    weighted mass.  Degenerate cells (a stratum whose treated or control arm
    is empty, in counts or in weighted mass) are recorded on the result, not
    raised; estimation entry points decide what to do with them.
    """
    if weights is None:
        weights = WeightVector.unit(dataset.n)
    if weights.n != dataset.n:
        raise DataValidationError("weight vector length does not match dataset")
    k = dataset.n_strata
    target = _per_stratum_targets(target_pi, dataset.strata_labels)

    n = np.bincount(dataset.s, minlength=k).astype(np.int64)
    n1 = np.bincount(dataset.s, weights=dataset.a.astype(np.float64), minlength=k)
    n1 = n1.astype(np.int64)
    n0 = n - n1
    af = dataset.a.astype(np.float64)
    n1w, nw = weighted_arm_counts(dataset.s, af, weights.w, k)
    n0w = nw - n1w

    if np.any(nw == 0.0):
        empty = [dataset.strata_labels[i] for i in np.flatnonzero(nw == 0.0)]
        raise EmptyStratumError(f"strata with zero weighted mass: {empty}")

    pi_hat = n1.astype(np.float64) / n.astype(np.float64)
    pi_hat_w = n1w / nw
    imbalance = n1.astype(np.float64) - target * n.astype(np.float64)

    degen = np.flatnonzero((n1 == 0) | (n0 == 0) | (n1w == 0.0) | (n0w == 0.0))
    return StrataStats(
        labels=dataset.strata_labels,
        n=_readonly(n),
        n1=_readonly(n1),
        n0=_readonly(n0),
        pi_hat=_readonly(pi_hat),
        target_pi=_readonly(target),
        imbalance=_readonly(imbalance),
        nw=_readonly(nw),
        n1w=_readonly(n1w),
        n0w=_readonly(n0w),
        pi_hat_w=_readonly(pi_hat_w),
        degenerate=tuple(int(i) for i in degen),
        weight_kind=weights.kind,
    )


def validate_for_estimation(stats: StrataStats) -> list[int]:
    """Stratum codes whose treated or control cell is empty (by count or mass)."""
    return list(stats.degenerate)


# ---------------------------------------------------------------------------
# CSV input
# ---------------------------------------------------------------------------

_REQUIRED_COLUMNS = ("y", "a", "s")


def load_csv(path) -> Dataset:
    """Read an experiment file: columns ``y``, ``a``, ``s``, then covariates.

    ``y`` must parse as float, ``a`` as the integers 0/1, ``s`` is kept as a
    string label.  Every remaining column is treated as a float covariate, in
    file order.  Missing or non-finite values are rejected.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in _REQUIRED_COLUMNS:
            if col not in header:
                raise DataValidationError(f"{path}: missing required column '{col}'")
        pos = {name: i for i, name in enumerate(header)}
        if len(pos) != len(header):
            raise DataValidationError(f"{path}: duplicate column names")
        x_cols = [h for h in header if h not in _REQUIRED_COLUMNS]

        ys: list[float] = []
        as_: list[int] = []
        ss: list[str] = []
        xs: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataValidationError(f"{path}:{lineno}: wrong number of fields")
            try:
                yv = float(row[pos["y"]])
            except ValueError:
                raise DataValidationError(f"{path}:{lineno}: column 'y' is not a float") from None
            av_raw = row[pos["a"]].strip()
            if av_raw not in ("0", "1"):
                raise DataValidationError(f"{path}:{lineno}: column 'a' must be 0 or 1")
            sv = row[pos["s"]].strip()
            if sv == "":
                raise DataValidationError(f"{path}:{lineno}: column 's' is empty")
            xrow = []
            for c in x_cols:
                cell = row[pos[c]].strip()
                if cell == "":
                    raise DataValidationError(f"{path}:{lineno}: missing value in column '{c}'")
                try:
                    xrow.append(float(cell))
                except ValueError:
                    raise DataValidationError(
                        f"{path}:{lineno}: column '{c}' is not a float"
                    ) from None
            ys.append(yv)
            as_.append(int(av_raw))
            ss.append(sv)
            xs.append(xrow)

    if not ys:
        raise DataValidationError(f"{path}: no data rows")
    x = np.asarray(xs, dtype=np.float64) if x_cols else np.empty((len(ys), 0))
    return Dataset.from_arrays(np.asarray(ys), np.asarray(as_), np.asarray(ss, dtype=object), x)
