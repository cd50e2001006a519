"""Monte Carlo harness: size/power of the three tests across designs.

One scenario fixes a design, a randomization scheme, a sample size, and a
list of adjustment methods.  Every replication draws fresh potential data,
assigns treatment, runs each method's full estimate-plus-bootstrap pipeline
on the shared draw, and tests against the cached truth (size) and the truth
shifted by ``delta`` (power).  Replication seeds derive from (master seed,
replication index), so results do not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adjust import METHODS, LassoConfig, fit_adjustment
from .bootstrap import bootstrap_se, difference_test, pointwise_test, run_bootstrap, uniform_band
from .data import Dataset, QuantileGrid, index_strata
from .dgp import DgpSpec, cached_true_qte, generate
from .errors import CarqteError, DataValidationError
from .estimator import pilot_quantiles, qte
from .randomization import SchemeSpec, assign

_FAILURE_BUDGET = 0.01


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to reproduce one Monte Carlo experiment."""

    dgp: DgpSpec
    scheme: SchemeSpec
    methods: tuple[str, ...]
    reps: int
    B: int
    taus: QuantileGrid
    delta: float = 1.5
    alpha: float = 0.05
    seed: int = 0
    pi_source: str = "estimated"
    fixed_pi: float = 0.5
    mc_n: int = 10_000
    mc_reps: int = 1_000
    oracle_seed: int = 0
    truth_cache: str | None = None
    workers: int = 1
    lasso_c: float = 1.1
    lasso_iters: int = 2

    def __post_init__(self) -> None:
        if self.reps < 1 or self.B < 2:
            raise DataValidationError("need reps >= 1 and B >= 2")
        for m in self.methods:
            if m not in METHODS:
                raise DataValidationError(f"unknown method {m!r}")

    @property
    def n(self) -> int:
        return self.dgp.n


@dataclass(frozen=True)
class ScenarioResult:
    """Aggregated rejection rates, biases, and bootstrap SEs per method/test."""

    spec: ScenarioSpec
    truth: tuple[float, ...]
    rows: dict
    failures: int

    def row(self, method: str, test: str) -> dict:
        return self.rows[(method, test)]


def _test_names(grid: QuantileGrid) -> list[str]:
    names = [f"pointwise@{tau:g}" for tau in grid]
    if len(grid) >= 2:
        taus = tuple(grid)
        names.append(f"diff({taus[-1]:g},{taus[0]:g})")
        names.append("uniform")
    return names


def _run_one_rep(spec: ScenarioSpec, truth: np.ndarray, rep: int) -> dict:
    """One replication; returns (method, test) -> (reject0, reject1, bias, se)."""
    latent = generate(
        spec.dgp, np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(rep, 0)))
    )
    a = assign(
        latent.s, spec.scheme,
        np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(rep, 1))),
    )
    dataset = Dataset.from_arrays(latent.observed(a), a, latent.s, latent.x)
    stats = index_strata(dataset, target_pi=spec.scheme.pi)
    grid = spec.taus
    taus = tuple(grid)
    pilot = pilot_quantiles(dataset, stats, grid)

    lasso_cfg = LassoConfig(
        c=spec.lasso_c,
        loading_iterations=spec.lasso_iters,
        forced_support=(1,) if dataset.n_covariates >= 1 else (),
    )
    out: dict = {}
    for method in spec.methods:
        model = fit_adjustment(method, dataset, stats, pilot, grid, lasso_config=lasso_cfg)
        point = qte(
            dataset, stats, model, grid,
            pi_source=spec.pi_source, fixed_pi=spec.fixed_pi,
        )
        # A fresh generator over the same stream per method: every method sees
        # identical bootstrap weights, so method comparisons are paired.
        boot_rng = np.random.default_rng(
            np.random.SeedSequence(spec.seed, spawn_key=(rep, 2))
        )
        draws = run_bootstrap(
            dataset, stats, model, grid, spec.B, boot_rng,
            pi_source=spec.pi_source, fixed_pi=spec.fixed_pi,
        )
        est = point.qte
        for j, tau in enumerate(taus):
            col = draws.draws[:, j]
            r0 = pointwise_test(est[j], col, truth[j], spec.alpha).reject
            r1 = pointwise_test(est[j], col, truth[j] + spec.delta, spec.alpha).reject
            out[(method, f"pointwise@{tau:g}")] = (
                float(r0), float(r1), float(est[j] - truth[j]), bootstrap_se(col),
            )
        if len(taus) >= 2:
            dname = f"diff({taus[-1]:g},{taus[0]:g})"
            dtruth = truth[-1] - truth[0]
            d0 = difference_test(
                est[-1], est[0], draws.draws[:, -1], draws.draws[:, 0],
                dtruth, spec.alpha,
            )
            d1 = difference_test(
                est[-1], est[0], draws.draws[:, -1], draws.draws[:, 0],
                dtruth + spec.delta, spec.alpha,
            )
            out[(method, dname)] = (
                float(d0.reject), float(d1.reject),
                float((est[-1] - est[0]) - dtruth), d0.se,
            )
            u0 = uniform_band(est, draws.draws, spec.alpha, truth)
            u1 = uniform_band(est, draws.draws, spec.alpha, truth + spec.delta)
            out[(method, "uniform")] = (
                float(u0.reject), float(u1.reject),
                float(np.mean(est - truth)), float(np.mean(u0.se)),
            )
    return out


def _rep_worker(args) -> tuple[int, dict | None, str | None]:
    spec, truth, rep = args
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return rep, _run_one_rep(spec, truth, rep), None
    except CarqteError as exc:
        return rep, None, f"rep {rep}: {exc}"


def scenario_truth(spec: ScenarioSpec) -> np.ndarray:
    """Oracle QTE truths for the scenario's design and grid."""
    return cached_true_qte(
        DgpSpec(spec.dgp.kind, spec.mc_n, spec.dgp.gamma),
        spec.taus,
        mc_n=spec.mc_n,
        mc_reps=spec.mc_reps,
        seed=spec.oracle_seed,
        cache_path=spec.truth_cache,
    )


def run_scenario(spec: ScenarioSpec, truth: np.ndarray | None = None) -> ScenarioResult:
    """Run all replications and aggregate rejection rates and moments.

    Per-replication failures are tolerated up to a 1% budget and excluded
    from the averages; beyond the budget the scenario raises.
    """
    if truth is None:
        truth = scenario_truth(spec)
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != (len(spec.taus),):
        raise DataValidationError("truth vector must match the quantile grid")

    tasks = [(spec, truth, r) for r in range(spec.reps)]
    results: list[tuple[int, dict | None, str | None]] = []
    workers = max(1, spec.workers)
    if workers > 1 and spec.reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_rep_worker, tasks, chunksize=8))
    else:
        results = [_rep_worker(t) for t in tasks]
    results.sort(key=lambda item: item[0])

    messages = [msg for _, _, msg in results if msg is not None]
    if len(messages) > max(_FAILURE_BUDGET * spec.reps, 0.0):
        raise DataValidationError(
            f"{len(messages)} of {spec.reps} replications failed; first: {messages[0]}"
        )
    per_rep = [payload for _, payload, _ in results if payload is not None]
    if not per_rep:
        raise DataValidationError("every replication failed")

    names = _test_names(spec.taus)
    rows: dict = {}
    reps_used = len(per_rep)
    for method in spec.methods:
        for test in names:
            vals = np.array([rep[(method, test)] for rep in per_rep])
            size = float(vals[:, 0].mean())
            power = float(vals[:, 1].mean())
            rows[(method, test)] = {
                "method": method,
                "test": test,
                "size": size,
                "size_mcse": float(np.sqrt(size * (1.0 - size) / reps_used)),
                "power": power,
                "power_mcse": float(np.sqrt(power * (1.0 - power) / reps_used)),
                "bias": float(vals[:, 2].mean()),
                "mean_se": float(vals[:, 3].mean()),
                "reps": reps_used,
            }
    return ScenarioResult(
        spec=spec, truth=tuple(float(v) for v in truth), rows=rows,
        failures=len(messages),
    )


# ---------------------------------------------------------------------------
# Table rendering
# ---------------------------------------------------------------------------

_TABLE_COLUMNS = (
    "dgp", "scheme", "n", "B", "method", "test", "reps",
    "size", "size_mcse", "power", "power_mcse", "bias", "mean_se",
)


def _result_records(results) -> list[dict]:
    if isinstance(results, ScenarioResult):
        results = [results]
    records = []
    for res in results:
        for (method, test), row in sorted(res.rows.items()):
            records.append(
                {
                    "dgp": res.spec.dgp.kind,
                    "scheme": res.spec.scheme.kind,
                    "n": res.spec.n,
                    "B": res.spec.B,
                    "method": method,
                    "test": test,
                    "reps": row["reps"],
                    "size": row["size"],
                    "size_mcse": row["size_mcse"],
                    "power": row["power"],
                    "power_mcse": row["power_mcse"],
                    "bias": row["bias"],
                    "mean_se": row["mean_se"],
                }
            )
    return records


def emit_table(results, format: str = "csv") -> str:
    """Render scenario results as CSV (full precision) or aligned text."""
    records = _result_records(results)
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_TABLE_COLUMNS)
        for rec in records:
            writer.writerow(
                [repr(rec[c]) if isinstance(rec[c], float) else rec[c] for c in _TABLE_COLUMNS]
            )
        return buf.getvalue()
    if format == "text":
        fmt = {
            "size": "{:.3f}", "size_mcse": "{:.3f}", "power": "{:.3f}",
            "power_mcse": "{:.3f}", "bias": "{:+.3f}", "mean_se": "{:.3f}",
        }
        cells = [
            [fmt.get(c, "{}").format(rec[c]) for c in _TABLE_COLUMNS] for rec in records
        ]
        widths = [
            max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
            for i, c in enumerate(_TABLE_COLUMNS)
        ]
        lines = ["  ".join(c.ljust(w) for c, w in zip(_TABLE_COLUMNS, widths)).rstrip()]
        for row in cells:
            lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
        return "\n".join(lines) + "\n"
    raise DataValidationError(f"unknown table format {format!r}")


def parse_table(text: str) -> list[dict]:
    """Inverse of ``emit_table(..., 'csv')``: exact round trip of the records."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        return []
    int_cols = {"n", "B", "reps"}
    str_cols = {"dgp", "scheme", "method", "test"}
    out = []
    for row in reader:
        rec = {}
        for name, cell in zip(header, row):
            if name in str_cols:
                rec[name] = cell
            elif name in int_cols:
                rec[name] = int(cell)
            else:
                rec[name] = float(cell)
        out.append(rec)
    return out


def default_workers() -> int:
    """Worker count from the CARQTE_WORKERS environment variable (default 1)."""
    raw = os.environ.get("CARQTE_WORKERS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
