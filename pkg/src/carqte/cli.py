"""Command line entry points: ``estimate`` on a CSV and ``simulate``.

Exit codes: 0 success, 2 usage error, 3 data validation failure, 4 numerical
failure.  All outputs embed the resolved configuration and seed; identical
configurations produce byte-identical reports.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .adjust import METHODS, LassoConfig, fit_adjustment
from .bootstrap import difference_test, pointwise_test, run_bootstrap, uniform_band
from .data import QuantileGrid, index_strata, load_csv, validate_for_estimation
from .dgp import DGP_KINDS, DgpSpec
from .errors import CarqteError, DataValidationError, NumericalError
from .estimator import pilot_quantiles, qte
from .harness import ScenarioSpec, default_workers, emit_table, run_scenario
from .randomization import SCHEME_KINDS, SchemeSpec

_EXIT_OK = 0
_EXIT_USAGE = 2
_EXIT_DATA = 3
_EXIT_NUMERIC = 4


class _UsageError(Exception):
    pass


def _parse_taus(raw) -> QuantileGrid:
    if isinstance(raw, QuantileGrid):
        return raw
    if isinstance(raw, (list, tuple)):
        return QuantileGrid.of(float(v) for v in raw)
    try:
        return QuantileGrid.of(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise DataValidationError(f"cannot parse quantile list {raw!r}") from None


def _parse_pi(raw: str) -> tuple[str, float]:
    if raw == "estimated":
        return "estimated", 0.5
    if raw.startswith("fixed:"):
        try:
            value = float(raw.split(":", 1)[1])
        except ValueError:
            raise DataValidationError(f"cannot parse pi spec {raw!r}") from None
        if not (0.0 < value < 1.0):
            raise DataValidationError("fixed pi must lie strictly inside (0, 1)")
        return "fixed", value
    raise DataValidationError("--pi must be 'estimated' or 'fixed:<value>'")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _dump_json(payload: dict, path: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load_config_defaults(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Fill unset options from a JSON config file; explicit flags win."""
    if not getattr(args, "config", None):
        return
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataValidationError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataValidationError("config file must hold a JSON object")
    for key, value in cfg.items():
        name = key.replace("-", "_")
        if not hasattr(args, name):
            continue  # schema tolerance: ignore unknown fields
        if name in args._explicit:  # noqa: SLF001 - set below in main()
            continue
        setattr(args, name, value)


def cmd_estimate(args: argparse.Namespace) -> int:
    grid = _parse_taus(args.taus)
    pi_source, fixed_pi = _parse_pi(args.pi)
    dataset = load_csv(args.input)
    stats = index_strata(dataset, target_pi=args.target_pi)
    degenerate = validate_for_estimation(stats)
    if degenerate:
        labels = [dataset.strata_labels[i] for i in degenerate]
        raise DataValidationError(
            f"strata without treated or control units: {labels}; "
            "estimation would divide by a zero treated fraction"
        )
    pilot = pilot_quantiles(dataset, stats, grid)
    lasso_cfg = LassoConfig(
        c=args.lasso_c,
        loading_iterations=args.lasso_iters,
        forced_support=(1,) if dataset.n_covariates >= 1 else (),
    )
    model = fit_adjustment(args.adjust, dataset, stats, pilot, grid, lasso_config=lasso_cfg)
    point = qte(dataset, stats, model, grid, pi_source=pi_source, fixed_pi=fixed_pi)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    draws = run_bootstrap(
        dataset, stats, model, grid, args.B, rng,
        pi_source=pi_source, fixed_pi=fixed_pi,
    )

    est = point.qte
    pointwise = []
    for j, tau in enumerate(grid):
        res = pointwise_test(est[j], draws.draws[:, j], args.null, args.alpha)
        pointwise.append(
            {
                "tau": tau,
                "estimate": res.estimate,
                "se": res.se,
                "ci": [res.ci_lower, res.ci_upper],
                "reject": res.reject,
                "null": args.null,
            }
        )
    report = {
        "version": __version__,
        "schema": 1,
        "command": "estimate",
        "config": {
            "input": args.input,
            "adjust": args.adjust,
            "taus": list(grid),
            "B": args.B,
            "alpha": args.alpha,
            "seed": args.seed,
            "pi": args.pi,
            "null": args.null,
        },
        "n": dataset.n,
        "n_strata": dataset.n_strata,
        "method": args.adjust,
        "B": args.B,
        "alpha": args.alpha,
        "seed": args.seed,
        "bootstrap_resampled": draws.n_resampled,
        "pointwise": pointwise,
    }
    if args.diff:
        t1, t2 = (float(v) for v in args.diff.split(","))
        res = difference_test(
            point.at(t1), point.at(t2),
            draws.at(t1), draws.at(t2), args.null, args.alpha,
        )
        report["difference"] = {
            "tau1": t1,
            "tau2": t2,
            "estimate": res.estimate,
            "se": res.se,
            "ci": [res.ci_lower, res.ci_upper],
            "reject": res.reject,
            "null": args.null,
        }
    if args.uniform:
        if len(grid) < 2:
            raise DataValidationError("uniform band needs a grid of at least two taus")
        band = uniform_band(est, draws.draws, args.alpha)
        report["uniform_band"] = {
            "taus": list(grid),
            "estimate": [float(v) for v in band.estimate],
            "se": [float(v) for v in band.se],
            "lower": [float(v) for v in band.ci_lower],
            "upper": [float(v) for v in band.ci_upper],
            "critical_value": band.critical_value,
        }
    _dump_json(report, args.out)
    return _EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    grid = _parse_taus(args.taus)
    pi_source, fixed_pi = _parse_pi(args.pi)
    raw_methods = args.methods
    if isinstance(raw_methods, str):
        raw_methods = [m.strip() for m in raw_methods.split(",")]
    methods = tuple(m for m in raw_methods if m)
    for m in methods:
        if m not in METHODS:
            raise _UsageError(f"unknown method {m!r}; choose from {METHODS}")
    dgp_kind = {"1": "dgp1", "2": "dgp2", "hd": "dgphd"}.get(args.dgp, args.dgp)
    if dgp_kind not in DGP_KINDS:
        raise DataValidationError(f"unknown dgp {args.dgp!r}")
    spec = ScenarioSpec(
        dgp=DgpSpec(dgp_kind, args.n),
        scheme=SchemeSpec(args.scheme, pi=args.target_pi, bcd_lambda=args.bcd_lambda),
        methods=methods,
        reps=args.reps,
        B=args.B,
        taus=grid,
        delta=args.delta,
        alpha=args.alpha,
        seed=args.seed,
        pi_source=pi_source,
        fixed_pi=fixed_pi,
        mc_n=args.mc_n,
        mc_reps=args.mc_reps,
        truth_cache=args.truth_cache,
        workers=args.workers,
        lasso_c=args.lasso_c,
        lasso_iters=args.lasso_iters,
    )
    result = run_scenario(spec)
    table = emit_table(result, "csv")
    if args.out is None or args.out == "-":
        sys.stdout.write(table)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table)
        sidecar = {
            "version": __version__,
            "command": "simulate",
            "seed": args.seed,
            "config": {
                "dgp": dgp_kind,
                "scheme": args.scheme,
                "methods": list(methods),
                "n": args.n,
                "reps": args.reps,
                "B": args.B,
                "taus": list(grid),
                "delta": args.delta,
                "alpha": args.alpha,
                "pi": args.pi,
                "mc_n": args.mc_n,
                "mc_reps": args.mc_reps,
            },
            "truth": list(result.truth),
            "failures": result.failures,
        }
        _dump_json(sidecar, args.out + ".config.json")
    return _EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carqte",
        description="Regression-adjusted QTE estimation and multiplier-bootstrap "
        "inference under covariate-adaptive randomization.",
    )
    parser.add_argument("--version", action="version", version=f"carqte {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate QTEs from a CSV experiment file")
    est.add_argument("--input", required=True, help="CSV with columns y, a, s, x1..xd")
    est.add_argument("--adjust", default="na", choices=METHODS)
    est.add_argument("--taus", default="0.25,0.5,0.75")
    est.add_argument("--B", type=int, default=1000)
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--null", type=float, default=0.0, help="null QTE value to test")
    est.add_argument("--pi", default="estimated", help="'estimated' or 'fixed:<value>'")
    est.add_argument("--target-pi", type=float, default=0.5, dest="target_pi")
    est.add_argument("--lasso-c", type=float, default=1.1, dest="lasso_c")
    est.add_argument("--lasso-iters", type=int, default=2, dest="lasso_iters")
    est.add_argument("--diff", default=None, help="two taus 't1,t2' for a difference test")
    est.add_argument("--uniform", action="store_true", help="emit a uniform band")
    est.add_argument("--config", default=None, help="JSON config file; flags win")
    est.add_argument("--out", default=None, help="report path (default stdout)")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    sim.add_argument("--dgp", default="1", help="1, 2, or hd")
    sim.add_argument("--scheme", default="srs", choices=SCHEME_KINDS)
    sim.add_argument("--methods", default="na")
    sim.add_argument("--n", type=int, default=400)
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--B", type=int, default=200)
    sim.add_argument("--taus", default="0.5")
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--delta", type=float, default=1.5)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--pi", default="estimated", help="'estimated' or 'fixed:<value>'")
    sim.add_argument("--target-pi", type=float, default=0.5, dest="target_pi")
    sim.add_argument("--bcd-lambda", type=float, default=0.75, dest="bcd_lambda")
    sim.add_argument("--lasso-c", type=float, default=1.1, dest="lasso_c")
    sim.add_argument("--lasso-iters", type=int, default=2, dest="lasso_iters")
    sim.add_argument("--mc-n", type=int, default=10_000, dest="mc_n")
    sim.add_argument("--mc-reps", type=int, default=300, dest="mc_reps")
    sim.add_argument("--truth-cache", default=None, dest="truth_cache")
    sim.add_argument("--workers", type=int, default=default_workers())
    sim.add_argument("--config", default=None, help="JSON config file; flags win")
    sim.add_argument("--out", default=None, help="results CSV path (default stdout)")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else _EXIT_OK
    # Options typed on the command line take priority over config-file values.
    args._explicit = {  # noqa: SLF001
        opt.split("=", 1)[0].lstrip("-").replace("-", "_")
        for opt in argv
        if opt.startswith("--")
    }
    try:
        _load_config_defaults(args, parser)
        return args.func(args)
    except _UsageError as exc:
        print(f"carqte: usage error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except DataValidationError as exc:
        print(f"carqte: {exc}", file=sys.stderr)
        return _EXIT_DATA
    except NumericalError as exc:
        print(f"carqte: numerical failure: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC
    except CarqteError as exc:
        print(f"carqte: {exc}", file=sys.stderr)
        return _EXIT_DATA
    except OSError as exc:
        print(f"carqte: {exc}", file=sys.stderr)
        return _EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
