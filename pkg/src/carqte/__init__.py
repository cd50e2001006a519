"""Regression-adjusted quantile treatment effects under covariate-adaptive
randomization, with multiplier-bootstrap inference."""

from __future__ import annotations

__version__ = "0.1.0"

from .adjust import (
    METHODS,
    AdjustmentModel,
    FeatureMap,
    LassoConfig,
    SieveSpec,
    build_sieve_map,
    fit_adjustment,
    fit_hd_lasso,
    fit_logit_cell,
    fit_lp,
    fit_lpml,
    fit_ml,
    fit_none,
    fit_np,
    hd_dictionary,
    logistic_features,
    raw_features,
)
from .bootstrap import (
    BootstrapDraws,
    InferenceResult,
    bootstrap_se,
    difference_test,
    draw_weights,
    empirical_quantile,
    pointwise_test,
    run_bootstrap,
    uniform_band,
)
from .data import (
    Dataset,
    QuantileGrid,
    StrataStats,
    WeightVector,
    index_strata,
    load_csv,
    validate_for_estimation,
)
from .dgp import DgpSpec, PotentialData, cached_true_qte, generate, true_qte_oracle
from .errors import (
    CarqteError,
    CellTooSmallError,
    DataValidationError,
    DegenerateCellError,
    DegenerateWeightedCellError,
    EmptyStratumError,
    NumericalError,
    UnfittedTauError,
    UnknownStratumError,
)
from .estimator import (
    ArmQuantileProblem,
    PilotQuantiles,
    QteEstimate,
    pilot_quantiles,
    qte,
    solve_arm_quantile,
)
from .harness import ScenarioResult, ScenarioSpec, emit_table, parse_table, run_scenario
from .randomization import (
    SCHEME_KINDS,
    SchemeSpec,
    assign,
    assign_bcd,
    assign_sbr,
    assign_srs,
    assign_wei,
)

__all__ = [name for name in dir() if not name.startswith("_")]
