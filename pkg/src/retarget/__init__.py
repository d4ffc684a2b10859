"""Retargeted policy learning and causal prediction regressions."""

from .data import CsvSchema, Dataset, FoldAssignment, load_dataset, make_folds, save_dataset
from .errors import EstimationError, ValidationError
from .nuisance import (
    NuisanceConfig,
    NuisanceSet,
    OracleNuisances,
    cross_fit,
    estimate_variance,
    fit_outcome_regression,
    fit_propensity,
    load_oracle_nuisances,
)
from .policy import (
    ConstantPolicy,
    LearnResult,
    LinearPolicy,
    Policy,
    PolicyClass,
    learn,
    learn_finite,
    learn_linear,
    load_policy_class,
    true_regret,
    weighted_value,
)
from .pseudo import PseudoOutcomes, dr_pseudo_outcomes, effect_pseudo_outcome
from .regression import (
    FeatureMap,
    RegressionFit,
    fit_best_fit,
    fit_cate,
    fit_dv_overlap,
    fit_on_arm_precision,
)
from .simulation import (
    BenchmarkReport,
    BenchmarkRow,
    ScenarioSpec,
    default_scenarios,
    generate,
    load_report,
    load_scenarios,
    render_report,
    run_benchmark,
)
from .weights import (
    GapStatistics,
    WeightScheme,
    curvature_scaled_weights,
    gap_statistics,
    homoskedastic_weights,
    make_weights,
    selection_ratio,
    uniform_weights,
    variance_proxy,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkReport",
    "BenchmarkRow",
    "ConstantPolicy",
    "CsvSchema",
    "Dataset",
    "EstimationError",
    "FeatureMap",
    "FoldAssignment",
    "GapStatistics",
    "LearnResult",
    "LinearPolicy",
    "NuisanceConfig",
    "NuisanceSet",
    "OracleNuisances",
    "Policy",
    "PolicyClass",
    "PseudoOutcomes",
    "RegressionFit",
    "ScenarioSpec",
    "ValidationError",
    "WeightScheme",
    "cross_fit",
    "curvature_scaled_weights",
    "default_scenarios",
    "dr_pseudo_outcomes",
    "effect_pseudo_outcome",
    "estimate_variance",
    "fit_best_fit",
    "fit_cate",
    "fit_dv_overlap",
    "fit_on_arm_precision",
    "fit_outcome_regression",
    "fit_propensity",
    "gap_statistics",
    "generate",
    "homoskedastic_weights",
    "learn",
    "learn_finite",
    "learn_linear",
    "load_dataset",
    "load_oracle_nuisances",
    "load_policy_class",
    "load_report",
    "load_scenarios",
    "make_folds",
    "make_weights",
    "render_report",
    "run_benchmark",
    "save_dataset",
    "selection_ratio",
    "true_regret",
    "uniform_weights",
    "variance_proxy",
    "weighted_value",
]
