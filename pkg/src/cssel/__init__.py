"""Claim-level specificity selection with risk-controlled threshold calibration.

A drafted response is decomposed into atomic claims, each carrying a fine
(specific) variant, a coarse (hedged) variant, and support scores for both.
The library selects one emission level per claim (fine, coarse, or omit),
calibrates the selection thresholds so the unsupported-emission rate stays
under a target with high confidence, and evaluates competing selection
policies on held-out data.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .corpus import (
    ClaimRecord,
    Corpus,
    CorpusError,
    PromptRecord,
    SplitAssignment,
    make_kfold_split,
    make_pilot_split,
    parse_corpus,
    serialize_corpus,
    write_corpus,
)
from .metrics import (
    Action,
    Decision,
    MetricsReport,
    WeightScheme,
    evaluate,
    fine_only_metrics,
    table_row,
)
from .stats import binom_cdf, cp_upper
from .policies import (
    PolicySpec,
    ThresholdPair,
    apply_policy,
    format_policy,
    parse_policy,
    select_ladder,
)
from .calibration import (
    CalibrationConfig,
    CalibrationResult,
    ScalarCalibrationResult,
    build_grid,
    calibrate,
    calibrate_claim_drop,
    calibrate_whole_abstain,
    pair_risk,
)
from .scoring import (
    CombinerModel,
    FeatureVector,
    JudgeClient,
    fit_combiner,
    lexical_features,
    score_claims,
)
from .synth import SynthConfig, empirical_rates, generate
from .harness import RunConfig, RunReport, emit_report, run, run_kfold, run_pilot

__all__ = [
    "__version__",
    "Action",
    "CalibrationConfig",
    "CalibrationResult",
    "ClaimRecord",
    "CombinerModel",
    "Corpus",
    "CorpusError",
    "Decision",
    "FeatureVector",
    "JudgeClient",
    "MetricsReport",
    "PolicySpec",
    "PromptRecord",
    "RunConfig",
    "RunReport",
    "ScalarCalibrationResult",
    "SplitAssignment",
    "SynthConfig",
    "ThresholdPair",
    "WeightScheme",
    "apply_policy",
    "binom_cdf",
    "build_grid",
    "calibrate",
    "calibrate_claim_drop",
    "calibrate_whole_abstain",
    "cp_upper",
    "emit_report",
    "empirical_rates",
    "evaluate",
    "fine_only_metrics",
    "fit_combiner",
    "format_policy",
    "generate",
    "lexical_features",
    "make_kfold_split",
    "make_pilot_split",
    "pair_risk",
    "parse_corpus",
    "parse_policy",
    "run",
    "run_kfold",
    "run_pilot",
    "score_claims",
    "select_ladder",
    "serialize_corpus",
    "table_row",
    "write_corpus",
]
