"""Staggered difference-in-differences evaluation of dual policy pilots on entity-year panels."""

from ._kernels import BACKEND
from .dgp import DgpConfig, MediatorSpec, generate
from .did import (DualTreatment, EventStudyResult, TreatmentSchedule, baseline_table, did_baseline, event_study,
                  read_schedules, trim_sample)
from .index import IndexSpec, IndexWeights, build_index, entropy_weights, pca_weights
from .mediation import MediationResult, mediation_analysis, mediation_share, mediator_construction
from .panel import PanelDataset, PanelError, fill_missing, load_csv, write_csv
from .placebo import PlaceboConfig, PlaceboResult, placebo_test
from .psm import balance_report, fit_propensity, match_nearest, psm_did, run_psm_did
from .regression import (RegressionError, RegressionResult, RegressionSpec, SeparationError, fit_logit, fit_ols,
                         logit, ols, subgroup_regressions)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DgpConfig", "MediatorSpec", "generate",
    "DualTreatment", "EventStudyResult", "TreatmentSchedule", "baseline_table", "did_baseline", "event_study",
    "read_schedules", "trim_sample",
    "IndexSpec", "IndexWeights", "build_index", "entropy_weights", "pca_weights",
    "MediationResult", "mediation_analysis", "mediation_share", "mediator_construction",
    "PanelDataset", "PanelError", "fill_missing", "load_csv", "write_csv",
    "PlaceboConfig", "PlaceboResult", "placebo_test",
    "balance_report", "fit_propensity", "match_nearest", "psm_did", "run_psm_did",
    "RegressionError", "RegressionResult", "RegressionSpec", "SeparationError", "fit_logit", "fit_ols", "logit",
    "ols", "subgroup_regressions",
]
