"""strata-iptw - Stratified propensity-score weighting

Per-stratum logistic propensity models, ATE weights with two-stage
stratified rescaling, balance and effective-sample-size diagnostics, and
marginal treatment-effect estimation with sandwich or bootstrap standard
errors. Includes a simulator for the two-stratum demonstration cohort.
"""

__version__ = "0.1.0"

# Import core functionality
from strata_iptw.core.cohort import Cohort, PatientRecord, load_csv, write_csv
from strata_iptw.core.config import Config, load_environment, load_run_config
from strata_iptw.core.design import DesignSpec, build_design_matrix
from strata_iptw.core.diagnostics import balance_report, ess, smd, weight_diagnostics
from strata_iptw.core.estimation import EffectEstimate, bootstrap_effect, estimate_effect, stratum_effects
from strata_iptw.core.propensity import PropensityFit, fit_logistic, predict_scores
from strata_iptw.core.simulate import simulate_cohort
from strata_iptw.core.weights import (
    WeightingPlan,
    WeightSet,
    stratified_weight_pipeline,
    unstratified_weight_pipeline,
)
from strata_iptw.schemas.config import OutcomeModel, RunConfig, SimConfig

# Import CLI entry point
from strata_iptw.cli import main

__all__ = [
    "__version__",
    "Cohort",
    "PatientRecord",
    "load_csv",
    "write_csv",
    "Config",
    "load_environment",
    "load_run_config",
    "DesignSpec",
    "build_design_matrix",
    "PropensityFit",
    "fit_logistic",
    "predict_scores",
    "WeightSet",
    "WeightingPlan",
    "stratified_weight_pipeline",
    "unstratified_weight_pipeline",
    "balance_report",
    "ess",
    "smd",
    "weight_diagnostics",
    "EffectEstimate",
    "estimate_effect",
    "bootstrap_effect",
    "stratum_effects",
    "simulate_cohort",
    "SimConfig",
    "OutcomeModel",
    "RunConfig",
    "main",
]
