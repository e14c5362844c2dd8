"""Analysis orchestration used by the CLI.

``AnalysisService`` turns a validated ``RunConfig`` into cohorts, weighting
plans, diagnostics and effect estimates, and writes the resulting files.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from strata_iptw.core.cohort import Cohort, add_stratum_indicators, load_csv, stratum_indicator_name, write_csv
from strata_iptw.core.design import DesignSpec
from strata_iptw.core.diagnostics import (
    BalanceReport,
    OverlapSummary,
    WeightDiagnostics,
    balance_report,
    overlap_summary,
    stratum_shares,
    weight_diagnostics,
    within_stratum_covariates,
)
from strata_iptw.core.estimation import (
    EffectEstimate,
    bootstrap_effect,
    estimate_effect,
    require_outcomes,
    stratum_effects,
)
from strata_iptw.core.simulate import export_fig1_data, simulate_cohort
from strata_iptw.core.weights import STAGES, WeightingPlan, WeightSet
from strata_iptw.schemas.config import RunConfig
from strata_iptw.services import report_serializer as reports
from strata_iptw.utils.errors import ConfigError

logger = logging.getLogger(__name__)

COHORT_FILE = "cohort.csv"
AGE_FILE = "age_by_stratum_exposure.csv"
WEIGHTS_FILE = "weights.csv"
FITS_FILE = "fits.json"
BALANCE_FILE = "balance"
EFFECTS_FILE = "effects"


@dataclass
class BalanceResults:
    """Balance diagnostics for one weighting run.

    Attributes:
        overall: Whole-cohort report
        by_stratum: Stratum label to within-stratum report
        shares: Weight stage to stratum shares
        weights: Distribution summary of the reported weight stage
        overlap: ``overall`` and stratum labels to propensity-score overlap
    """

    overall: BalanceReport
    by_stratum: dict[str, BalanceReport] = field(default_factory=dict)
    shares: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)
    weights: WeightDiagnostics | None = None
    overlap: dict[str, OverlapSummary] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "overall": self.overall.to_dict(),
            "by_stratum": {k: v.to_dict() for k, v in self.by_stratum.items()},
            "stratum_shares": self.shares,
            "weights": self.weights.to_dict() if self.weights else None,
            "overlap": {k: v.to_dict() for k, v in self.overlap.items()},
        }

    def to_markdown(self) -> str:
        sections = [reports.balance_markdown(self.overall)]
        sections.extend(reports.balance_markdown(r) for r in self.by_stratum.values())
        if self.shares:
            sections.append("### Stratum shares\n\n" + reports.shares_markdown(self.shares))
        return "\n".join(sections)


class AnalysisService:
    """Runs the weighting pipeline for a RunConfig."""

    def __init__(self, config: RunConfig):
        """Initialize analysis service.

        Args:
            config: Validated run configuration
        """
        self.config = config

    @property
    def out_dir(self) -> Path:
        return Path(self.config.output.out_dir)

    # ------------------------------------------------------------------
    # Cohort
    # ------------------------------------------------------------------

    def load_cohort(self) -> Cohort:
        """Load the configured CSV, or simulate a cohort when no input is given.

        Stratum indicators are appended so balance tables report stratum shares.
        """
        if self.config.input.path is not None:
            cohort = load_csv(self.config.input.path, self.config.columns)
        else:
            cohort = simulate_cohort(self.config.simulation)
        return add_stratum_indicators(cohort)

    def simulate(self) -> Cohort:
        """Simulate and write the cohort plus its age-distribution export."""
        cohort = simulate_cohort(self.config.simulation)
        write_csv(cohort, self.out_dir / COHORT_FILE)
        export_fig1_data(cohort, self.out_dir / AGE_FILE)
        if "md" in self.config.output.formats:
            reports.write_text(reports.crosstab_markdown(cohort), self.out_dir / "cohort.md")
        return cohort

    # ------------------------------------------------------------------
    # Weighting
    # ------------------------------------------------------------------

    def build_plan(self, cohort: Cohort) -> WeightingPlan:
        """Translate the model and weighting sections into a WeightingPlan.

        Without an explicit model, stratified runs use every non-indicator
        covariate as a main effect; unstratified runs add the stratum
        indicators and every covariate-by-indicator interaction.
        """
        model = self.config.model
        weighting = self.config.weighting
        truncate = weighting.truncate_percentile

        if model.strata is not None:
            specs = {
                level: DesignSpec.from_names(spec.main, spec.interactions)
                for level, spec in model.strata.items()
            }
            unknown = sorted(set(specs) - set(cohort.stratum_levels))
            if unknown:
                raise ConfigError(f"model.strata names unknown strata: {', '.join(unknown)}")
            return WeightingPlan(stratify=True, specs=specs, truncate_percentile=truncate)

        if model.main is not None:
            spec = DesignSpec.from_names(model.main, model.interactions)
        else:
            spec = self.default_spec(cohort, weighting.stratify)
        spec.validate(cohort.covariate_names)
        return WeightingPlan(stratify=weighting.stratify, global_spec=spec, truncate_percentile=truncate)

    @staticmethod
    def default_spec(cohort: Cohort, stratify: bool) -> DesignSpec:
        covariates = within_stratum_covariates(cohort)
        if stratify:
            return DesignSpec.from_names(covariates)
        indicators = [stratum_indicator_name(level) for level in cohort.stratum_levels[1:]]
        interactions = [(c, s) for s in indicators for c in covariates]
        return DesignSpec.from_names(covariates + indicators, interactions)

    def weigh(self, cohort: Cohort, plan: WeightingPlan | None = None) -> WeightSet:
        plan = plan or self.build_plan(cohort)
        return plan.run(cohort)

    def write_weights(self, cohort: Cohort, weight_set: WeightSet) -> None:
        reports.write_weights_csv(cohort, weight_set, self.out_dir / WEIGHTS_FILE)
        reports.write_json(reports.fits_to_dict(weight_set), self.out_dir / FITS_FILE)

    # ------------------------------------------------------------------
    # Diagnostics
    # ------------------------------------------------------------------

    def balance(self, cohort: Cohort, weight_set: WeightSet) -> BalanceResults:
        """Overall and per-stratum balance, stratum shares, weight and overlap summaries."""
        cfg = self.config.balance
        stage = cfg.stage or weight_set.final_stage
        w = weight_set.stage(stage)
        covariates = cfg.covariates
        kwargs = {"stage": stage, "smd_threshold": cfg.smd_threshold}

        overall = balance_report(cohort, w, covariates, **kwargs)
        by_stratum = {
            level: balance_report(
                cohort, w, within_stratum_covariates(cohort, covariates), scope=level, **kwargs
            )
            for level in cohort.stratum_levels
        }
        shares = {
            name: stratum_shares(cohort, weight_set.stage(name))
            for name in STAGES
            if getattr(weight_set, name) is not None
        }
        overlap = {"overall": overlap_summary(weight_set.scores, cohort.exposure)}
        for level in cohort.stratum_levels:
            rows = cohort.strata == level
            overlap[level] = overlap_summary(weight_set.scores[rows], cohort.exposure[rows])

        return BalanceResults(
            overall=overall,
            by_stratum=by_stratum,
            shares=shares,
            weights=weight_diagnostics(w, weight_set.n_clamped),
            overlap=overlap,
        )

    def write_balance(self, results: BalanceResults) -> None:
        formats = self.config.output.formats
        if "json" in formats:
            reports.write_json(results.to_dict(), self.out_dir / f"{BALANCE_FILE}.json")
        if "md" in formats:
            reports.write_text(results.to_markdown(), self.out_dir / f"{BALANCE_FILE}.md")

    # ------------------------------------------------------------------
    # Estimation
    # ------------------------------------------------------------------

    def estimate(
        self,
        cohort: Cohort,
        weight_set: WeightSet,
        plan: WeightingPlan | None = None,
    ) -> list[EffectEstimate]:
        """Marginal (or conditional) effect with the configured SEs, plus stratum effects.

        Raises:
            MissingOutcomeError: The cohort lacks outcomes
        """
        cfg = self.config.estimation
        require_outcomes(cohort)
        plan = plan or self.build_plan(cohort)
        estimates = []
        if cfg.se_method in ("sandwich", "both"):
            estimates.append(estimate_effect(cohort, weight_set.final, cfg.adjust_for))
        if cfg.se_method in ("bootstrap", "both"):
            logger.info(f"Bootstrapping the weighting pipeline ({cfg.n_boot} resamples, seed {cfg.seed})")
            estimates.append(bootstrap_effect(cohort, plan, cfg.n_boot, cfg.seed, cfg.adjust_for))
        if cfg.per_stratum:
            estimates.extend(stratum_effects(cohort, weight_set).values())
        return estimates

    def write_estimates(self, estimates: list[EffectEstimate]) -> None:
        formats = self.config.output.formats
        if "json" in formats:
            reports.write_json(
                {"estimates": [e.to_dict() for e in estimates]},
                self.out_dir / f"{EFFECTS_FILE}.json",
            )
        if "md" in formats:
            reports.write_text(reports.effects_markdown(estimates), self.out_dir / f"{EFFECTS_FILE}.md")

    # ------------------------------------------------------------------
    # Full run
    # ------------------------------------------------------------------

    def run(self) -> dict[str, Any]:
        """Simulate (without input) then weigh, balance and estimate.

        Estimation is skipped with a warning when the cohort has no outcomes.

        Returns:
            Dict with the cohort, weight set, balance results and estimates
        """
        if self.config.input.path is None:
            self.simulate()
        cohort = self.load_cohort()
        plan = self.build_plan(cohort)
        weight_set = self.weigh(cohort, plan)
        self.write_weights(cohort, weight_set)
        results = self.balance(cohort, weight_set)
        self.write_balance(results)

        estimates: list[EffectEstimate] = []
        if cohort.has_outcomes:
            estimates = self.estimate(cohort, weight_set, plan)
            self.write_estimates(estimates)
        else:
            logger.warning("Cohort has no outcomes; skipping effect estimation")
        return {"cohort": cohort, "weights": weight_set, "balance": results, "estimates": estimates}
