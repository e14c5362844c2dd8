"""ATE weights and the two-stage stratified rescaling.

Stage 1 (w') multiplies each weight by ``0.5 * W_s / W_{s,z}`` so that, within
every stratum, the exposed and unexposed arms carry equal total weight.
Stage 2 (w'') multiplies by ``(sum(w) / W_s) * (n_s / n)`` so that each
stratum's share of the total weight equals its share of patients, while the
grand total stays equal to the raw total.
"""

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from strata_iptw.core.cohort import Cohort, check_structural_positivity, split_by_stratum
from strata_iptw.core.design import DesignSpec, build_design_matrix
from strata_iptw.core.propensity import PropensityFit, fit_logistic
from strata_iptw.utils.errors import (
    ConfigError,
    DimensionMismatchError,
    StrataIPTWError,
    StructuralPositivityError,
    WeightDomainError,
)

logger = logging.getLogger(__name__)

# Target share of each arm within a stratum (1:1 allocation of the ATE pseudo-population).
ARM_SHARE = 0.5

STAGES = ("raw", "stage1", "stage2")
STAGE_DESCRIPTIONS = {
    "raw": "w: ATE weights 1/e (exposed), 1/(1-e) (unexposed)",
    "stage1": "w': within-stratum arm balancing, w * 0.5 * W_s / W_sz",
    "stage2": "w'': stratum-share restoring, w' * (sum w / W_s) * (n_s / n)",
}


def ate_weights(scores: np.ndarray, z: np.ndarray) -> np.ndarray:
    """ATE weights: 1/e for exposed patients, 1/(1-e) for unexposed.

    Raises:
        WeightDomainError: A score outside the open interval (0, 1)
        DimensionMismatchError: Lengths differ
    """
    scores = np.asarray(scores, dtype=float)
    z = np.asarray(z)
    if scores.shape != z.shape:
        raise DimensionMismatchError("scores vs exposure length", z.shape[0], scores.shape[0])
    if not np.all((scores > 0.0) & (scores < 1.0)):
        raise WeightDomainError("propensity scores must lie strictly inside (0, 1)")
    return np.where(z == 1, 1.0 / scores, 1.0 / (1.0 - scores))


def truncate_weights(w: np.ndarray, percentile: float) -> np.ndarray:
    """Cap weights at the ``percentile`` and ``100 - percentile`` quantiles.

    Args:
        w: Raw weights
        percentile: Lower-tail percentile in (0, 50)

    Returns:
        Clipped copy of ``w``
    """
    if not 0.0 < percentile < 50.0:
        raise ConfigError(f"truncation percentile must be in (0, 50), got {percentile}")
    lower, upper = np.percentile(w, [percentile, 100.0 - percentile])
    clipped = np.clip(w, lower, upper)
    changed = int(np.sum(clipped != w))
    if changed:
        logger.info(f"Truncated {changed} weight(s) to [{lower:.6g}, {upper:.6g}]")
    return clipped


def _codes(strata: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    levels, codes = np.unique(np.asarray(strata, dtype=object).astype(str), return_inverse=True)
    return levels, codes


def rescale_stage1(w: np.ndarray, strata: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Balance arm totals within every stratum: w' = w * 0.5 * W_s / W_{s,z}.

    Raises:
        StructuralPositivityError: A (stratum, arm) cell is empty or has zero weight
    """
    w = np.asarray(w, dtype=float)
    z = np.asarray(z).astype(int)
    levels, codes = _codes(strata)
    k = len(levels)
    stratum_total = np.bincount(codes, weights=w, minlength=k)
    cell_total = np.bincount(codes * 2 + z, weights=w, minlength=2 * k).reshape(k, 2)
    for s in range(k):
        for arm in (0, 1):
            if not cell_total[s, arm] > 0.0:
                raise StructuralPositivityError(str(levels[s]), arm)
    return w * ARM_SHARE * stratum_total[codes] / cell_total[codes, z]


def rescale_stage2(w_prime: np.ndarray, w_raw: np.ndarray, strata: np.ndarray) -> np.ndarray:
    """Restore stratum shares: w'' = w' * (sum(w) / W_s) * (n_s / n).

    ``W_s`` is the raw stratum total, which stage 1 leaves unchanged.
    """
    w_prime = np.asarray(w_prime, dtype=float)
    w_raw = np.asarray(w_raw, dtype=float)
    levels, codes = _codes(strata)
    n = w_raw.shape[0]
    stratum_total = np.bincount(codes, weights=w_raw, minlength=len(levels))
    stratum_n = np.bincount(codes, minlength=len(levels))
    return w_prime * (w_raw.sum() / stratum_total[codes]) * (stratum_n[codes] / n)


@dataclass(frozen=True)
class WeightSet:
    """Per-patient weights at each pipeline stage, aligned with cohort order.

    Attributes:
        raw: ATE weights w (after truncation, when requested)
        scores: Propensity scores the raw weights came from
        stage1: Arm-balanced weights w' (stratified runs)
        stage2: Share-restored weights w'' (stratified runs)
        stage_labels: Provenance of each stage present
        stratified: Whether per-stratum models were fitted
        per_stratum_fits: Stratum label to fit (stratified runs)
        global_fit: Single fit (unstratified runs)
        truncate_percentile: Truncation applied to raw weights, if any
    """

    raw: np.ndarray
    scores: np.ndarray
    stage1: np.ndarray | None = None
    stage2: np.ndarray | None = None
    stage_labels: dict[str, str] = field(default_factory=dict)
    stratified: bool = False
    per_stratum_fits: dict[str, PropensityFit] = field(default_factory=dict)
    global_fit: PropensityFit | None = None
    truncate_percentile: float | None = None

    def __post_init__(self):
        for name in STAGES:
            values = getattr(self, name)
            if values is None:
                continue
            if values.shape != self.raw.shape:
                raise DimensionMismatchError(f"{name} weights length", self.raw.shape[0], values.shape[0])
            if not np.all(np.isfinite(values) & (values > 0.0)):
                raise WeightDomainError(f"{name} weights must be finite and > 0")

    @property
    def final_stage(self) -> str:
        return "stage2" if self.stage2 is not None else "raw"

    @property
    def final(self) -> np.ndarray:
        return self.stage(self.final_stage)

    def stage(self, name: str) -> np.ndarray:
        """Weights for ``raw``, ``stage1`` or ``stage2``.

        Raises:
            ConfigError: Unknown stage or stage not computed in this run
        """
        if name not in STAGES:
            raise ConfigError(f"Unknown weight stage '{name}'. Valid stages: {', '.join(STAGES)}")
        values = getattr(self, name)
        if values is None:
            raise ConfigError(f"Weight stage '{name}' is not available for an unstratified run")
        return values

    @property
    def n_clamped(self) -> int:
        fits = list(self.per_stratum_fits.values())
        if self.global_fit is not None:
            fits.append(self.global_fit)
        return sum(f.n_clamped for f in fits)


def _fit_and_weigh(cohort: Cohort, spec: DesignSpec) -> tuple[PropensityFit, np.ndarray]:
    X = build_design_matrix(cohort, spec)
    fit = fit_logistic(X, cohort.exposure)
    return fit, ate_weights(fit.scores, cohort.exposure)


def stratified_weight_pipeline(
    cohort: Cohort,
    specs: Mapping[str, DesignSpec] | DesignSpec,
    truncate_percentile: float | None = None,
) -> WeightSet:
    """Fit one propensity model per stratum and apply both rescaling stages.

    Args:
        cohort: Cohort to weight
        specs: Stratum label to model spec, or one spec used for every stratum
        truncate_percentile: Optional symmetric percentile cap on raw weights

    Returns:
        WeightSet with raw, stage1 and stage2 weights in original patient order

    Raises:
        StructuralPositivityError: A stratum lacks an exposure arm
        ConfigError: ``specs`` does not cover every stratum
        StrataIPTWError: Per-stratum fit failures, tagged with the stratum label
    """
    check_structural_positivity(cohort)
    if isinstance(specs, DesignSpec):
        specs = {level: specs for level in cohort.stratum_levels}
    missing = [level for level in cohort.stratum_levels if level not in specs]
    if missing:
        raise ConfigError(f"No propensity model given for strata: {', '.join(missing)}")

    raw = np.empty(cohort.n)
    scores = np.empty(cohort.n)
    fits: dict[str, PropensityFit] = {}
    for level, part in split_by_stratum(cohort).items():
        rows = np.flatnonzero(cohort.strata == level)
        try:
            fit, w = _fit_and_weigh(part, specs[level])
        except StrataIPTWError as exc:
            raise exc.tag_stratum(level)
        fits[level] = fit
        raw[rows] = w
        scores[rows] = fit.scores
        logger.info(
            f"Stratum {level}: fitted {len(fit.coefficients)}-term model on {part.n} patients "
            f"in {fit.iterations} iterations (deviance {fit.deviance:.4f})"
        )

    if truncate_percentile is not None:
        raw = truncate_weights(raw, truncate_percentile)
    stage1 = rescale_stage1(raw, cohort.strata, cohort.exposure)
    stage2 = rescale_stage2(stage1, raw, cohort.strata)
    return WeightSet(
        raw=raw,
        scores=scores,
        stage1=stage1,
        stage2=stage2,
        stage_labels=dict(STAGE_DESCRIPTIONS),
        stratified=True,
        per_stratum_fits=fits,
        truncate_percentile=truncate_percentile,
    )


def unstratified_weight_pipeline(
    cohort: Cohort,
    spec: DesignSpec,
    truncate_percentile: float | None = None,
) -> WeightSet:
    """Fit a single propensity model on the whole cohort; raw ATE weights only.

    Stratum membership enters through the spec (indicator and interaction terms),
    which is the conventional comparison to the stratified pipeline.
    """
    fit, raw = _fit_and_weigh(cohort, spec)
    logger.info(
        f"Global model: {len(fit.coefficients)} terms on {cohort.n} patients "
        f"in {fit.iterations} iterations (deviance {fit.deviance:.4f})"
    )
    if truncate_percentile is not None:
        raw = truncate_weights(raw, truncate_percentile)
    return WeightSet(
        raw=raw,
        scores=fit.scores,
        stage_labels={"raw": STAGE_DESCRIPTIONS["raw"]},
        stratified=False,
        global_fit=fit,
        truncate_percentile=truncate_percentile,
    )


@dataclass(frozen=True)
class WeightingPlan:
    """Declarative weighting pipeline, re-runnable on resampled cohorts.

    Attributes:
        stratify: Fit per-stratum models and rescale (True) or one global model
        specs: Per-stratum specs (stratified runs)
        global_spec: Spec used for every stratum, or for the single global model
        truncate_percentile: Optional raw-weight truncation
    """

    stratify: bool = True
    specs: Mapping[str, DesignSpec] | None = None
    global_spec: DesignSpec | None = None
    truncate_percentile: float | None = None

    def __post_init__(self):
        if (self.specs is None) == (self.global_spec is None):
            raise ConfigError("A weighting plan needs exactly one of specs or global_spec")
        if self.specs is not None and not self.stratify:
            raise ConfigError("Per-stratum specs require stratification")

    def run(self, cohort: Cohort) -> WeightSet:
        """Weight ``cohort`` according to the plan."""
        if self.stratify:
            specs = self.specs if self.specs is not None else self.global_spec
            return stratified_weight_pipeline(cohort, specs, self.truncate_percentile)
        return unstratified_weight_pipeline(cohort, self.global_spec, self.truncate_percentile)
