"""Marginal treatment-effect estimation on the weighted pseudo-population.

Point estimates come from the weighted difference in arm means, which equals
the exposure coefficient of a weighted least-squares regression of the outcome
on an intercept and the exposure. Standard errors are either HC0 sandwich
(weights treated as fixed) or a stratified bootstrap that re-runs the whole
weighting pipeline on every resample.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Sequence

import numpy as np
import scipy.linalg
from scipy.stats import norm

from strata_iptw.core.cohort import Cohort
from strata_iptw.core.design import INTERCEPT_LABEL
from strata_iptw.core.propensity import diagnose_rank
from strata_iptw.core.weights import WeightingPlan, WeightSet
from strata_iptw.schemas.config import DEFAULT_SEED
from strata_iptw.utils.errors import (
    BootstrapUnstableError,
    ConfigError,
    DimensionMismatchError,
    MissingOutcomeError,
    RankDeficiencyError,
    StrataIPTWError,
    StructuralPositivityError,
    WeightDomainError,
)

logger = logging.getLogger(__name__)

MARGINAL = "ATE-marginal"
CONDITIONAL = "conditional"
EXPOSURE_LABEL = "Z"
CI_LEVEL = 0.95
DEFAULT_N_BOOT = 1000
BOOT_FAILURE_LIMIT = 0.10


@dataclass(frozen=True)
class EffectEstimate:
    """Treatment effect with uncertainty.

    Attributes:
        estimand: ``ATE-marginal``, ``conditional`` or ``stratum:<label>``
        point: Point estimate
        se: Standard error
        ci_low: Lower 95% bound
        ci_high: Upper 95% bound
        method: ``sandwich`` or ``bootstrap``
        n_boot: Resamples requested (bootstrap)
        boot_failures: Resamples whose pipeline failed (bootstrap)
    """

    estimand: str
    point: float
    se: float
    ci_low: float
    ci_high: float
    method: str
    n_boot: int | None = None
    boot_failures: int | None = None

    def __post_init__(self):
        if self.se < 0.0:
            raise WeightDomainError(f"standard error must be >= 0, got {self.se}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class WLSResult:
    """Weighted least-squares fit of the outcome model.

    Attributes:
        coefficients: Intercept, exposure, then any extra covariates
        residuals: y - X @ coefficients
        design: The regression design X
        columns: Labels for the columns of X
        weights: Regression weights
        bread: (X' W X)^-1
        estimand: ``ATE-marginal`` without extra covariates, else ``conditional``
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    design: np.ndarray
    columns: tuple[str, ...]
    weights: np.ndarray
    bread: np.ndarray
    estimand: str

    @property
    def exposure_coefficient(self) -> float:
        return float(self.coefficients[1])


def _check_lengths(y: np.ndarray, z: np.ndarray, w: np.ndarray) -> None:
    if not (y.shape == z.shape == w.shape):
        raise DimensionMismatchError("outcome, exposure and weight lengths", y.shape[0], w.shape[0])


def ate_weighted_difference(y: np.ndarray, z: np.ndarray, w: np.ndarray) -> float:
    """Weighted exposed mean minus weighted unexposed mean.

    Raises:
        WeightDomainError: An arm has zero total weight
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z)
    w = np.asarray(w, dtype=float)
    _check_lengths(y, z, w)
    w1, w0 = w * (z == 1), w * (z == 0)
    if not (w1.sum() > 0.0 and w0.sum() > 0.0):
        raise WeightDomainError("both arms need a positive weight total")
    return float(np.dot(w1, y) / w1.sum() - np.dot(w0, y) / w0.sum())


def weighted_outcome_regression(
    y: np.ndarray,
    z: np.ndarray,
    w: np.ndarray,
    extra_covariates: np.ndarray | None = None,
    extra_names: Sequence[str] | None = None,
) -> WLSResult:
    """Weighted regression of y on an intercept, the exposure and optional covariates.

    Adding covariates gives a quasi-doubly-robust estimate but changes the
    estimand from marginal to conditional; no marginalization step is applied.

    Raises:
        RankDeficiencyError: X' W X is singular
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    _check_lengths(y, z, w)
    columns = [np.ones_like(y), z]
    labels = [INTERCEPT_LABEL, EXPOSURE_LABEL]
    estimand = MARGINAL
    if extra_covariates is not None:
        extra = np.asarray(extra_covariates, dtype=float)
        if extra.ndim == 1:
            extra = extra[:, None]
        if extra.shape[1]:
            columns.extend(extra.T)
            labels.extend(extra_names or [f"x{j}" for j in range(extra.shape[1])])
            estimand = CONDITIONAL
    X = np.column_stack(columns)

    sw = np.sqrt(w)
    collinear = diagnose_rank(X * sw[:, None], labels)
    if collinear:
        raise RankDeficiencyError(collinear)
    xtwx = (X * w[:, None]).T @ X
    try:
        factor = scipy.linalg.cho_factor(xtwx)
    except scipy.linalg.LinAlgError:
        raise RankDeficiencyError(labels) from None
    beta = scipy.linalg.cho_solve(factor, (X * w[:, None]).T @ y)
    bread = scipy.linalg.cho_solve(factor, np.eye(X.shape[1]))
    return WLSResult(
        coefficients=beta,
        residuals=y - X @ beta,
        design=X,
        columns=tuple(labels),
        weights=w,
        bread=bread,
        estimand=estimand,
    )


def sandwich_covariance(X: np.ndarray, w: np.ndarray, residuals: np.ndarray, bread: np.ndarray) -> np.ndarray:
    """HC0 covariance: bread @ X' W diag(r^2) W X @ bread."""
    score = X * (w * residuals)[:, None]
    meat = score.T @ score
    return bread @ meat @ bread


def sandwich_se(
    X: np.ndarray,
    w: np.ndarray,
    residuals: np.ndarray,
    bread: np.ndarray,
    index: int = 1,
) -> float:
    """HC0 standard error of coefficient ``index`` (the exposure by default)."""
    if not np.all(np.isfinite(bread)):
        raise RankDeficiencyError([], "Sandwich bread matrix is singular")
    cov = sandwich_covariance(np.asarray(X), np.asarray(w), np.asarray(residuals), bread)
    return float(np.sqrt(max(cov[index, index], 0.0)))


def _wald(estimand: str, point: float, se: float) -> EffectEstimate:
    half = norm.ppf(0.5 + CI_LEVEL / 2.0) * se
    return EffectEstimate(
        estimand=estimand,
        point=point,
        se=se,
        ci_low=point - half,
        ci_high=point + half,
        method="sandwich",
    )


def require_outcomes(cohort: Cohort) -> np.ndarray:
    """Outcome vector, or an error listing the ids without one."""
    y = cohort.outcome
    missing = np.isnan(y)
    if cohort.n == 0 or missing.any():
        raise MissingOutcomeError([str(i) for i in cohort.ids[missing]])
    return y


def estimate_effect(
    cohort: Cohort,
    w: np.ndarray,
    adjust_for: Sequence[str] = (),
    estimand: str | None = None,
) -> EffectEstimate:
    """Weighted outcome regression with an HC0 sandwich SE and Wald 95% CI.

    Args:
        cohort: Cohort with outcomes
        w: Weights aligned with the cohort
        adjust_for: Extra covariates for a conditional (quasi-doubly-robust) estimate
        estimand: Override for the estimand label

    Returns:
        EffectEstimate with method ``sandwich``
    """
    y = require_outcomes(cohort)
    extra = cohort.covariate_matrix(list(adjust_for)) if adjust_for else None
    result = weighted_outcome_regression(y, cohort.exposure, w, extra, list(adjust_for))
    se = sandwich_se(result.design, result.weights, result.residuals, result.bread)
    return _wald(estimand or result.estimand, result.exposure_coefficient, se)


def _point_estimate(cohort: Cohort, plan: WeightingPlan, adjust_for: Sequence[str]) -> float:
    weights = plan.run(cohort).final
    y = require_outcomes(cohort)
    if not adjust_for:
        return ate_weighted_difference(y, cohort.exposure, weights)
    extra = cohort.covariate_matrix(list(adjust_for))
    return weighted_outcome_regression(y, cohort.exposure, weights, extra, list(adjust_for)).exposure_coefficient


def _cells(cohort: Cohort) -> list[np.ndarray]:
    cells = []
    for level in cohort.stratum_levels:
        for arm in (0, 1):
            idx = np.flatnonzero((cohort.strata == level) & (cohort.exposure == arm))
            if idx.size:
                cells.append(idx)
    return cells


def bootstrap_effect(
    cohort: Cohort,
    plan: WeightingPlan,
    n_boot: int = DEFAULT_N_BOOT,
    seed: int = DEFAULT_SEED,
    adjust_for: Sequence[str] = (),
    failure_limit: float = BOOT_FAILURE_LIMIT,
) -> EffectEstimate:
    """Bootstrap the full weighting-and-estimation pipeline.

    Resamples are drawn with replacement within every (stratum, arm) cell, so
    each resample keeps the cell sizes of the input. Resample ``b`` uses its
    own generator spawned from ``seed``, which makes results independent of
    evaluation order.

    Args:
        cohort: Cohort with outcomes
        plan: Weighting pipeline re-run on every resample
        n_boot: Number of resamples (>= 2)
        seed: Root seed
        adjust_for: Extra outcome-model covariates
        failure_limit: Maximum tolerated share of failed resamples

    Returns:
        EffectEstimate with bootstrap SD as SE and a percentile 95% CI

    Raises:
        BootstrapUnstableError: More than ``failure_limit`` of resamples failed
    """
    if n_boot < 2:
        raise ConfigError(f"bootstrap needs at least 2 resamples, got {n_boot}")
    require_outcomes(cohort)
    point = _point_estimate(cohort, plan, adjust_for)
    cells = _cells(cohort)

    estimates = []
    failures = 0
    for b, child in enumerate(np.random.SeedSequence(seed).spawn(n_boot)):
        rng = np.random.default_rng(child)
        idx = np.concatenate([rng.choice(cell, size=cell.size, replace=True) for cell in cells])
        idx.sort()
        try:
            estimates.append(_point_estimate(cohort.take(idx), plan, adjust_for))
        except StrataIPTWError as exc:
            failures += 1
            logger.warning(f"Bootstrap resample {b} failed: {exc}")

    if failures > failure_limit * n_boot or len(estimates) < 2:
        raise BootstrapUnstableError(failures, n_boot, failure_limit)

    draws = np.asarray(estimates)
    tail = (1.0 - CI_LEVEL) / 2.0 * 100.0
    low, high = np.percentile(draws, [tail, 100.0 - tail])
    logger.info(f"Bootstrap: {len(draws)} successful resamples, {failures} failed")
    return EffectEstimate(
        estimand=CONDITIONAL if adjust_for else MARGINAL,
        point=point,
        se=float(draws.std(ddof=1)),
        # Percentile bounds are widened to contain the point estimate.
        ci_low=float(min(low, point)),
        ci_high=float(max(high, point)),
        method="bootstrap",
        n_boot=n_boot,
        boot_failures=failures,
    )


def stratum_effects(
    cohort: Cohort,
    weight_set: WeightSet,
    stage: str | None = None,
) -> dict[str, EffectEstimate]:
    """Weighted effect within each stratum, with sandwich SEs.

    Stage 1 and stage 2 weights give identical within-stratum estimates since
    both stages multiply a stratum's arms by constants.

    Raises:
        StructuralPositivityError: A stratum lacks an exposure arm
    """
    weights = weight_set.stage(stage or weight_set.final_stage)
    effects = {}
    for level in cohort.stratum_levels:
        rows = np.flatnonzero(cohort.strata == level)
        part = cohort.take(rows)
        for arm in (0, 1):
            if not np.any(part.exposure == arm):
                raise StructuralPositivityError(level, arm)
        effects[level] = estimate_effect(part, weights[rows], estimand=f"stratum:{level}")
    return effects
