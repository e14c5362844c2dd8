"""Balance and weight diagnostics.

SMDs use the unweighted pooled standard deviation, sqrt((s1^2 + s0^2) / 2),
as the denominator for both unadjusted and adjusted columns; binary
covariates use s_g^2 = p_g (1 - p_g), continuous ones the sample variance.
An SMD that cannot be computed is reported as None, never as 0.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from strata_iptw.core.cohort import Cohort, stratum_indicator_name
from strata_iptw.utils.errors import DimensionMismatchError, WeightDomainError

logger = logging.getLogger(__name__)

SMD_THRESHOLD = 0.1
OVERLAP_QUANTILES = (0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0)
OVERALL_SCOPE = "overall"


def smd(mean1: float, mean0: float, sd_pool: float | None) -> float | None:
    """Standardized mean difference, exposed minus unexposed.

    Returns:
        (mean1 - mean0) / sd_pool, or None when sd_pool is missing or not positive
    """
    if sd_pool is None or not np.isfinite(sd_pool) or sd_pool <= 0.0:
        return None
    return float((mean1 - mean0) / sd_pool)


def is_binary(x: np.ndarray) -> bool:
    x = np.asarray(x)
    return bool(x.size) and bool(np.all((x == 0.0) | (x == 1.0)))


def pooled_sd(x: np.ndarray, z: np.ndarray, binary: bool | None = None) -> float | None:
    """Unweighted pooled SD, sqrt((s1^2 + s0^2) / 2).

    Args:
        x: Covariate values
        z: Exposure arms (0/1)
        binary: Treat as binary; inferred from the values when None

    Returns:
        The pooled SD, or None when an arm is too small to estimate its spread
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z)
    if binary is None:
        binary = is_binary(x)
    variances = []
    for arm in (1, 0):
        values = x[z == arm]
        if binary:
            if values.size < 1:
                return None
            p = values.mean()
            variances.append(p * (1.0 - p))
        else:
            if values.size < 2:
                return None
            variances.append(values.var(ddof=1))
    return float(np.sqrt(sum(variances) / 2.0))


def weighted_mean(x: np.ndarray, w: np.ndarray) -> float:
    """Sum(w x) / sum(w).

    Raises:
        WeightDomainError: Non-positive weight total
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != w.shape:
        raise DimensionMismatchError("weights length", x.shape[0], w.shape[0])
    total = w.sum()
    if not total > 0.0:
        raise WeightDomainError("weights must have a positive total")
    return float(np.dot(w, x) / total)


def _check_weights(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise WeightDomainError("weight vector is empty")
    if np.any(w < 0.0) or not w.sum() > 0.0:
        raise WeightDomainError("weights must be non-negative with a positive total")
    return w


def ess(w: np.ndarray) -> float:
    """Effective sample size (sum w)^2 / sum w^2."""
    w = _check_weights(w)
    return float(w.sum() ** 2 / np.dot(w, w))


def coefficient_of_variation(w: np.ndarray) -> float:
    """Population CV of the weights, sd(w) / mean(w)."""
    w = _check_weights(w)
    return float(w.std() / w.mean())


def variance_inflation(w: np.ndarray) -> float:
    """Variance inflation 1 + CV^2 of a weighted mean; equals n / ESS."""
    return 1.0 + coefficient_of_variation(w) ** 2


# =============================================================================
# Balance reports
# =============================================================================


@dataclass(frozen=True)
class BalanceRow:
    """Unadjusted and adjusted arm means and SMDs for one covariate."""

    name: str
    binary: bool
    unadj_mean_unexposed: float
    unadj_mean_exposed: float
    unadj_smd: float | None
    adj_mean_unexposed: float
    adj_mean_exposed: float
    adj_smd: float | None

    def flagged(self, threshold: float) -> bool:
        return self.adj_smd is not None and abs(self.adj_smd) > threshold


@dataclass(frozen=True)
class BalanceReport:
    """Pre/post-weighting balance table for one scope.

    Attributes:
        rows: One row per covariate
        ess_unexposed: ESS of the adjusted weights within the unexposed arm
        ess_exposed: ESS of the adjusted weights within the exposed arm
        n_unexposed: Unexposed patient count
        n_exposed: Exposed patient count
        scope: ``overall`` or a stratum label
        stage: Weight stage used for the adjusted columns
        smd_threshold: |SMD| above which adjusted rows are flagged
    """

    rows: tuple[BalanceRow, ...]
    ess_unexposed: float
    ess_exposed: float
    n_unexposed: int
    n_exposed: int
    scope: str = OVERALL_SCOPE
    stage: str = "stage2"
    smd_threshold: float = SMD_THRESHOLD

    @property
    def flagged_rows(self) -> list[BalanceRow]:
        return [row for row in self.rows if row.flagged(self.smd_threshold)]

    def row(self, name: str) -> BalanceRow:
        for candidate in self.rows:
            if candidate.name == name:
                return candidate
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scope": self.scope,
            "stage": self.stage,
            "smd_threshold": self.smd_threshold,
            "n_unexposed": self.n_unexposed,
            "n_exposed": self.n_exposed,
            "ess_unexposed": self.ess_unexposed,
            "ess_exposed": self.ess_exposed,
            "rows": [
                {**asdict(row), "flagged": row.flagged(self.smd_threshold)} for row in self.rows
            ],
        }


def balance_report(
    cohort: Cohort,
    w: np.ndarray,
    covariates: Sequence[str] | None = None,
    scope: str = OVERALL_SCOPE,
    stage: str = "stage2",
    smd_threshold: float = SMD_THRESHOLD,
) -> BalanceReport:
    """Compare arm means before and after weighting.

    Args:
        cohort: Cohort the weights belong to
        w: Weights aligned with cohort order
        covariates: Covariates to report; all cohort covariates when None
        scope: ``overall`` or a stratum label to restrict to that stratum
        stage: Label of the weight stage supplied, carried into the report
        smd_threshold: Flagging threshold for adjusted |SMD|

    Returns:
        BalanceReport for the requested scope

    Raises:
        CovariateNotFoundError: Unknown covariate
    """
    w = np.asarray(w, dtype=float)
    if w.shape[0] != cohort.n:
        raise DimensionMismatchError("weights length", cohort.n, w.shape[0])
    names = list(covariates) if covariates is not None else list(cohort.covariate_names)
    columns = {name: cohort.covariate(name) for name in names}

    mask = np.ones(cohort.n, dtype=bool) if scope == OVERALL_SCOPE else cohort.strata == scope
    if not mask.any():
        raise WeightDomainError(f"scope '{scope}' selects no patients")
    z = cohort.exposure[mask]
    ws = w[mask]
    exposed, unexposed = z == 1, z == 0

    rows = []
    for name in names:
        x = columns[name][mask]
        binary = is_binary(x)
        sd = pooled_sd(x, z, binary=binary)
        # Unadjusted columns go through the same weighted mean with unit weights.
        unadj1 = weighted_mean(x[exposed], np.ones(int(exposed.sum())))
        unadj0 = weighted_mean(x[unexposed], np.ones(int(unexposed.sum())))
        adj1 = weighted_mean(x[exposed], ws[exposed])
        adj0 = weighted_mean(x[unexposed], ws[unexposed])
        rows.append(
            BalanceRow(
                name=name,
                binary=binary,
                unadj_mean_unexposed=unadj0,
                unadj_mean_exposed=unadj1,
                unadj_smd=smd(unadj1, unadj0, sd),
                adj_mean_unexposed=adj0,
                adj_mean_exposed=adj1,
                adj_smd=smd(adj1, adj0, sd),
            )
        )

    report = BalanceReport(
        rows=tuple(rows),
        ess_unexposed=ess(ws[unexposed]),
        ess_exposed=ess(ws[exposed]),
        n_unexposed=int(unexposed.sum()),
        n_exposed=int(exposed.sum()),
        scope=scope,
        stage=stage,
        smd_threshold=smd_threshold,
    )
    for row in report.flagged_rows:
        logger.warning(f"[{scope}] {row.name}: adjusted SMD {row.adj_smd:.3f} exceeds {smd_threshold:g}")
    return report


def within_stratum_covariates(cohort: Cohort, covariates: Sequence[str] | None = None) -> list[str]:
    """Covariates for a stratum-scope report; stratum indicators are constant there and dropped."""
    names = covariates if covariates is not None else cohort.covariate_names
    indicators = {stratum_indicator_name(level) for level in cohort.stratum_levels[1:]}
    return [name for name in names if name not in indicators]


def stratum_shares(cohort: Cohort, w: np.ndarray) -> dict[str, dict[str, float]]:
    """Unweighted and weighted share of each stratum."""
    w = np.asarray(w, dtype=float)
    total = w.sum()
    return {
        level: {
            "unweighted": float(np.mean(cohort.strata == level)),
            "weighted": float(w[cohort.strata == level].sum() / total),
        }
        for level in cohort.stratum_levels
    }


# =============================================================================
# Weight distribution and overlap
# =============================================================================


@dataclass(frozen=True)
class WeightDiagnostics:
    """Summary of a weight vector."""

    min: float
    max: float
    mean: float
    cv: float
    count_clamped_scores: int
    top_k_weights: list[float] = field(default_factory=list)
    ess: float = 0.0
    variance_inflation: float = 1.0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def weight_diagnostics(w: np.ndarray, count_clamped: int = 0, top_k: int = 5) -> WeightDiagnostics:
    """Min, max, mean, CV, ESS, variance inflation and the largest weights."""
    w = _check_weights(w)
    if np.any(w <= 0.0):
        raise WeightDomainError("weights must be strictly positive")
    cv = coefficient_of_variation(w)
    return WeightDiagnostics(
        min=float(w.min()),
        max=float(w.max()),
        mean=float(w.mean()),
        cv=cv,
        count_clamped_scores=int(count_clamped),
        top_k_weights=[float(v) for v in np.sort(w)[::-1][:top_k]],
        ess=ess(w),
        variance_inflation=1.0 + cv**2,
    )


@dataclass(frozen=True)
class OverlapSummary:
    """Propensity score distribution by arm.

    Attributes:
        quantile_levels: Probabilities of the reported quantiles (0 and 1 are min and max)
        exposed_quantiles: Exposed-arm score quantiles
        unexposed_quantiles: Unexposed-arm score quantiles
        exposed_outside: Exposed scores outside the unexposed [min, max]
        unexposed_outside: Unexposed scores outside the exposed [min, max]
    """

    quantile_levels: tuple[float, ...]
    exposed_quantiles: tuple[float, ...]
    unexposed_quantiles: tuple[float, ...]
    exposed_outside: int
    unexposed_outside: int
    n_exposed: int
    n_unexposed: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def overlap_summary(scores: np.ndarray, z: np.ndarray) -> OverlapSummary:
    """Score quantiles by arm and counts of scores outside the other arm's range.

    Raises:
        WeightDomainError: An arm is empty
    """
    scores = np.asarray(scores, dtype=float)
    z = np.asarray(z)
    s1, s0 = scores[z == 1], scores[z == 0]
    if s1.size == 0 or s0.size == 0:
        raise WeightDomainError("overlap needs both exposure arms")
    outside1 = int(np.sum((s1 < s0.min()) | (s1 > s0.max())))
    outside0 = int(np.sum((s0 < s1.min()) | (s0 > s1.max())))
    return OverlapSummary(
        quantile_levels=OVERLAP_QUANTILES,
        exposed_quantiles=tuple(float(q) for q in np.quantile(s1, OVERLAP_QUANTILES)),
        unexposed_quantiles=tuple(float(q) for q in np.quantile(s0, OVERLAP_QUANTILES)),
        exposed_outside=outside1,
        unexposed_outside=outside0,
        n_exposed=int(s1.size),
        n_unexposed=int(s0.size),
    )
