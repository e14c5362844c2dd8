"""Monte Carlo validation of the stratified pipeline on simulated cohorts.

Run with ``pytest -m slow``.
"""

import numpy as np
import pytest

from strata_iptw.core.cohort import add_stratum_indicators
from strata_iptw.core.design import DesignSpec
from strata_iptw.core.diagnostics import balance_report
from strata_iptw.core.estimation import bootstrap_effect, estimate_effect, stratum_effects
from strata_iptw.core.simulate import simulate_cohort
from strata_iptw.core.weights import WeightingPlan
from strata_iptw.schemas.config import OutcomeModel, SimConfig

pytestmark = pytest.mark.slow

TRUE_EFFECTS = {"S1": 3.0, "S2": 7.0}
TRUE_MARGINAL = 80 / 180 * 3.0 + 100 / 180 * 7.0
PLAN = WeightingPlan(global_spec=DesignSpec(("age", "stage_IV")))


def large_cohort(seed: int):
    """n = 2000 cohort with the default cell shares and stratum effects 3 and 7."""
    cfg = SimConfig(seed=seed, outcome_model=OutcomeModel(true_effects=TRUE_EFFECTS)).with_total(2000)
    return simulate_cohort(cfg)


@pytest.fixture(scope="module")
def replicates():
    """Marginal and stratum estimates with sandwich SEs over 200 replicates."""
    rows = []
    for seed in range(200):
        cohort = large_cohort(seed)
        weight_set = PLAN.run(cohort)
        marginal = estimate_effect(cohort, weight_set.final)
        strata = stratum_effects(cohort, weight_set)
        rows.append((marginal.point, marginal.se, strata["S1"].point, strata["S2"].point))
    return np.array(rows)


class TestUnadjustedImbalance:
    """Tests for imbalance in the default simulated design."""

    def test_mean_smds_over_seeds(self):
        """Test mean age and stratum SMDs across 100 seeds fall in their bands."""
        age, stratum = [], []
        for seed in range(100):
            cohort = add_stratum_indicators(simulate_cohort(SimConfig(seed=seed)))
            report = balance_report(cohort, np.ones(cohort.n))
            age.append(report.row("age").unadj_smd)
            stratum.append(report.row("stratum_S2").unadj_smd)
        assert -2.6 <= np.mean(age) <= -1.9
        assert -0.85 <= np.mean(stratum) <= -0.55


class TestEstimatorRecovery:
    """Tests for bias of the stratified estimator."""

    def test_marginal_effect(self, replicates):
        assert abs(replicates[:, 0].mean() - TRUE_MARGINAL) <= 0.25

    def test_stratum_effects(self, replicates):
        assert abs(replicates[:, 2].mean() - TRUE_EFFECTS["S1"]) <= 0.35
        assert abs(replicates[:, 3].mean() - TRUE_EFFECTS["S2"]) <= 0.35

    def test_marginal_is_share_weighted(self, replicates):
        """Test each replicate's marginal estimate averages its stratum effects by share."""
        sizes = SimConfig().with_total(2000).group_sizes
        share_s1 = (sizes[0] + sizes[1]) / 2000
        combined = share_s1 * replicates[:, 2] + (1.0 - share_s1) * replicates[:, 3]
        np.testing.assert_allclose(replicates[:, 0], combined, atol=1e-8)


class TestStandardErrors:
    """Tests for standard error calibration."""

    def test_monte_carlo_sd_matches_sandwich(self, replicates):
        ratio = replicates[:, 0].std(ddof=1) / replicates[:, 1].mean()
        assert 0.7 <= ratio <= 1.3

    def test_sandwich_agrees_with_bootstrap(self):
        cohort = large_cohort(2025)
        sandwich = estimate_effect(cohort, PLAN.run(cohort).final)
        boot = bootstrap_effect(cohort, PLAN, n_boot=500, seed=7)
        assert boot.boot_failures == 0
        assert abs(sandwich.se - boot.se) / boot.se <= 0.15
        assert boot.point == pytest.approx(sandwich.point, rel=1e-12)
