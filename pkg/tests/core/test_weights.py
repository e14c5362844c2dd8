"""Tests for ATE weights and the two-stage stratified rescaling.

This module tests:
- ate_weights and truncate_weights
- rescale_stage1 / rescale_stage2 worked examples
- stratified and unstratified pipelines, WeightingPlan
- The rescaling invariants over randomized cohorts
"""

import numpy as np
import pytest

from strata_iptw.core.cohort import add_stratum_indicators
from strata_iptw.core.design import DesignSpec
from strata_iptw.core.diagnostics import balance_report
from strata_iptw.core.weights import (
    WeightingPlan,
    WeightSet,
    ate_weights,
    rescale_stage1,
    rescale_stage2,
    stratified_weight_pipeline,
    truncate_weights,
    unstratified_weight_pipeline,
)
from strata_iptw.utils.errors import (
    ConfigError,
    RankDeficiencyError,
    StructuralPositivityError,
    WeightDomainError,
)
from tests.conftest import make_cohort, random_cohort


def stratum_totals(w, strata, z=None, arm=None):
    mask_arm = np.ones_like(w, dtype=bool) if arm is None else (z == arm)
    return {s: w[(strata == s) & mask_arm].sum() for s in np.unique(strata)}


# =============================================================================
# Formulas
# =============================================================================


class TestAteWeights:
    """Tests for ate_weights."""

    @pytest.mark.parametrize(
        "score,arm,expected",
        [(0.5, 1, 2.0), (0.25, 0, 1.0 / 0.75), (0.8, 1, 1.25)],
    )
    def test_formula(self, score, arm, expected):
        """Test 1/e for exposed and 1/(1-e) for unexposed."""
        assert ate_weights(np.array([score]), np.array([arm]))[0] == pytest.approx(expected)

    def test_score_outside_domain(self):
        with pytest.raises(WeightDomainError):
            ate_weights(np.array([0.0, 0.5]), np.array([1, 0]))


class TestTruncateWeights:
    """Tests for truncate_weights."""

    def test_caps_both_tails(self):
        w = np.arange(1.0, 101.0)
        capped = truncate_weights(w, 5.0)
        lower, upper = np.percentile(w, [5.0, 95.0])
        assert capped.min() == pytest.approx(lower)
        assert capped.max() == pytest.approx(upper)
        np.testing.assert_array_equal(capped[10:90], w[10:90])

    def test_invalid_percentile(self):
        with pytest.raises(ConfigError):
            truncate_weights(np.ones(3), 50.0)


class TestRescaleStage1:
    """Tests for within-stratum arm balancing."""

    def test_worked_example(self):
        """Test exposed {2, 2}, unexposed {4}: W_s = 8, both arm totals 4."""
        w = np.array([2.0, 2.0, 4.0])
        z = np.array([1, 1, 0])
        w1 = rescale_stage1(w, np.array(["S1"] * 3), z)
        np.testing.assert_allclose(w1, [2.0, 2.0, 4.0])
        assert w1[z == 1].sum() == pytest.approx(4.0)
        assert w1[z == 0].sum() == pytest.approx(4.0)

    def test_already_balanced_unchanged(self):
        w = np.array([1.0, 3.0, 2.5, 1.5])
        z = np.array([1, 1, 0, 0])
        np.testing.assert_allclose(rescale_stage1(w, np.array(["S1"] * 4), z), w, rtol=1e-15)

    def test_stratum_totals_unchanged(self):
        """Test per-stratum totals are preserved."""
        rng = np.random.default_rng(4)
        w = rng.uniform(1.0, 5.0, 10)
        strata = np.array(["A"] * 4 + ["B"] * 6)
        z = np.array([0, 1, 1, 1, 0, 0, 1, 0, 1, 0])
        w1 = rescale_stage1(w, strata, z)
        for s in ("A", "B"):
            assert w1[strata == s].sum() == pytest.approx(w[strata == s].sum(), rel=1e-12)

    def test_empty_cell(self):
        with pytest.raises(StructuralPositivityError, match="S2"):
            rescale_stage1(np.ones(3), np.array(["S1", "S1", "S2"]), np.array([0, 1, 0]))


class TestRescaleStage2:
    """Tests for stratum-share restoration."""

    def test_single_stratum_identity(self):
        """Test one stratum leaves w' unchanged."""
        w = np.array([1.0, 2.0, 3.0, 4.0])
        z = np.array([0, 1, 0, 1])
        strata = np.array(["S1"] * 4)
        w1 = rescale_stage1(w, strata, z)
        np.testing.assert_allclose(rescale_stage2(w1, w, strata), w1, rtol=1e-15)

    def test_four_patient_toy(self):
        """Test stratum shares of w'' equal n_s / n for unequal raw weights."""
        w = np.array([1.0, 7.0, 2.0, 3.0])
        z = np.array([0, 1, 0, 1])
        strata = np.array(["A", "A", "B", "B"])
        w2 = rescale_stage2(rescale_stage1(w, strata, z), w, strata)
        assert w2[:2].sum() / w2.sum() == pytest.approx(0.5, abs=1e-12)
        assert w2.sum() == pytest.approx(w.sum(), rel=1e-12)

    def test_shares_for_80_100(self):
        """Test S2 weighted share is 100/180 whatever the raw weights."""
        rng = np.random.default_rng(8)
        strata = np.array(["S1"] * 80 + ["S2"] * 100)
        z = np.tile([0, 1], 90)
        w = rng.uniform(1.0, 20.0, 180)
        w2 = rescale_stage2(rescale_stage1(w, strata, z), w, strata)
        assert w2[strata == "S2"].sum() / w2.sum() == pytest.approx(100 / 180, abs=1e-12)


# =============================================================================
# Pipelines
# =============================================================================


class TestStratifiedPipeline:
    """Tests for stratified_weight_pipeline."""

    def test_demo_cohort(self, demo_cohort):
        """Test per-stratum age + stage models give exact stratum-indicator balance."""
        cohort = add_stratum_indicators(demo_cohort)
        ws = stratified_weight_pipeline(cohort, DesignSpec(main_effects=("age", "stage_IV")))
        assert ws.stratified
        assert set(ws.per_stratum_fits) == {"S1", "S2"}
        assert all(f.converged for f in ws.per_stratum_fits.values())
        report = balance_report(cohort, ws.stage2, ["stratum_S2"])
        assert abs(report.row("stratum_S2").adj_smd) < 1e-10

    def test_weights_in_original_order(self, tiny_cohort):
        """Test reassembled scores line up with each stratum's own fit."""
        ws = stratified_weight_pipeline(tiny_cohort, DesignSpec(main_effects=("age",)))
        for level, fit in ws.per_stratum_fits.items():
            rows = tiny_cohort.strata == level
            np.testing.assert_array_equal(ws.scores[rows], fit.scores)

    def test_missing_arm_names_stratum(self):
        cohort = make_cohort(["S1"] * 4 + ["S2"] * 3, [0, 1, 0, 1, 1, 1, 1], {"x": range(7)})
        with pytest.raises(StructuralPositivityError, match="S2"):
            stratified_weight_pipeline(cohort, DesignSpec(main_effects=("x",)))

    def test_fit_errors_tagged_with_stratum(self):
        """Test a per-stratum fit failure carries the stratum label."""
        cohort = make_cohort(
            ["S1"] * 6 + ["S2"] * 6,
            [0, 1, 0, 1, 1, 0] * 2,
            {"a": [1, 2, 3, 4, 5, 6] * 2, "b": [1, 2, 3, 4, 5, 6] + [1, 1, 1, 1, 1, 1]},
        )
        with pytest.raises(RankDeficiencyError) as exc_info:
            stratified_weight_pipeline(cohort, {"S1": DesignSpec(("a",)), "S2": DesignSpec(("a", "b"))})
        assert exc_info.value.stratum == "S2"
        assert str(exc_info.value).startswith("[stratum S2]")

    def test_spec_map_must_cover_strata(self, tiny_cohort):
        with pytest.raises(ConfigError, match="B"):
            stratified_weight_pipeline(tiny_cohort, {"A": DesignSpec(("age",))})

    def test_identical_covariates_give_arm_share_scores(self):
        """Test covariates equal across arms give scores equal to the arm share."""
        x = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0]
        cohort = make_cohort(
            ["S1"] * 6 + ["S2"] * 4,
            [0, 0, 0, 1, 1, 1, 0, 1, 1, 1],
            {"x": x + [5.0, 5.0, 5.0, 5.0]},
        )
        ws = stratified_weight_pipeline(
            cohort, {"S1": DesignSpec(("x",)), "S2": DesignSpec(())}
        )
        np.testing.assert_allclose(ws.scores[:6], 0.5, atol=1e-8)
        np.testing.assert_allclose(ws.scores[6:], 0.75, atol=1e-8)
        z = cohort.exposure
        for s in ("S1", "S2"):
            rows = cohort.strata == s
            assert ws.stage2[rows & (z == 1)].sum() == pytest.approx(ws.stage2[rows & (z == 0)].sum())
        assert ws.stage2[cohort.strata == "S1"].sum() / ws.stage2.sum() == pytest.approx(0.6)

    def test_truncation_before_rescaling(self, demo_cohort):
        """Test truncation keeps the stage invariants exact."""
        ws = stratified_weight_pipeline(demo_cohort, DesignSpec(("age", "stage_IV")), truncate_percentile=5.0)
        assert ws.truncate_percentile == 5.0
        assert ws.stage2.sum() == pytest.approx(ws.raw.sum(), rel=1e-12)


class TestUnstratifiedPipeline:
    """Tests for the single global model."""

    def test_global_fit_with_interactions(self, demo_cohort):
        """Test the global comparison model fits six coefficients and only raw weights."""
        cohort = add_stratum_indicators(demo_cohort)
        spec = DesignSpec.from_names(
            ["age", "stage_IV", "stratum_S2"],
            [["age", "stratum_S2"], ["stage_IV", "stratum_S2"]],
        )
        ws = unstratified_weight_pipeline(cohort, spec)
        assert not ws.stratified
        assert len(ws.global_fit.coefficients) == 6
        assert ws.stage1 is None and ws.stage2 is None
        assert ws.final_stage == "raw"
        with pytest.raises(ConfigError, match="unstratified"):
            ws.stage("stage2")


class TestWeightSet:
    """Tests for WeightSet validation."""

    def test_rejects_non_positive(self):
        with pytest.raises(WeightDomainError):
            WeightSet(raw=np.array([1.0, 0.0]), scores=np.array([0.5, 0.5]))

    def test_unknown_stage(self):
        ws = WeightSet(raw=np.ones(2), scores=np.full(2, 0.5))
        with pytest.raises(ConfigError, match="Unknown weight stage"):
            ws.stage("final")


class TestWeightingPlan:
    """Tests for WeightingPlan."""

    def test_requires_one_spec_source(self):
        with pytest.raises(ConfigError):
            WeightingPlan(stratify=True)
        with pytest.raises(ConfigError):
            WeightingPlan(specs={"S1": DesignSpec(())}, global_spec=DesignSpec(()))

    def test_per_stratum_specs_require_stratification(self):
        with pytest.raises(ConfigError):
            WeightingPlan(stratify=False, specs={"S1": DesignSpec(())})

    def test_run_matches_pipeline(self, tiny_cohort):
        spec = DesignSpec(("age",))
        ws = WeightingPlan(global_spec=spec).run(tiny_cohort)
        np.testing.assert_array_equal(ws.stage2, stratified_weight_pipeline(tiny_cohort, spec).stage2)


# =============================================================================
# Rescaling invariants
# =============================================================================


class TestRescalingInvariants:
    """Invariants of the two-stage rescaling over 500 randomized cohorts."""

    def test_invariants_hold(self):
        rng = np.random.default_rng(1234)
        for _ in range(500):
            cohort = add_stratum_indicators(random_cohort(rng))
            ws = stratified_weight_pipeline(cohort, DesignSpec(("x1", "x2")))
            z, strata, w2 = cohort.exposure, cohort.strata, ws.stage2

            # arm balance
            for s in cohort.stratum_levels:
                rows = strata == s
                t1, t0 = w2[rows & (z == 1)].sum(), w2[rows & (z == 0)].sum()
                assert abs(t1 - t0) <= 1e-10 * max(t1, t0)
            # share preservation
            for s in cohort.stratum_levels:
                assert abs(w2[strata == s].sum() / w2.sum() - np.mean(strata == s)) <= 1e-12
            # total conservation
            assert abs(w2.sum() - ws.raw.sum()) <= 1e-8 * ws.raw.sum()
            # stratum indicators exactly balanced
            indicators = [n for n in cohort.covariate_names if n.startswith("stratum_")]
            if indicators:
                report = balance_report(cohort, w2, indicators)
                for row in report.rows:
                    assert abs(row.adj_smd) <= 1e-10

    def test_stratum_scaling_leaves_normalized_weights(self):
        """Test scaling one stratum's raw weights leaves w''/sum(w'') unchanged."""
        rng = np.random.default_rng(77)
        for _ in range(50):
            cohort = random_cohort(rng, n_strata=3)
            strata, z = cohort.strata, cohort.exposure
            w = rng.uniform(1.0, 10.0, cohort.n)
            scaled = np.where(strata == "S2", w * rng.uniform(0.1, 10.0), w)
            a = rescale_stage2(rescale_stage1(w, strata, z), w, strata)
            b = rescale_stage2(rescale_stage1(scaled, strata, z), scaled, strata)
            np.testing.assert_allclose(a / a.sum(), b / b.sum(), rtol=1e-10)
