"""Tests for the analysis service."""

import json

import numpy as np
import pytest

from strata_iptw.core.cohort import write_csv
from strata_iptw.core.simulate import simulate_cohort
from strata_iptw.schemas.config import OutcomeModel, RunConfig, SimConfig
from strata_iptw.services.analysis_service import AnalysisService
from strata_iptw.utils.errors import ConfigError, DesignSpecError, MissingOutcomeError


def make_service(tmp_path, **sections) -> AnalysisService:
    """Service writing into ``tmp_path`` with small bootstrap defaults."""
    data = {"output": {"out_dir": str(tmp_path)}, "estimation": {"n_boot": 25}}
    for key, value in sections.items():
        data[key] = {**data.get(key, {}), **value}
    return AnalysisService(RunConfig.model_validate(data))


@pytest.fixture
def outcome_sim():
    return {"outcome_model": {"true_effects": {"S1": 3.0, "S2": 7.0}}}


# =============================================================================
# Plans
# =============================================================================


class TestBuildPlan:
    """Tests for translating config sections into weighting plans."""

    def test_default_stratified(self, tmp_path):
        service = make_service(tmp_path)
        cohort = service.load_cohort()
        plan = service.build_plan(cohort)
        assert plan.stratify
        assert plan.global_spec.main_effects == ("age", "stage_IV")
        assert plan.global_spec.interactions == ()

    def test_default_unstratified_adds_indicator_interactions(self, tmp_path):
        service = make_service(tmp_path, weighting={"stratify": False})
        plan = service.build_plan(service.load_cohort())
        assert not plan.stratify
        assert plan.global_spec.main_effects == ("age", "stage_IV", "stratum_S2")
        assert plan.global_spec.interactions == (("age", "stratum_S2"), ("stage_IV", "stratum_S2"))

    def test_per_stratum_specs(self, tmp_path):
        service = make_service(
            tmp_path, model={"strata": {"S1": {"main": ["age"]}, "S2": {"main": ["age", "stage_IV"]}}}
        )
        plan = service.build_plan(service.load_cohort())
        assert plan.specs["S1"].main_effects == ("age",)
        assert plan.specs["S2"].main_effects == ("age", "stage_IV")

    def test_unknown_stratum_in_model(self, tmp_path):
        service = make_service(tmp_path, model={"strata": {"S1": {"main": ["age"]}, "S9": {"main": ["age"]}}})
        with pytest.raises(ConfigError, match="S9"):
            service.build_plan(service.load_cohort())

    def test_unknown_covariate_in_model(self, tmp_path):
        service = make_service(tmp_path, model={"main": ["age", "grade"]})
        with pytest.raises(DesignSpecError, match="grade"):
            service.build_plan(service.load_cohort())


# =============================================================================
# Balance and estimation
# =============================================================================


class TestBalance:
    """Tests for AnalysisService.balance."""

    def test_scopes_and_shares(self, tmp_path):
        service = make_service(tmp_path)
        cohort = service.load_cohort()
        results = service.balance(cohort, service.weigh(cohort))
        assert results.overall.scope == "overall"
        assert set(results.by_stratum) == {"S1", "S2"}
        assert [r.name for r in results.by_stratum["S1"].rows] == ["age", "stage_IV"]
        assert set(results.shares) == {"raw", "stage1", "stage2"}
        assert results.shares["stage2"]["S1"]["weighted"] == pytest.approx(80 / 180, abs=1e-12)
        assert set(results.overlap) == {"overall", "S1", "S2"}

    def test_unstratified_reports_raw_only(self, tmp_path):
        service = make_service(tmp_path, weighting={"stratify": False})
        cohort = service.load_cohort()
        results = service.balance(cohort, service.weigh(cohort))
        assert results.overall.stage == "raw"
        assert set(results.shares) == {"raw"}

    def test_unavailable_stage(self, tmp_path):
        service = make_service(tmp_path, weighting={"stratify": False}, balance={"stage": "stage2"})
        cohort = service.load_cohort()
        with pytest.raises(ConfigError, match="not available"):
            service.balance(cohort, service.weigh(cohort))

    def test_write_balance_files(self, tmp_path):
        service = make_service(tmp_path)
        cohort = service.load_cohort()
        service.write_balance(service.balance(cohort, service.weigh(cohort)))
        data = json.loads((tmp_path / "balance.json").read_text())
        assert set(data) == {"overall", "by_stratum", "stratum_shares", "weights", "overlap"}
        assert "### Overall (N=180)" in (tmp_path / "balance.md").read_text()


class TestEstimate:
    """Tests for AnalysisService.estimate."""

    def test_missing_outcomes(self, tmp_path):
        service = make_service(tmp_path)
        cohort = service.load_cohort()
        with pytest.raises(MissingOutcomeError):
            service.estimate(cohort, service.weigh(cohort))

    def test_both_methods_and_strata(self, tmp_path, outcome_sim):
        service = make_service(
            tmp_path,
            simulation=outcome_sim,
            estimation={"se_method": "both", "per_stratum": True},
        )
        cohort = service.load_cohort()
        estimates = service.estimate(cohort, service.weigh(cohort))
        assert [(e.estimand, e.method) for e in estimates] == [
            ("ATE-marginal", "sandwich"),
            ("ATE-marginal", "bootstrap"),
            ("stratum:S1", "sandwich"),
            ("stratum:S2", "sandwich"),
        ]
        assert estimates[0].point == pytest.approx(estimates[1].point, rel=1e-12)
        assert estimates[1].n_boot == 25

    def test_adjusted_is_conditional(self, tmp_path, outcome_sim):
        service = make_service(tmp_path, simulation=outcome_sim, estimation={"adjust_for": ["age"]})
        cohort = service.load_cohort()
        (estimate,) = service.estimate(cohort, service.weigh(cohort))
        assert estimate.estimand == "conditional"


# =============================================================================
# Files
# =============================================================================


class TestRun:
    """Tests for the full run and file outputs."""

    def test_simulate_writes_files(self, tmp_path):
        service = make_service(tmp_path)
        cohort = service.simulate()
        assert cohort.n == 180
        for name in ("cohort.csv", "age_by_stratum_exposure.csv", "cohort.md"):
            assert (tmp_path / name).exists()

    def test_run_without_outcomes_skips_estimation(self, tmp_path, caplog):
        result = make_service(tmp_path).run()
        assert result["estimates"] == []
        assert (tmp_path / "weights.csv").exists()
        assert (tmp_path / "fits.json").exists()
        assert not (tmp_path / "effects.json").exists()
        assert "skipping effect estimation" in caplog.text

    def test_run_from_csv(self, tmp_path):
        """Test a CSV input reproduces the estimate of the in-memory cohort."""
        cohort = simulate_cohort(SimConfig(outcome_model=OutcomeModel()))
        path = write_csv(cohort, tmp_path / "input.csv")
        service = make_service(
            tmp_path / "out",
            input={"path": str(path)},
            columns={"id": "id", "covariates": ["age", "stage_IV"], "outcome": "y"},
        )
        result = service.run()
        (estimate,) = result["estimates"]
        assert result["cohort"].n == 180
        assert np.isfinite(estimate.point)
        assert (tmp_path / "out" / "effects.md").exists()
        assert not (tmp_path / "out" / "cohort.csv").exists()

    def test_json_only(self, tmp_path, outcome_sim):
        service = make_service(tmp_path, simulation=outcome_sim, output={"formats": ["json"]})
        service.run()
        assert (tmp_path / "effects.json").exists()
        assert not (tmp_path / "effects.md").exists()
        assert not (tmp_path / "balance.md").exists()

    def test_rerun_is_byte_identical(self, tmp_path, outcome_sim):
        first = tmp_path / "a"
        second = tmp_path / "b"
        make_service(first, simulation=outcome_sim, estimation={"se_method": "both"}).run()
        make_service(second, simulation=outcome_sim, estimation={"se_method": "both"}).run()
        for name in ("balance.json", "effects.json", "fits.json", "weights.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes()
