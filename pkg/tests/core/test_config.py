"""Tests for environment defaults, YAML run configs and their precedence."""

from pathlib import Path

import pytest
from pydantic import ValidationError

from strata_iptw.core.config import (
    Config,
    deep_merge,
    load_run_config,
    parse_formats,
    read_config_file,
)
from strata_iptw.schemas.config import DEFAULT_SEED, ColumnSchema, ModelConfig, RunConfig
from strata_iptw.utils.errors import ConfigError

ENV_VARS = (
    "STRATA_IPTW_LOG_LEVEL",
    "STRATA_IPTW_OUT_DIR",
    "STRATA_IPTW_N_BOOT",
    "STRATA_IPTW_SEED",
    "STRATA_IPTW_SMD_THRESHOLD",
    "STRATA_IPTW_FORMATS",
)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ENV_VARS:
        monkeypatch.delenv(name, raising=False)


def write_yaml(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


# =============================================================================
# Environment
# =============================================================================


class TestConfigFromEnv:
    """Tests for Config.from_env."""

    def test_defaults(self):
        config = Config.from_env()
        assert config.log_level == "info"
        assert config.n_boot == 1000
        assert config.seed == DEFAULT_SEED
        assert config.formats == ["json", "md"]

    def test_overrides(self, monkeypatch):
        monkeypatch.setenv("STRATA_IPTW_N_BOOT", "200")
        monkeypatch.setenv("STRATA_IPTW_LOG_LEVEL", "DEBUG")
        monkeypatch.setenv("STRATA_IPTW_FORMATS", "json")
        config = Config.from_env()
        assert config.n_boot == 200
        assert config.log_level == "debug"
        assert config.formats == ["json"]

    def test_bad_number(self, monkeypatch):
        monkeypatch.setenv("STRATA_IPTW_N_BOOT", "many")
        with pytest.raises(ConfigError, match="STRATA_IPTW_"):
            Config.from_env()

    def test_bad_log_level(self, monkeypatch):
        monkeypatch.setenv("STRATA_IPTW_LOG_LEVEL", "loud")
        with pytest.raises(ConfigError, match="LOG_LEVEL"):
            Config.from_env()


class TestHelpers:
    """Tests for parse_formats and deep_merge."""

    def test_parse_formats(self):
        assert parse_formats(" json, ,md ") == ["json", "md"]

    def test_deep_merge_nested(self):
        base = {"estimation": {"n_boot": 1000, "seed": 1}, "output": {"out_dir": "out"}}
        merged = deep_merge(base, {"estimation": {"n_boot": 50}})
        assert merged == {"estimation": {"n_boot": 50, "seed": 1}, "output": {"out_dir": "out"}}
        assert base["estimation"]["n_boot"] == 1000


# =============================================================================
# Files and precedence
# =============================================================================


class TestLoadRunConfig:
    """Tests for load_run_config."""

    def test_defaults_only(self):
        config = load_run_config(env=Config())
        assert config.weighting.stratify is True
        assert config.estimation.se_method == "sandwich"
        assert config.simulation.seed == DEFAULT_SEED

    def test_file_over_env_and_cli_over_file(self, tmp_path):
        path = write_yaml(
            tmp_path / "run.yaml",
            "estimation:\n  n_boot: 300\n  se_method: both\nbalance:\n  smd_threshold: 0.2\n",
        )
        config = load_run_config(path, {"estimation": {"n_boot": 40}}, env=Config(n_boot=900))
        assert config.estimation.n_boot == 40
        assert config.estimation.se_method == "both"
        assert config.balance.smd_threshold == 0.2

    def test_env_seed_reaches_simulation(self):
        config = load_run_config(env=Config(seed=17))
        assert config.simulation.seed == 17
        assert config.estimation.seed == 17

    def test_validation_error_names_field(self, tmp_path):
        path = write_yaml(tmp_path / "run.yaml", "estimation:\n  n_boot: 1\n")
        with pytest.raises(ConfigError, match="estimation.n_boot") as exc_info:
            load_run_config(path, env=Config())
        assert exc_info.value.exit_code == 2

    def test_unknown_section_rejected(self, tmp_path):
        path = write_yaml(tmp_path / "run.yaml", "weights:\n  stratify: false\n")
        with pytest.raises(ConfigError, match="weights"):
            load_run_config(path, env=Config())

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            read_config_file(tmp_path / "absent.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = write_yaml(tmp_path / "run.yaml", "estimation: [unclosed\n")
        with pytest.raises(ConfigError, match="Invalid YAML"):
            read_config_file(path)

    def test_empty_file(self, tmp_path):
        assert read_config_file(write_yaml(tmp_path / "run.yaml", "")) == {}

    def test_non_mapping(self, tmp_path):
        with pytest.raises(ConfigError, match="mapping"):
            read_config_file(write_yaml(tmp_path / "run.yaml", "- a\n- b\n"))


class TestRunConfigRules:
    """Tests for cross-section validation."""

    def test_global_and_per_stratum_models_conflict(self):
        with pytest.raises(ValidationError, match="not both"):
            ModelConfig(main=["age"], strata={"S1": {"main": ["age"]}})

    def test_per_stratum_requires_stratify(self):
        with pytest.raises(ValidationError, match="stratify"):
            RunConfig.model_validate(
                {"weighting": {"stratify": False}, "model": {"strata": {"S1": {"main": ["age"]}}}}
            )

    def test_input_requires_columns(self):
        with pytest.raises(ValidationError, match="columns"):
            RunConfig.model_validate({"input": {"path": "cohort.csv"}})

    def test_categorical_must_be_covariate(self):
        with pytest.raises(ValidationError, match="categorical"):
            ColumnSchema(covariates=["age"], categorical=["grade"])

    def test_duplicate_roles(self):
        with pytest.raises(ValidationError, match="more than one role"):
            ColumnSchema(covariates=["age", "Z"])

    def test_formats_deduplicated(self):
        config = RunConfig.model_validate({"output": {"formats": ["md", "json", "md"]}})
        assert config.output.formats == ["md", "json"]
