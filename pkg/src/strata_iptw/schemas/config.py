"""Pydantic schemas for run configuration files.

A single YAML file drives a full run. Each top-level section maps to one of
the models below; ``RunConfig`` ties them together and enforces the
cross-section rules (one model-specification source, per-stratum models only
when stratifying).
"""

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

WeightStage = Literal["raw", "stage1", "stage2"]
SEMethod = Literal["sandwich", "bootstrap", "both"]
ReportFormat = Literal["json", "md"]

DEFAULT_SEED = 21082025


class ColumnSchema(BaseModel):
    """Column-role mapping for cohort CSV files."""

    model_config = ConfigDict(extra="forbid")

    id: str | None = Field(None, description="Patient id column (row numbers used when absent)")
    exposure: str = Field("Z", description="Binary exposure column (0/1)")
    stratum: str = Field("stratum", description="Stratum label column")
    covariates: list[str] = Field(..., min_length=1, description="Covariate columns")
    categorical: list[str] = Field(
        default_factory=list,
        description="Covariates expanded to 0/1 indicators, first sorted level dropped",
    )
    outcome: str | None = Field(None, description="Outcome column (optional)")

    @model_validator(mode="after")
    def check_roles(self) -> "ColumnSchema":
        """Categorical columns must be covariates; role columns must not repeat."""
        unknown = [c for c in self.categorical if c not in self.covariates]
        if unknown:
            raise ValueError(f"categorical columns not listed as covariates: {unknown}")
        roles = [self.exposure, self.stratum, *self.covariates]
        roles += [c for c in (self.id, self.outcome) if c is not None]
        duplicates = sorted({c for c in roles if roles.count(c) > 1})
        if duplicates:
            raise ValueError(f"columns assigned more than one role: {duplicates}")
        return self


class DesignSpecConfig(BaseModel):
    """Terms of one propensity model: ``main = [...]``, ``interactions = [[a, b], ...]``."""

    model_config = ConfigDict(extra="forbid")

    main: list[str] = Field(default_factory=list)
    interactions: list[tuple[str, str]] = Field(default_factory=list)


class ModelConfig(BaseModel):
    """Propensity model source: a global spec or a per-stratum map, never both."""

    model_config = ConfigDict(extra="forbid")

    main: list[str] | None = None
    interactions: list[tuple[str, str]] = Field(default_factory=list)
    strata: dict[str, DesignSpecConfig] | None = None

    @model_validator(mode="after")
    def check_single_source(self) -> "ModelConfig":
        """Reject configs naming both a global spec and per-stratum specs."""
        has_global = self.main is not None or bool(self.interactions)
        if has_global and self.strata is not None:
            raise ValueError("give either model.main/interactions or model.strata, not both")
        if self.interactions and self.main is None:
            raise ValueError("model.interactions requires model.main")
        return self


class InputConfig(BaseModel):
    """Input cohort location; a simulated cohort is used when ``path`` is empty."""

    model_config = ConfigDict(extra="forbid")

    path: Path | None = None


class WeightingConfig(BaseModel):
    """Weighting options."""

    model_config = ConfigDict(extra="forbid")

    stratify: bool = True
    truncate_percentile: float | None = Field(
        None, gt=0.0, lt=50.0, description="Symmetric percentile cap on raw weights (off when empty)"
    )


class BalanceConfig(BaseModel):
    """Balance report options."""

    model_config = ConfigDict(extra="forbid")

    covariates: list[str] | None = None
    smd_threshold: float = Field(0.1, gt=0.0)
    stage: WeightStage | None = Field(None, description="Weight stage; final stage when empty")


class EstimationConfig(BaseModel):
    """Effect estimation options."""

    model_config = ConfigDict(extra="forbid")

    se_method: SEMethod = "sandwich"
    n_boot: int = Field(1000, ge=2)
    seed: int = DEFAULT_SEED
    adjust_for: list[str] = Field(default_factory=list)
    per_stratum: bool = False


class OutputConfig(BaseModel):
    """Output directory and report formats."""

    model_config = ConfigDict(extra="forbid")

    out_dir: Path = Path("out")
    formats: list[ReportFormat] = Field(default_factory=lambda: ["json", "md"])

    @field_validator("formats")
    @classmethod
    def dedupe_formats(cls, v: list[str]) -> list[str]:
        """Keep the first occurrence of each format."""
        return list(dict.fromkeys(v))


class OutcomeModel(BaseModel):
    """Outcome generator: y = tau_s * Z + sum(gamma * covariates) + Normal(0, noise_sd)."""

    model_config = ConfigDict(extra="forbid")

    true_effects: dict[str, float] = Field(default_factory=lambda: {"S1": 5.0, "S2": 5.0})
    covariate_coefficients: dict[str, float] = Field(
        default_factory=lambda: {"age": 0.2, "stage_IV": 3.0}
    )
    noise_sd: float = Field(5.0, ge=0.0)

    @field_validator("covariate_coefficients")
    @classmethod
    def check_covariates(cls, v: dict[str, float]) -> dict[str, float]:
        """Only the simulated covariates can enter the outcome model."""
        unknown = sorted(set(v) - {"age", "stage_IV"})
        if unknown:
            raise ValueError(f"unknown outcome covariates {unknown}; use age, stage_IV")
        return v


class SimConfig(BaseModel):
    """Generator parameters for the demonstration cohort.

    Cells are ordered S1-unexposed, S1-exposed, S2-unexposed, S2-exposed.
    """

    model_config = ConfigDict(extra="forbid")

    group_sizes: tuple[int, int, int, int] = (30, 50, 70, 30)
    age_means: tuple[float, float, float, float] = (60.0, 45.0, 70.0, 50.0)
    age_sds: tuple[float, float, float, float] = (8.0, 8.0, 8.0, 8.0)
    stage4_props: tuple[float, float, float, float] = (0.6, 0.55, 0.45, 0.43)
    outcome_model: OutcomeModel | None = None
    seed: int = DEFAULT_SEED

    @field_validator("group_sizes")
    @classmethod
    def check_sizes(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if any(n < 1 for n in v):
            raise ValueError("every group size must be >= 1")
        return v

    @field_validator("age_sds")
    @classmethod
    def check_sds(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if any(s <= 0 for s in v):
            raise ValueError("age standard deviations must be > 0")
        return v

    @field_validator("stage4_props")
    @classmethod
    def check_props(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if any(not 0.0 <= p <= 1.0 for p in v):
            raise ValueError("stage IV proportions must lie in [0, 1]")
        return v

    @model_validator(mode="after")
    def check_effect_strata(self) -> "SimConfig":
        if self.outcome_model is not None:
            missing = {"S1", "S2"} - set(self.outcome_model.true_effects)
            if missing:
                raise ValueError(f"outcome_model.true_effects missing strata {sorted(missing)}")
        return self

    def with_total(self, n: int) -> "SimConfig":
        """Rescale cell sizes to total ``n`` keeping cell shares.

        Uses largest-remainder rounding so the sizes sum to exactly ``n``.

        Args:
            n: Target cohort size (at least 4)

        Returns:
            A copy of this config with new group sizes
        """
        if n < len(self.group_sizes):
            raise ValueError(f"total must be at least {len(self.group_sizes)}")
        total = sum(self.group_sizes)
        exact = [n * g / total for g in self.group_sizes]
        sizes = [max(1, int(e)) for e in exact]
        order = sorted(range(len(exact)), key=lambda i: exact[i] - int(exact[i]), reverse=True)
        i = 0
        while sum(sizes) < n:
            sizes[order[i % len(order)]] += 1
            i += 1
        while sum(sizes) > n:
            j = max(range(len(sizes)), key=lambda k: sizes[k])
            sizes[j] -= 1
        return self.model_copy(update={"group_sizes": tuple(sizes)})


class RunConfig(BaseModel):
    """Complete configuration for one analysis run."""

    model_config = ConfigDict(extra="forbid")

    input: InputConfig = Field(default_factory=InputConfig)
    columns: ColumnSchema | None = None
    weighting: WeightingConfig = Field(default_factory=WeightingConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    balance: BalanceConfig = Field(default_factory=BalanceConfig)
    estimation: EstimationConfig = Field(default_factory=EstimationConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    simulation: SimConfig = Field(default_factory=SimConfig)

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        """Cross-section rules."""
        if self.model.strata is not None and not self.weighting.stratify:
            raise ValueError("model.strata requires weighting.stratify = true")
        if self.input.path is not None and self.columns is None:
            raise ValueError("input.path requires a columns section")
        return self
