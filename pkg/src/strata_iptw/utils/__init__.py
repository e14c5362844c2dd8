"""Utility modules for strata-iptw."""

from strata_iptw.utils.errors import (
    BootstrapUnstableError,
    CohortParseError,
    CohortSchemaError,
    CohortValidationError,
    ConfigError,
    CovariateNotFoundError,
    DegenerateResponseError,
    DesignSpecError,
    DimensionMismatchError,
    MissingOutcomeError,
    NonConvergenceError,
    NumericalError,
    RankDeficiencyError,
    StrataIPTWError,
    StructuralPositivityError,
    WeightDomainError,
)

__all__ = [
    "StrataIPTWError",
    "ConfigError",
    "CohortSchemaError",
    "CohortParseError",
    "CohortValidationError",
    "DesignSpecError",
    "CovariateNotFoundError",
    "MissingOutcomeError",
    "StructuralPositivityError",
    "NumericalError",
    "DegenerateResponseError",
    "RankDeficiencyError",
    "NonConvergenceError",
    "DimensionMismatchError",
    "WeightDomainError",
    "BootstrapUnstableError",
]
