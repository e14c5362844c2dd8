"""Custom exception classes and error handling utilities."""

from typing import Any


class StrataIPTWError(Exception):
    """Base exception for strata-iptw.

    Attributes:
        exit_code: Process exit code the CLI uses for this error family
        stratum: Stratum label the error arose in, when known
    """

    exit_code: int = 1

    def __init__(self, message: str):
        self.stratum: str | None = None
        super().__init__(message)

    def tag_stratum(self, stratum: str) -> "StrataIPTWError":
        """Attach a stratum label to the error and its message.

        Args:
            stratum: Stratum the failing computation ran on

        Returns:
            The same exception, for re-raising
        """
        if self.stratum is None:
            self.stratum = stratum
            self.args = (f"[stratum {stratum}] {self.args[0]}", *self.args[1:])
        return self


# =============================================================================
# Configuration and input validation (exit code 2)
# =============================================================================


class ConfigError(StrataIPTWError):
    """Raised when a run configuration or command-line combination is invalid."""

    exit_code = 2


class CohortSchemaError(ConfigError):
    """Raised when a column named by the schema is absent from the input."""

    def __init__(self, column: str, available: list[str] | None = None):
        self.column = column
        self.available = available or []
        message = f"Column '{column}' not found in input"
        if self.available:
            message += f". Available columns: {', '.join(self.available)}"
        super().__init__(message)


class CohortParseError(ConfigError):
    """Raised when a cell cannot be read as a finite number."""

    def __init__(self, column: str, row: int, value: Any):
        self.column = column
        self.row = row
        self.value = value
        super().__init__(
            f"Row {row}: column '{column}' has value {value!r}, expected a finite number "
            f"(missing values are rejected, not imputed)"
        )


class CohortValidationError(ConfigError):
    """Raised when a record violates a cohort invariant."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"Row {row}: {message}"
        super().__init__(message)


class DesignSpecError(ConfigError):
    """Raised when a model specification references unknown or invalid terms."""

    def __init__(self, name: str, message: str | None = None):
        self.name = name
        super().__init__(message or f"Unknown covariate '{name}' in model specification")


class CovariateNotFoundError(ConfigError):
    """Raised when a report or export asks for a covariate the cohort lacks."""

    def __init__(self, name: str, available: list[str]):
        self.name = name
        self.available = available
        super().__init__(
            f"Covariate '{name}' not found. Available covariates: {', '.join(available)}"
        )


class MissingOutcomeError(ConfigError):
    """Raised when effect estimation needs outcomes that are absent."""

    def __init__(self, ids: list[str]):
        self.ids = ids
        shown = ", ".join(ids[:10])
        more = f" (and {len(ids) - 10} more)" if len(ids) > 10 else ""
        super().__init__(f"Outcome missing for {len(ids)} patient(s): {shown}{more}")


# =============================================================================
# Structural positivity (exit code 3)
# =============================================================================


class StructuralPositivityError(StrataIPTWError):
    """Raised when a stratum has no exposed or no unexposed patients."""

    exit_code = 3

    def __init__(self, stratum: str, arm: int, message: str | None = None):
        self.arm = arm
        label = "exposed" if arm == 1 else "unexposed"
        super().__init__(
            message
            or (
                f"Stratum '{stratum}' has no {label} patients (Z={arm}); propensity "
                f"weights cannot be computed within it. Merge or drop the stratum."
            )
        )
        self.stratum = stratum


# =============================================================================
# Numerical failures (exit code 4)
# =============================================================================


class NumericalError(StrataIPTWError):
    """Base class for numerical failures."""

    exit_code = 4


class DegenerateResponseError(NumericalError):
    """Raised when the exposure vector contains a single value."""

    def __init__(self, value: int, n: int):
        self.value = value
        self.n = n
        super().__init__(
            f"Exposure is {value} for all {n} patients; a propensity model needs both arms"
        )


class RankDeficiencyError(NumericalError):
    """Raised when the weighted normal equations are singular."""

    def __init__(self, columns: list[str], message: str | None = None):
        self.columns = columns
        super().__init__(
            message
            or (
                f"Design matrix is rank deficient; collinear column(s): {', '.join(columns)}. "
                f"Simplify the model specification for this data."
            )
        )


class NonConvergenceError(NumericalError):
    """Raised when IRLS hits its iteration cap without converging.

    Attributes:
        fit: The last iterate, as a PropensityFit with converged=False
    """

    def __init__(self, fit: Any, max_iter: int):
        self.fit = fit
        self.max_iter = max_iter
        super().__init__(
            f"Logistic fit did not converge in {max_iter} iterations "
            f"(last deviance {getattr(fit, 'deviance', float('nan')):.6g})"
        )


class DimensionMismatchError(NumericalError):
    """Raised when array shapes disagree."""

    def __init__(self, what: str, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class WeightDomainError(NumericalError):
    """Raised when scores or weights fall outside their valid domain."""


class BootstrapUnstableError(NumericalError):
    """Raised when too many bootstrap resamples fail."""

    def __init__(self, failures: int, n_boot: int, limit: float):
        self.failures = failures
        self.n_boot = n_boot
        self.limit = limit
        super().__init__(
            f"{failures} of {n_boot} bootstrap resamples failed "
            f"(limit {limit:.0%}); the weighting pipeline is unstable on this cohort"
        )
