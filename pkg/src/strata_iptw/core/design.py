"""Design matrices from declarative propensity model specifications."""

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from strata_iptw.core.cohort import Cohort
from strata_iptw.utils.errors import DesignSpecError

INTERCEPT_LABEL = "(Intercept)"


@dataclass(frozen=True)
class DesignSpec:
    """Terms of a logistic propensity model.

    Attributes:
        main_effects: Covariates entering as main effects
        interactions: Pairs of distinct covariates entering as products
        intercept: Always True; a column of ones leads the matrix

    Example:
        DesignSpec(
            main_effects=("age", "stage_IV", "stratum_S2"),
            interactions=(("age", "stratum_S2"), ("stage_IV", "stratum_S2")),
        )
    """

    main_effects: tuple[str, ...]
    interactions: tuple[tuple[str, str], ...] = ()
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "main_effects", tuple(self.main_effects))
        object.__setattr__(self, "interactions", tuple(tuple(p) for p in self.interactions))
        if not self.intercept:
            raise DesignSpecError("(Intercept)", "Models without an intercept are not supported")
        for pair in self.interactions:
            if len(pair) != 2:
                raise DesignSpecError(str(pair), f"Interaction {pair} must name exactly two covariates")
            if pair[0] == pair[1]:
                raise DesignSpecError(pair[0], f"Interaction ({pair[0]}, {pair[1]}) repeats a covariate")
        if len(set(self.main_effects)) != len(self.main_effects):
            raise DesignSpecError(
                ",".join(self.main_effects), "Main effects must not repeat a covariate"
            )

    @property
    def column_labels(self) -> tuple[str, ...]:
        return (
            INTERCEPT_LABEL,
            *self.main_effects,
            *(f"{a}:{b}" for a, b in self.interactions),
        )

    @property
    def n_columns(self) -> int:
        return 1 + len(self.main_effects) + len(self.interactions)

    def referenced_covariates(self) -> list[str]:
        names = list(self.main_effects)
        for pair in self.interactions:
            names.extend(n for n in pair if n not in names)
        return names

    def validate(self, covariate_names: Iterable[str]) -> None:
        """Check every referenced covariate exists.

        Raises:
            DesignSpecError: Naming the first unknown covariate
        """
        known = set(covariate_names)
        for name in self.referenced_covariates():
            if name not in known:
                raise DesignSpecError(name)

    @classmethod
    def from_names(
        cls, main: Sequence[str], interactions: Sequence[Sequence[str]] = ()
    ) -> "DesignSpec":
        return cls(main_effects=tuple(main), interactions=tuple(tuple(p) for p in interactions))


@dataclass(frozen=True)
class DesignMatrix:
    """Numeric design matrix with column labels."""

    values: np.ndarray
    columns: tuple[str, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def build_design_matrix(cohort: Cohort, spec: DesignSpec) -> DesignMatrix:
    """Build the (n x p) matrix for ``spec`` on ``cohort``.

    Column 0 is the intercept, then main effects, then one product column per
    interaction. Rank deficiency is left for the fitting step to diagnose.

    Args:
        cohort: Source cohort
        spec: Model terms

    Returns:
        DesignMatrix with p = 1 + len(main_effects) + len(interactions)

    Raises:
        DesignSpecError: If the spec names a covariate the cohort lacks
    """
    spec.validate(cohort.covariate_names)
    columns = [np.ones(cohort.n)]
    columns.extend(cohort.covariate(name) for name in spec.main_effects)
    columns.extend(cohort.covariate(a) * cohort.covariate(b) for a, b in spec.interactions)
    return DesignMatrix(values=np.column_stack(columns), columns=spec.column_labels)
