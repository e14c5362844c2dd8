"""Patient-level cohort model and CSV ingestion.

A ``Cohort`` is an immutable, ordered collection of ``PatientRecord`` objects.
Record order is preserved by every operation so that weight and score vectors
line up positionally with the cohort. Column arrays are built once at
construction and shared by slices.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
import pandas as pd

from strata_iptw.schemas.config import ColumnSchema
from strata_iptw.utils.errors import (
    CohortParseError,
    CohortSchemaError,
    CohortValidationError,
    CovariateNotFoundError,
    StructuralPositivityError,
)

logger = logging.getLogger(__name__)

STRATUM_INDICATOR_PREFIX = "stratum_"
# Role columns of the flat cohort table written by write_csv.
ROLE_COLUMNS = ("id", "stratum", "Z", "y")


def _check_role_collisions(names: Sequence[str]) -> None:
    clashes = sorted(set(names) & set(ROLE_COLUMNS))
    if clashes:
        raise CohortValidationError(
            f"covariate names {clashes} clash with the cohort table columns {list(ROLE_COLUMNS)}"
        )


@dataclass(frozen=True)
class PatientRecord:
    """One patient row.

    Attributes:
        id: Opaque identifier (duplicates are allowed)
        stratum: Stratum label
        exposure: Exposure indicator, 0 or 1
        covariates: Covariate name to finite numeric value
        outcome: Outcome value, or None when not observed
    """

    id: str
    stratum: str
    exposure: int
    covariates: Mapping[str, float]
    outcome: float | None = None

    def __post_init__(self):
        if self.exposure not in (0, 1):
            raise CohortValidationError(
                f"patient '{self.id}' has exposure {self.exposure!r}, expected 0 or 1"
            )
        for name, value in self.covariates.items():
            if not math.isfinite(value):
                raise CohortValidationError(
                    f"patient '{self.id}' has non-finite covariate {name}={value!r}"
                )
        if self.outcome is not None and not math.isfinite(self.outcome):
            raise CohortValidationError(
                f"patient '{self.id}' has non-finite outcome {self.outcome!r}"
            )


class CohortColumns(NamedTuple):
    """Column-oriented view of a cohort, aligned with record order."""

    ids: np.ndarray
    strata: np.ndarray
    exposure: np.ndarray
    outcome: np.ndarray
    covariates: dict[str, np.ndarray]

    def take(self, indices: np.ndarray) -> "CohortColumns":
        return CohortColumns(
            ids=self.ids[indices],
            strata=self.strata[indices],
            exposure=self.exposure[indices],
            outcome=self.outcome[indices],
            covariates={k: v[indices] for k, v in self.covariates.items()},
        )


@dataclass(frozen=True)
class Cohort:
    """Validated, immutable cohort.

    Attributes:
        patients: Records in input order
        covariate_names: Ordered covariate labels every record carries
        stratum_levels: Ordered distinct stratum labels, each with >= 1 record
    """

    patients: tuple[PatientRecord, ...]
    covariate_names: tuple[str, ...]
    stratum_levels: tuple[str, ...]
    _columns: CohortColumns | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "stratum_levels", tuple(self.stratum_levels))

        if len(set(self.covariate_names)) != len(self.covariate_names):
            raise CohortValidationError("covariate names must be unique")
        _check_role_collisions(self.covariate_names)
        if len(set(self.stratum_levels)) != len(self.stratum_levels):
            raise CohortValidationError("stratum levels must be unique")

        if self._columns is None:
            object.__setattr__(self, "_columns", self._build_columns())

        levels = set(self.stratum_levels)
        for row, label in enumerate(self._columns.strata, start=1):
            if label not in levels:
                raise CohortValidationError(f"stratum '{label}' is not a declared level", row=row)
        present = set(self._columns.strata.tolist())
        empty = [s for s in self.stratum_levels if s not in present]
        if empty:
            raise CohortValidationError(f"stratum level(s) with no records: {empty}")

    def _build_columns(self) -> CohortColumns:
        n = len(self.patients)
        covariates = {name: np.empty(n, dtype=float) for name in self.covariate_names}
        for row, patient in enumerate(self.patients):
            for name in self.covariate_names:
                try:
                    covariates[name][row] = patient.covariates[name]
                except KeyError:
                    raise CohortValidationError(
                        f"patient '{patient.id}' has no value for covariate '{name}'", row=row + 1
                    ) from None
        return CohortColumns(
            ids=np.array([p.id for p in self.patients], dtype=object),
            strata=np.array([p.stratum for p in self.patients], dtype=object),
            exposure=np.array([p.exposure for p in self.patients], dtype=np.int8),
            outcome=np.array(
                [np.nan if p.outcome is None else p.outcome for p in self.patients], dtype=float
            ),
            covariates=covariates,
        )

    # ------------------------------------------------------------------
    # Column access
    # ------------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.patients)

    @property
    def n(self) -> int:
        return len(self.patients)

    @property
    def ids(self) -> np.ndarray:
        return self._columns.ids

    @property
    def strata(self) -> np.ndarray:
        return self._columns.strata

    @property
    def exposure(self) -> np.ndarray:
        return self._columns.exposure

    @property
    def outcome(self) -> np.ndarray:
        """Outcomes with NaN where a record has none."""
        return self._columns.outcome

    @property
    def has_outcomes(self) -> bool:
        return self.n > 0 and not np.isnan(self._columns.outcome).any()

    def covariate(self, name: str) -> np.ndarray:
        """Return one covariate column.

        Raises:
            CovariateNotFoundError: If the cohort has no such covariate
        """
        try:
            return self._columns.covariates[name]
        except KeyError:
            raise CovariateNotFoundError(name, list(self.covariate_names)) from None

    def covariate_matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named covariates into an (n x k) matrix."""
        if not names:
            return np.empty((self.n, 0))
        return np.column_stack([self.covariate(name) for name in names])

    def stratum_counts(self) -> dict[str, int]:
        return {s: int(np.sum(self.strata == s)) for s in self.stratum_levels}

    # ------------------------------------------------------------------
    # Derived cohorts
    # ------------------------------------------------------------------

    def take(self, indices: Sequence[int] | np.ndarray) -> "Cohort":
        """Cohort of the given rows, in the given order (repeats allowed)."""
        idx = np.asarray(indices, dtype=np.intp)
        columns = self._columns.take(idx)
        present = set(columns.strata.tolist())
        return Cohort(
            patients=tuple(self.patients[i] for i in idx),
            covariate_names=self.covariate_names,
            stratum_levels=tuple(s for s in self.stratum_levels if s in present),
            _columns=columns,
        )

    def with_covariates(self, new: Mapping[str, np.ndarray]) -> "Cohort":
        """Cohort with extra covariate columns appended."""
        clash = [name for name in new if name in self.covariate_names]
        if clash:
            raise CohortValidationError(f"covariate(s) already present: {clash}")
        arrays = {name: np.asarray(values, dtype=float) for name, values in new.items()}
        for name, values in arrays.items():
            if values.shape != (self.n,):
                raise CohortValidationError(f"covariate '{name}' must have length {self.n}")
        patients = tuple(
            PatientRecord(
                id=p.id,
                stratum=p.stratum,
                exposure=p.exposure,
                covariates={**p.covariates, **{k: float(v[i]) for k, v in arrays.items()}},
                outcome=p.outcome,
            )
            for i, p in enumerate(self.patients)
        )
        return Cohort(
            patients=patients,
            covariate_names=self.covariate_names + tuple(arrays),
            stratum_levels=self.stratum_levels,
        )

    def to_frame(self) -> pd.DataFrame:
        """Flat table: id, stratum, Z, covariates..., y."""
        frame = pd.DataFrame({"id": self.ids, "stratum": self.strata, "Z": self.exposure})
        for name in self.covariate_names:
            frame[name] = self.covariate(name)
        frame["y"] = self.outcome
        return frame


# =============================================================================
# Stratum operations
# =============================================================================


def split_by_stratum(cohort: Cohort) -> dict[str, Cohort]:
    """Partition a cohort by stratum, keeping record order within each part.

    Args:
        cohort: Cohort to split

    Returns:
        Stratum label to sub-cohort, in ``stratum_levels`` order
    """
    return {
        level: cohort.take(np.flatnonzero(cohort.strata == level))
        for level in cohort.stratum_levels
    }


def stratum_indicator_name(level: str) -> str:
    return f"{STRATUM_INDICATOR_PREFIX}{level}"


def add_stratum_indicators(cohort: Cohort) -> Cohort:
    """Append 0/1 indicators for every non-reference stratum level.

    The first level is the reference, matching the categorical coding used on
    load. Indicators already present are left untouched.

    Args:
        cohort: Cohort to extend

    Returns:
        Cohort with ``stratum_<level>`` covariates
    """
    new = {
        stratum_indicator_name(level): (cohort.strata == level).astype(float)
        for level in cohort.stratum_levels[1:]
        if stratum_indicator_name(level) not in cohort.covariate_names
    }
    return cohort.with_covariates(new) if new else cohort


def check_structural_positivity(cohort: Cohort) -> None:
    """Require both exposure arms in every stratum.

    Raises:
        StructuralPositivityError: Naming the first stratum with an empty arm
    """
    for level in cohort.stratum_levels:
        arms = cohort.exposure[cohort.strata == level]
        for arm in (0, 1):
            if not np.any(arms == arm):
                raise StructuralPositivityError(level, arm)


def crosstab(cohort: Cohort) -> pd.DataFrame:
    """Count of patients by stratum (rows) and exposure (columns), with column percentages."""
    counts = pd.crosstab(
        pd.Categorical(cohort.strata, categories=list(cohort.stratum_levels)),
        pd.Series(cohort.exposure, name="Z"),
        rownames=["stratum"],
        dropna=False,
    )
    percent = counts / counts.sum(axis=0) * 100.0
    return pd.concat({"n": counts, "percent": percent}, axis=1)


# =============================================================================
# CSV ingestion
# =============================================================================


def _parse_numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
    raw = frame[column].str.strip()
    values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise CohortParseError(column, row + 1, frame[column].iloc[row])
    # Validated cells are re-read with exact decimal conversion.
    return raw.astype(float).to_numpy()


def _expand_categorical(frame: pd.DataFrame, column: str) -> dict[str, np.ndarray]:
    raw = frame[column].str.strip()
    empty = (raw == "").to_numpy()
    if empty.any():
        row = int(np.flatnonzero(empty)[0])
        raise CohortParseError(column, row + 1, frame[column].iloc[row])
    levels = sorted(raw.unique())
    return {f"{column}_{level}": (raw == level).to_numpy(dtype=float) for level in levels[1:]}


def load_csv(
    path: str | Path,
    schema: ColumnSchema,
    require_positivity: bool = True,
) -> Cohort:
    """Load and validate a cohort CSV.

    Categorical covariates are expanded to 0/1 indicator columns named
    ``<column>_<level>``; the first level in sorted order is the reference and
    is dropped. Missing values are rejected.

    Args:
        path: UTF-8 CSV file with a header row
        schema: Column roles
        require_positivity: Reject strata lacking an exposure arm

    Returns:
        Validated cohort in file row order

    Raises:
        CohortSchemaError: A schema column is missing
        CohortParseError: A covariate or outcome cell is not a finite number
        CohortValidationError: Exposure outside {0, 1}, an empty stratum label,
            or a covariate named like a column of the written table
        StructuralPositivityError: A stratum has no exposed or no unexposed patients
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    required = [schema.exposure, schema.stratum, *schema.covariates]
    required += [c for c in (schema.id, schema.outcome) if c is not None]
    for column in required:
        if column not in frame.columns:
            raise CohortSchemaError(column, list(frame.columns))

    n = len(frame)
    exposure_raw = frame[schema.exposure].str.strip()
    exposure_num = pd.to_numeric(exposure_raw, errors="coerce").to_numpy(dtype=float)
    for row in range(n):
        if exposure_num[row] not in (0.0, 1.0):
            raise CohortValidationError(
                f"exposure '{schema.exposure}' is {exposure_raw.iloc[row]!r}, expected 0 or 1",
                row=row + 1,
            )
    exposure = exposure_num.astype(int)

    strata = frame[schema.stratum].str.strip().to_numpy(dtype=object)
    for row in range(n):
        if strata[row] == "":
            raise CohortValidationError(f"stratum '{schema.stratum}' is empty", row=row + 1)

    covariates: dict[str, np.ndarray] = {}
    for column in schema.covariates:
        if column in schema.categorical:
            covariates.update(_expand_categorical(frame, column))
        else:
            covariates[column] = _parse_numeric(frame, column)
    _check_role_collisions(list(covariates))

    outcome: list[float | None] = [None] * n
    if schema.outcome is not None:
        raw = frame[schema.outcome].str.strip()
        values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
        for row in range(n):
            if raw.iloc[row] == "":
                continue
            if not np.isfinite(values[row]):
                raise CohortParseError(schema.outcome, row + 1, frame[schema.outcome].iloc[row])
            outcome[row] = float(raw.iloc[row])

    ids = (
        frame[schema.id].to_numpy(dtype=object)
        if schema.id is not None
        else np.array([str(i + 1) for i in range(n)], dtype=object)
    )
    names = list(covariates)
    patients = tuple(
        PatientRecord(
            id=str(ids[row]),
            stratum=str(strata[row]),
            exposure=int(exposure[row]),
            covariates={name: float(covariates[name][row]) for name in names},
            outcome=outcome[row],
        )
        for row in range(n)
    )
    cohort = Cohort(
        patients=patients,
        covariate_names=tuple(names),
        stratum_levels=tuple(sorted(set(strata.tolist()))),
    )
    if require_positivity:
        check_structural_positivity(cohort)

    logger.info(
        f"Loaded {cohort.n} patients from {path} "
        f"({len(names)} covariates, strata {list(cohort.stratum_levels)})"
    )
    return cohort


def default_schema(cohort: Cohort) -> ColumnSchema:
    """Column schema matching files produced by ``write_csv``."""
    return ColumnSchema(
        id="id",
        exposure="Z",
        stratum="stratum",
        covariates=list(cohort.covariate_names),
        outcome="y",
    )


def write_csv(cohort: Cohort, path: str | Path) -> Path:
    """Write a cohort as CSV readable with ``default_schema``.

    Floats are written with 17 significant digits so a reload reproduces them exactly.

    Args:
        cohort: Cohort to write
        path: Destination file

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cohort.to_frame().to_csv(path, index=False, float_format="%.17g", na_rep="")
    logger.info(f"Wrote {cohort.n} patients to {path}")
    return path
