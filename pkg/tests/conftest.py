"""Shared fixtures for strata-iptw tests."""

from typing import Mapping, Sequence

import numpy as np
import pytest

from strata_iptw.core.cohort import Cohort, PatientRecord
from strata_iptw.core.simulate import simulate_cohort
from strata_iptw.schemas.config import OutcomeModel, SimConfig


def make_cohort(
    strata: Sequence[str],
    z: Sequence[int],
    covariates: Mapping[str, Sequence[float]],
    y: Sequence[float] | None = None,
) -> Cohort:
    """Build a cohort from parallel columns; levels in first-seen order."""
    names = tuple(covariates)
    patients = tuple(
        PatientRecord(
            id=f"id{i}",
            stratum=str(strata[i]),
            exposure=int(z[i]),
            covariates={name: float(covariates[name][i]) for name in names},
            outcome=None if y is None else float(y[i]),
        )
        for i in range(len(z))
    )
    levels = tuple(dict.fromkeys(str(s) for s in strata))
    return Cohort(patients=patients, covariate_names=names, stratum_levels=levels)


def random_cohort(rng: np.random.Generator, n_strata: int | None = None, with_outcome: bool = False) -> Cohort:
    """Random cohort with both arms in every stratum and no separation-prone sizes.

    Exposure depends on the covariates through a stratum-specific logistic model.
    """
    k = n_strata or int(rng.integers(1, 4))
    strata, z, x1, x2 = [], [], [], []
    for s in range(k):
        size = int(rng.integers(25, 60))
        a = rng.normal(0.0, 1.0, size)
        b = (rng.random(size) < rng.uniform(0.2, 0.8)).astype(float)
        logits = rng.normal(0.0, 0.5) + rng.normal(0.0, 0.7) * a + rng.normal(0.0, 0.7) * b
        arm = (rng.random(size) < 1.0 / (1.0 + np.exp(-logits))).astype(int)
        # At least three patients per arm, each arm holding both binary values
        arm[:3] = 0
        arm[3:6] = 1
        b[[0, 3]] = 0.0
        b[[1, 4]] = 1.0
        strata += [f"S{s + 1}"] * size
        z += arm.tolist()
        x1 += a.tolist()
        x2 += b.tolist()
    y = None
    if with_outcome:
        y = (2.0 * np.asarray(z) + np.asarray(x1) + rng.normal(0.0, 1.0, len(z))).tolist()
    return make_cohort(strata, z, {"x1": x1, "x2": x2}, y)


# =============================================================================
# Fixtures
# =============================================================================


@pytest.fixture
def tiny_cohort():
    """Two strata, both arms in each, one continuous and one binary covariate."""
    return make_cohort(
        strata=["A", "A", "A", "A", "A", "A", "B", "B", "B", "B", "B", "B"],
        z=[0, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 0],
        covariates={
            "age": [50, 62, 55, 48, 41, 60, 70, 66, 58, 52, 61, 73],
            "flag": [1, 0, 1, 0, 1, 0, 1, 1, 0, 1, 0, 0],
        },
        y=[1.0, 2.5, 1.8, 3.2, 2.9, 4.1, 5.0, 4.4, 6.3, 5.9, 6.6, 4.8],
    )


@pytest.fixture(scope="module")
def demo_cohort():
    """Default simulated demonstration cohort (180 patients, no outcomes)."""
    return simulate_cohort(SimConfig())


@pytest.fixture(scope="module")
def demo_cohort_with_outcomes():
    """Default demonstration design with the default outcome model."""
    return simulate_cohort(SimConfig(outcome_model=OutcomeModel()))
