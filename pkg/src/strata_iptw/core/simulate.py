"""Synthetic cohorts shaped like the two-stratum oncology demonstration.

Four cells (S1 unexposed, S1 exposed, S2 unexposed, S2 exposed) are generated
with exact sizes. Each cell draws from its own PCG64 substream spawned from
``SeedSequence(cfg.seed)``, so a cell's values depend only on the seed and
the cell's position.
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from strata_iptw.core.cohort import Cohort, PatientRecord
from strata_iptw.schemas.config import SimConfig
from strata_iptw.utils.errors import CovariateNotFoundError

logger = logging.getLogger(__name__)

SIM_STRATA = ("S1", "S2")
SIM_COVARIATES = ("age", "stage_IV")
# (stratum, exposure) for each cell, in SimConfig order
CELLS = (("S1", 0), ("S1", 1), ("S2", 0), ("S2", 1))


def simulate_cohort(cfg: SimConfig | None = None) -> Cohort:
    """Generate a cohort from ``cfg``.

    Per cell: age ~ Normal(mean, sd), stage_IV ~ Bernoulli(p). With an outcome
    model, y = tau_stratum * Z + sum(gamma * covariate) + Normal(0, noise_sd).

    Args:
        cfg: Generator parameters; defaults reproduce the demonstration design

    Returns:
        Cohort with ids P0001..., covariates (age, stage_IV) and strata (S1, S2)
    """
    cfg = cfg or SimConfig()
    streams = np.random.SeedSequence(cfg.seed).spawn(len(CELLS))
    width = max(4, len(str(sum(cfg.group_sizes))))
    outcome = cfg.outcome_model

    patients = []
    for cell, ((stratum, arm), child) in enumerate(zip(CELLS, streams)):
        rng = np.random.default_rng(child)
        size = cfg.group_sizes[cell]
        ages = rng.normal(cfg.age_means[cell], cfg.age_sds[cell], size)
        stage4 = (rng.random(size) < cfg.stage4_props[cell]).astype(float)
        if outcome is not None:
            gamma = outcome.covariate_coefficients
            y = (
                outcome.true_effects[stratum] * arm
                + gamma.get("age", 0.0) * ages
                + gamma.get("stage_IV", 0.0) * stage4
                + rng.normal(0.0, outcome.noise_sd, size)
            )
        for i in range(size):
            patients.append(
                PatientRecord(
                    id=f"P{len(patients) + 1:0{width}d}",
                    stratum=stratum,
                    exposure=arm,
                    covariates={"age": float(ages[i]), "stage_IV": float(stage4[i])},
                    outcome=float(y[i]) if outcome is not None else None,
                )
            )

    cohort = Cohort(patients=tuple(patients), covariate_names=SIM_COVARIATES, stratum_levels=SIM_STRATA)
    logger.info(f"Simulated {cohort.n} patients (seed {cfg.seed}, cells {list(cfg.group_sizes)})")
    return cohort


def export_fig1_data(cohort: Cohort, path: str | Path | None = None) -> pd.DataFrame:
    """Long-format age data by stratum and exposure for density plots.

    Args:
        cohort: Cohort with an ``age`` covariate
        path: Optional CSV destination

    Returns:
        Frame with columns stratum, Z, age in cohort order

    Raises:
        CovariateNotFoundError: The cohort has no age covariate
    """
    if "age" not in cohort.covariate_names:
        raise CovariateNotFoundError("age", list(cohort.covariate_names))
    frame = pd.DataFrame({"stratum": cohort.strata, "Z": cohort.exposure, "age": cohort.covariate("age")})
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g")
        logger.info(f"Wrote age distribution data to {path}")
    return frame
