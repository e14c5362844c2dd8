"""Report serialization utilities.

JSON is the canonical output: keys sorted, two-space indent, undefined values
as ``null``, no timestamps, so re-runs are byte-identical. Markdown tables are
derived views laid out like published balance tables.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from strata_iptw.core.cohort import Cohort, crosstab
from strata_iptw.core.diagnostics import BalanceReport
from strata_iptw.core.estimation import EffectEstimate
from strata_iptw.core.weights import WeightSet

logger = logging.getLogger(__name__)

NOT_APPLICABLE = "n/a"
WEIGHT_COLUMNS = ("id", "stratum", "Z", "e_hat", "w", "w_prime", "w_doubleprime")


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays, paths and tuples to JSON-ready values.

    Non-finite floats become None.
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def dumps(data: Any) -> str:
    """Serialize to the canonical JSON text."""
    return json.dumps(to_jsonable(data), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(data: Any, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def write_text(text: str, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


# =============================================================================
# Weights and fits
# =============================================================================


def weights_frame(cohort: Cohort, weight_set: WeightSet) -> pd.DataFrame:
    """Per-patient scores and weights at every stage, in cohort order.

    Stage columns absent from an unstratified run are left empty.
    """
    empty = np.full(cohort.n, np.nan)
    return pd.DataFrame(
        {
            "id": cohort.ids,
            "stratum": cohort.strata,
            "Z": cohort.exposure,
            "e_hat": weight_set.scores,
            "w": weight_set.raw,
            "w_prime": weight_set.stage1 if weight_set.stage1 is not None else empty,
            "w_doubleprime": weight_set.stage2 if weight_set.stage2 is not None else empty,
        },
        columns=list(WEIGHT_COLUMNS),
    )


def write_weights_csv(cohort: Cohort, weight_set: WeightSet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights_frame(cohort, weight_set).to_csv(path, index=False, float_format="%.17g", na_rep="")
    logger.info(f"Wrote weights for {cohort.n} patients to {path}")
    return path


def fits_to_dict(weight_set: WeightSet) -> dict[str, Any]:
    """Fit summaries plus weighting provenance."""
    data: dict[str, Any] = {
        "stratified": weight_set.stratified,
        "stages": weight_set.stage_labels,
        "final_stage": weight_set.final_stage,
        "truncate_percentile": weight_set.truncate_percentile,
    }
    if weight_set.stratified:
        data["fits"] = {level: fit.to_dict() for level, fit in weight_set.per_stratum_fits.items()}
    else:
        data["fits"] = {"global": weight_set.global_fit.to_dict()}
    return data


# =============================================================================
# Markdown tables
# =============================================================================


def _fmt(value: float | None, digits: int = 3) -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return NOT_APPLICABLE
    return f"{value:.{digits}f}"


def _to_markdown(frame: pd.DataFrame) -> str:
    # Cells are pre-formatted strings; numparse would re-round "0.600" to "0.6".
    return frame.to_markdown(index=False, disable_numparse=True) + "\n"


def scope_title(report: BalanceReport) -> str:
    n = report.n_unexposed + report.n_exposed
    if report.scope == "overall":
        return f"Overall (N={n})"
    return f"Stratum {report.scope} (N={n})"


def balance_markdown(report: BalanceReport) -> str:
    """Balance table with unadjusted and adjusted blocks.

    The first row carries arm sizes (unadjusted) and ESS (adjusted). Adjusted
    SMDs above the report threshold are marked with ``*``.
    """
    records = [
        {
            "Covariate": "N / ESS",
            "Unadjusted Unexposed": str(report.n_unexposed),
            "Unadjusted Exposed": str(report.n_exposed),
            "Unadjusted SMD": "",
            "Adjusted Unexposed": f"ESS={report.ess_unexposed:.1f}",
            "Adjusted Exposed": f"ESS={report.ess_exposed:.1f}",
            "Adjusted SMD": "",
        }
    ]
    for row in report.rows:
        flag = " *" if row.flagged(report.smd_threshold) else ""
        records.append(
            {
                "Covariate": row.name,
                "Unadjusted Unexposed": _fmt(row.unadj_mean_unexposed),
                "Unadjusted Exposed": _fmt(row.unadj_mean_exposed),
                "Unadjusted SMD": _fmt(row.unadj_smd),
                "Adjusted Unexposed": _fmt(row.adj_mean_unexposed),
                "Adjusted Exposed": _fmt(row.adj_mean_exposed),
                "Adjusted SMD": _fmt(row.adj_smd) + flag,
            }
        )
    title = f"### {scope_title(report)}\n\nWeights: {report.stage}; * |SMD| > {report.smd_threshold:g}\n\n"
    return title + _to_markdown(pd.DataFrame.from_records(records))


def effects_markdown(estimates: Sequence[EffectEstimate]) -> str:
    frame = pd.DataFrame(
        {
            "Estimand": [est.estimand for est in estimates],
            "Method": [est.method for est in estimates],
            "Estimate": [_fmt(est.point) for est in estimates],
            "SE": [_fmt(est.se) for est in estimates],
            "95% CI": [f"[{_fmt(est.ci_low)}, {_fmt(est.ci_high)}]" for est in estimates],
            "Resamples (failed)": [
                f"{est.n_boot} ({est.boot_failures})" if est.n_boot is not None else "" for est in estimates
            ],
        }
    )
    return _to_markdown(frame)


def crosstab_markdown(cohort: Cohort) -> str:
    """Stratum by exposure counts with column percentages."""
    table = crosstab(cohort)
    frame = pd.DataFrame({"Stratum": [str(level) for level in table.index]})
    for arm, label in ((0, "Unexposed (Z=0)"), (1, "Exposed (Z=1)")):
        counts = table[("n", arm)] if ("n", arm) in table.columns else pd.Series(0, index=table.index)
        percents = (
            table[("percent", arm)] if ("percent", arm) in table.columns else pd.Series(np.nan, index=table.index)
        )
        frame[label] = [f"{int(n)} ({p:.1f}%)" for n, p in zip(counts, percents)]
    return _to_markdown(frame)


def shares_markdown(shares: dict[str, dict[str, dict[str, float]]]) -> str:
    """Stratum shares, unweighted and under each weight stage."""
    stages = list(shares)
    levels = list(next(iter(shares.values()))) if shares else []
    frame = pd.DataFrame({"Stratum": levels})
    if stages:
        frame["Unweighted"] = [f"{shares[stages[0]][level]['unweighted']:.3f}" for level in levels]
    for stage in stages:
        frame[f"Weighted ({stage})"] = [f"{shares[stage][level]['weighted']:.3f}" for level in levels]
    return _to_markdown(frame)
