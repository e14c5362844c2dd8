"""Logistic propensity models fitted by iteratively reweighted least squares.

The fit runs on internally centered and scaled columns for conditioning and
back-transforms the coefficients, so outputs are on the original covariate
scale. Fitted scores are clamped to [CLAMP_EPSILON, 1 - CLAMP_EPSILON].
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit

from strata_iptw.core.design import INTERCEPT_LABEL, DesignMatrix
from strata_iptw.utils.errors import (
    DegenerateResponseError,
    DimensionMismatchError,
    NonConvergenceError,
    RankDeficiencyError,
    WeightDomainError,
)

logger = logging.getLogger(__name__)

CLAMP_EPSILON = 1e-6
DEVIANCE_TOL = 1e-8
MAX_ITER = 50
MAX_HALVINGS = 10
# Per-observation score-equation tolerance on the standardized scale,
# checked alongside the deviance rule.
GRADIENT_TOL = 1e-10
_HESSIAN_WEIGHT_FLOOR = 1e-300


@dataclass(frozen=True)
class PropensityFit:
    """Result of a logistic propensity fit.

    Attributes:
        coefficients: Estimated coefficients on the original column scale
        scores: Clamped fitted propensity scores, one per row
        converged: Whether the stopping rule was met
        iterations: IRLS iterations performed
        deviance: Final deviance
        separation_warning: Some unclamped fitted probability lies within epsilon of 0 or 1
        columns: Column labels matching ``coefficients``
        n_clamped: Number of scores moved by clamping
        deviance_trace: Deviance at the start and after each iteration
    """

    coefficients: np.ndarray
    scores: np.ndarray
    converged: bool
    iterations: int
    deviance: float
    separation_warning: bool
    columns: tuple[str, ...] = ()
    n_clamped: int = 0
    deviance_trace: tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready fit summary."""
        labels = self.columns or tuple(f"x{j}" for j in range(len(self.coefficients)))
        return {
            "coefficients": {label: float(b) for label, b in zip(labels, self.coefficients)},
            "converged": self.converged,
            "iterations": self.iterations,
            "deviance": float(self.deviance),
            "n": int(len(self.scores)),
            "separation_warning": self.separation_warning,
            "n_clamped": self.n_clamped,
        }


def _as_matrix(X: DesignMatrix | np.ndarray, columns: Sequence[str] | None) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(X, DesignMatrix):
        return np.asarray(X.values, dtype=float), X.columns
    values = np.asarray(X, dtype=float)
    if values.ndim != 2:
        raise DimensionMismatchError("design matrix dimensions", 2, values.ndim)
    labels = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(values.shape[1]))
    return values, labels


def _deviance(z: np.ndarray, eta: np.ndarray) -> float:
    # -2 * Bernoulli log-likelihood on the linear-predictor scale
    return 2.0 * float(np.sum(np.logaddexp(0.0, eta) - z * eta))


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, int | None]:
    """Center and scale non-intercept columns.

    Columns are centered only when an all-ones intercept column is present, so
    the standardized model spans the same space as the original one.
    """
    p = X.shape[1]
    ones = [j for j in range(p) if np.all(X[:, j] == 1.0)]
    intercept = ones[0] if ones else None
    center = np.zeros(p)
    scale = np.ones(p)
    for j in range(p):
        if j == intercept:
            continue
        col = X[:, j]
        if intercept is not None:
            center[j] = col.mean()
        spread = np.sqrt(np.mean((col - center[j]) ** 2))
        if spread > 0:
            scale[j] = spread
    return (X - center) / scale, center, scale, intercept


def _back_transform(b: np.ndarray, center: np.ndarray, scale: np.ndarray, intercept: int | None) -> np.ndarray:
    beta = b / scale
    if intercept is not None:
        beta[intercept] = b[intercept] - np.sum(beta * center)
    return beta


def diagnose_rank(X: np.ndarray, columns: Sequence[str]) -> list[str]:
    """Return the labels of columns that are linearly dependent on earlier-pivoted ones.

    Uses a column-pivoted QR decomposition; an empty list means full column rank.
    """
    n, p = X.shape
    if p == 0:
        return []
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return [columns[j] for j in piv]
    tol = diag[0] * max(n, p) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    return [columns[j] for j in piv[rank:]]


def _validate_response(z: np.ndarray, n: int) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] != n:
        raise DimensionMismatchError("response length", n, z.shape[0])
    if not np.all((z == 0.0) | (z == 1.0)):
        raise WeightDomainError("response must contain only 0/1 values")
    if n == 0:
        raise DegenerateResponseError(0, 0)
    if np.all(z == z[0]):
        raise DegenerateResponseError(int(z[0]), n)
    return z


def fit_logistic(
    X: DesignMatrix | np.ndarray,
    z: np.ndarray | Sequence[int],
    columns: Sequence[str] | None = None,
    *,
    max_iter: int = MAX_ITER,
    tol: float = DEVIANCE_TOL,
) -> PropensityFit:
    """Fit a logistic regression of ``z`` on ``X`` by maximum likelihood.

    Newton/IRLS iterations with step-halving whenever the deviance would rise.
    Stops once the deviance changes by less than ``tol`` and the score equations
    are solved, or after ``max_iter`` iterations. Quasi-separated data are fitted
    anyway and flagged through ``separation_warning``.

    Args:
        X: Design matrix (n x p), intercept column included
        z: Binary response of length n
        columns: Column labels when ``X`` is a bare array
        max_iter: Iteration cap
        tol: Deviance-change stopping threshold

    Returns:
        PropensityFit with clamped scores

    Raises:
        DegenerateResponseError: All-0 or all-1 response
        RankDeficiencyError: p > n or collinear columns, naming them
        NonConvergenceError: Iteration cap reached without separation; carries the last iterate
    """
    values, labels = _as_matrix(X, columns)
    n, p = values.shape
    z = _validate_response(z, n)
    if p > n:
        raise RankDeficiencyError(
            list(labels),
            f"Model has {p} columns but only {n} patients; simplify the model specification",
        )

    Xs, center, scale, intercept = _standardize(values)
    collinear = diagnose_rank(Xs, labels)
    if collinear:
        raise RankDeficiencyError(collinear)

    b = np.zeros(p)
    eta = Xs @ b
    dev = _deviance(z, eta)
    trace = [dev]
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), _HESSIAN_WEIGHT_FLOOR)
        grad = Xs.T @ (z - mu)
        hess = (Xs * w[:, None]).T @ Xs
        try:
            step = scipy.linalg.solve(hess, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            if np.any((mu < CLAMP_EPSILON) | (mu > 1.0 - CLAMP_EPSILON)):
                logger.debug(f"IRLS stopped at iteration {iterations}: singular weighted normal equations")
                break
            raise RankDeficiencyError(diagnose_rank(Xs * np.sqrt(w)[:, None], labels) or list(labels))

        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = b + t * step
            eta_candidate = Xs @ candidate
            dev_candidate = _deviance(z, eta_candidate)
            if dev_candidate <= dev:
                break
            t *= 0.5
        else:
            # No descent along the Newton direction: numerically at the optimum.
            converged = True
            break

        change = dev - dev_candidate
        b, eta, dev = candidate, eta_candidate, dev_candidate
        trace.append(dev)
        logger.debug(f"IRLS iteration {iterations}: deviance={dev:.10g} step={t:g}")

        if abs(change) < tol:
            mu = expit(eta)
            if np.max(np.abs(Xs.T @ (z - mu))) < GRADIENT_TOL * n or t < 1.0:
                converged = True
                break

    beta = _back_transform(b, center, scale, intercept)
    raw = expit(values @ beta)
    separation = bool(np.any((raw < CLAMP_EPSILON) | (raw > 1.0 - CLAMP_EPSILON)))
    scores = np.clip(raw, CLAMP_EPSILON, 1.0 - CLAMP_EPSILON)
    n_clamped = int(np.sum(scores != raw))

    fit = PropensityFit(
        coefficients=beta,
        scores=scores,
        converged=converged,
        iterations=iterations,
        deviance=dev,
        separation_warning=separation,
        columns=labels,
        n_clamped=n_clamped,
        deviance_trace=tuple(trace),
    )
    if separation:
        logger.warning(
            f"Possible separation: {n_clamped} of {n} fitted scores within {CLAMP_EPSILON:g} "
            f"of 0 or 1 were clamped (converged={converged}, iterations={iterations})"
        )
    elif not converged:
        raise NonConvergenceError(fit, max_iter)
    return fit


def predict_scores(fit: PropensityFit, X: DesignMatrix | np.ndarray) -> np.ndarray:
    """Clamped inverse-logit of ``X @ fit.coefficients``.

    Raises:
        DimensionMismatchError: If X has the wrong number of columns
    """
    values, _ = _as_matrix(X, None)
    if values.shape[1] != len(fit.coefficients):
        raise DimensionMismatchError("design matrix columns", len(fit.coefficients), values.shape[1])
    return np.clip(expit(values @ fit.coefficients), CLAMP_EPSILON, 1.0 - CLAMP_EPSILON)


def intercept_only_fit(z: np.ndarray) -> PropensityFit:
    """Fit the intercept-only model; the MLE is logit of the exposed share."""
    z = np.asarray(z, dtype=float)
    return fit_logistic(np.ones((z.shape[0], 1)), z, columns=(INTERCEPT_LABEL,))
