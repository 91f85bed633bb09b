"""Generalized Pareto tail fitting for peaks over a threshold."""

from collections.abc import Sequence
from logging import getLogger

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize, stats

from citemate.core.config import settings

logger = getLogger(__name__)
logger.setLevel(settings.LOG_LEVEL)

# Below this |xi| the exponential limit is used.
XI_EPSILON = 1e-9
# MLE refinements with a lower shape are rejected as irregular.
MLE_MIN_XI = -0.5


class GpdFitError(ValueError):
    """Raised when excesses cannot support a GPD fit."""


class GpdParams(BaseModel):
    """Fitted shape/scale of the excesses over threshold ``u``."""

    model_config = ConfigDict(frozen=True)

    xi: float = Field(..., description="Shape")
    sigma: float = Field(..., gt=0, description="Scale")
    u: float = Field(default=0.0, description="Exceedance threshold")
    n_tail: int = Field(..., ge=2, description="Number of excesses used in the fit")
    method: str = Field(default="pwm", description="'pwm' or 'pwm+mle'")


def _pwm(x: np.ndarray) -> tuple[float, float]:
    """Probability-weighted moment estimates (xi, sigma) of sorted excesses."""
    n = x.size
    a0 = float(x.mean())
    weights = (n - np.arange(1, n + 1)) / (n - 1)
    a1 = float(np.mean(weights * x))
    denom = a0 - 2.0 * a1
    if denom <= 0:
        raise GpdFitError("degenerate excesses")
    k = a0 / denom - 2.0
    sigma = 2.0 * a0 * a1 / denom
    if sigma <= 0:
        raise GpdFitError(f"non-positive PWM scale {sigma:g}")
    return -k, sigma


def _nll(params: np.ndarray, x: np.ndarray) -> float:
    xi, log_sigma = params
    logpdf = stats.genpareto.logpdf(x, c=xi, scale=np.exp(log_sigma))
    if not np.all(np.isfinite(logpdf)):
        return np.inf
    return float(-logpdf.sum())


def gpd_fit(excesses: Sequence[float] | np.ndarray, u: float = 0.0, refine: bool = True) -> GpdParams:
    """Fit a generalized Pareto distribution to excesses over ``u``.

    Probability-weighted moments give closed-form starting estimates; a
    Nelder-Mead maximum-likelihood refinement replaces them only when it
    converges, improves the likelihood and keeps ``xi > -0.5``.

    Args:
        excesses: Positive values ``s - u`` of the exceedances.
        u: Threshold the excesses were taken over, recorded in the result.
        refine: Whether to attempt the likelihood refinement.

    Returns:
        GpdParams: The fitted parameters.

    Raises:
        GpdFitError: On fewer than two excesses, negative or non-finite
            values, or identical excesses.
    """
    x = np.sort(np.asarray(excesses, dtype=float))
    if x.size < 2:
        raise GpdFitError(f"need at least 2 excesses, got {x.size}")
    if not np.all(np.isfinite(x)) or x[0] < 0:
        raise GpdFitError("excesses must be finite and non-negative")
    if np.ptp(x) == 0:
        raise GpdFitError("degenerate excesses")

    xi, sigma = _pwm(x)
    method = "pwm"
    if refine:
        start = np.array([xi, np.log(sigma)])
        start_nll = _nll(start, x)
        result = optimize.minimize(_nll, start, args=(x,), method="Nelder-Mead")
        if (
            result.success
            and np.isfinite(result.fun)
            and result.fun < start_nll
            and result.x[0] > MLE_MIN_XI
        ):
            xi, sigma = float(result.x[0]), float(np.exp(result.x[1]))
            method = "pwm+mle"
        else:
            logger.debug("MLE refinement rejected (%s); keeping PWM", result.message)
    return GpdParams(xi=xi, sigma=sigma, u=u, n_tail=int(x.size), method=method)


def gpd_survival(x: float, params: GpdParams) -> float:
    """Probability that an excess is at least ``x`` under ``params``.

    Beyond the upper end point of a bounded tail (``xi < 0``) the survival is 0.
    """
    if x <= 0:
        return 1.0
    if abs(params.xi) < XI_EPSILON:
        return float(np.exp(-x / params.sigma))
    return float(stats.genpareto.sf(x, c=params.xi, scale=params.sigma))
