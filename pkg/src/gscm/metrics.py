"""Model-comparison metrics from posterior draws: WAIC, DIC and MAB.

``pointwise_loglik`` arrays are ``(draws, observations)``. Smaller values of
all three metrics indicate a better fit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatchError, TooFewDrawsError

__all__ = ["FitReport", "waic", "dic", "mab", "lppd"]

MIN_DRAWS = 100


def _check_ll(pointwise_loglik, min_draws: int) -> np.ndarray:
    ll = np.asarray(pointwise_loglik, dtype=float)
    if ll.ndim == 1:
        ll = ll[:, None]
    ll = ll.reshape(ll.shape[0], -1)
    if ll.shape[0] < min_draws:
        raise TooFewDrawsError(f"need at least {min_draws} draws, got {ll.shape[0]}")
    return ll


def lppd(pointwise_loglik, min_draws: int = 1) -> np.ndarray:
    """Log pointwise predictive density per observation (log-mean-exp)."""
    ll = _check_ll(pointwise_loglik, min_draws)
    return logsumexp(ll, axis=0) - np.log(ll.shape[0])


def waic(pointwise_loglik, min_draws: int = MIN_DRAWS):
    """Widely applicable information criterion on the deviance scale.

    The penalty uses the sample variance (``ddof=1``) of each observation's
    log-likelihood across draws.

    Returns
    -------
    waic : float
    p_waic : float
    pointwise : ndarray
        Per-observation contributions, summing to ``waic``.
    """
    ll = _check_ll(pointwise_loglik, min_draws)
    lp = lppd(ll)
    p = ll.var(axis=0, ddof=1) if ll.shape[0] > 1 else np.zeros(ll.shape[1])
    pointwise = -2.0 * (lp - p)
    return float(pointwise.sum()), float(p.sum()), pointwise


def dic(pointwise_loglik, deviance_at_mean: float, min_draws: int = MIN_DRAWS) -> float:
    """``2 * mean(deviance) - deviance_at_mean`` with ``deviance = -2 sum(ll)``."""
    ll = _check_ll(pointwise_loglik, min_draws)
    deviance = -2.0 * ll.sum(axis=1)
    return float(2.0 * deviance.mean() - deviance_at_mean)


def mab(Y, mu_draws) -> float:
    """Mean absolute difference between ``Y`` and the posterior median of ``mu``."""
    Y = np.asarray(Y, dtype=float)
    mu = np.asarray(mu_draws, dtype=float)
    if mu.shape[1:] != Y.shape:
        raise DimensionMismatchError(f"mu draws have shape {mu.shape[1:]}, Y has {Y.shape}")
    return float(np.mean(np.abs(Y - np.median(mu, axis=0))))


@dataclass
class FitReport:
    dic: float
    waic: float
    p_waic: float
    mab: float
    pointwise_waic: list[float] = field(default_factory=list)

    @classmethod
    def from_draws(cls, pointwise_loglik, deviance_at_mean, Y, mu_draws, min_draws: int = MIN_DRAWS):
        w, p, pw = waic(pointwise_loglik, min_draws)
        return cls(dic=dic(pointwise_loglik, deviance_at_mean, min_draws), waic=w, p_waic=p,
                   mab=mab(Y, mu_draws), pointwise_waic=pw.tolist())

    def to_dict(self) -> dict:
        return asdict(self)
