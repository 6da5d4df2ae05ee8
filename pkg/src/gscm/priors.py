"""Log-densities and gradients of the IID, ICAR and LCAR priors.

The LCAR (Leroux) prior on a length-N vector ``x`` is

    x ~ MVN(0, sigma^2 (I - rho C)^{-1}),   C = I - D + W,

evaluated with one sparse product ``(I - rho C) x`` and the precomputed
eigenvalues of ``C`` for the log-determinant. ``rho`` is restricted to
``[0, RHO_MAX]``; since the largest eigenvalue of ``C`` is exactly one,
``1 - rho * lambda_i`` stays strictly positive on that range.

The ICAR prior is improper. It is evaluated in pairwise-difference form with
a soft sum-to-zero penalty ``sum(x) ~ N(0, soft_zero_scale)``, the usual
default being ``0.001 * N``.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .errors import DimensionMismatchError, NonPositiveScaleError, RhoOutOfRangeError
from .graph import PrecisionPattern

__all__ = [
    "PriorKind",
    "RHO_MAX",
    "LOG_2PI",
    "default_soft_zero_scale",
    "lcar_lpdf",
    "lcar_grad",
    "icar_lpdf",
    "icar_grad",
    "iid_lpdf",
    "iid_grad",
]

RHO_MAX = 0.99
LOG_2PI = math.log(2.0 * math.pi)


class PriorKind(str, enum.Enum):
    IID = "IID"
    ICAR = "ICAR"
    LCAR = "LCAR"

    @classmethod
    def parse(cls, value) -> "PriorKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown prior kind {value!r}; expected IID, ICAR or LCAR") from None


def default_soft_zero_scale(n_areas: int) -> float:
    return 0.001 * n_areas


def _check(x, pattern: PrecisionPattern | None = None, rho=None, sigma=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatchError(f"expected a vector, got shape {x.shape}")
    if pattern is not None and x.shape[0] != pattern.n_areas:
        raise DimensionMismatchError(f"x has length {x.shape[0]}, pattern has {pattern.n_areas} areas")
    if rho is not None and not (0.0 <= rho <= RHO_MAX):
        raise RhoOutOfRangeError(f"rho={rho} outside [0, {RHO_MAX}]")
    if sigma is not None and not sigma > 0:
        raise NonPositiveScaleError(f"sigma must be positive, got {sigma}")
    return x


def lcar_lpdf(x, rho: float, sigma: float, pattern: PrecisionPattern) -> float:
    """LCAR log-density of ``x`` with autocorrelation ``rho`` and scale ``sigma``.

    >>> from gscm.graph import lattice_graph, prep_precision
    >>> p = prep_precision(lattice_graph(1, 3))
    >>> round(lcar_lpdf([0.0, 0.0, 0.0], 0.5, 1.0, p), 5)
    -2.75682
    """
    x = _check(x, pattern, rho, sigma)
    N = x.shape[0]
    prec = 1.0 / (sigma * sigma)
    log_det = np.sum(np.log1p(-rho * pattern.eigenvalues))
    quad = x @ pattern.matvec(x, rho)
    return float(-0.5 * (N * LOG_2PI - (N * math.log(prec) + log_det) + prec * quad))


def lcar_grad(x, rho: float, sigma: float, pattern: PrecisionPattern):
    """Partial derivatives of :func:`lcar_lpdf`.

    Returns
    -------
    grad_x : ndarray
    grad_rho : float
    grad_sigma : float
    """
    x = _check(x, pattern, rho, sigma)
    N = x.shape[0]
    prec = 1.0 / (sigma * sigma)
    Ax = pattern.matvec(x, rho)
    lam = pattern.eigenvalues
    grad_x = -prec * Ax
    grad_rho = -0.5 * np.sum(lam / (1.0 - rho * lam)) + 0.5 * prec * (x @ pattern.c_matvec(x))
    grad_sigma = -N / sigma + (x @ Ax) / sigma**3
    return grad_x, float(grad_rho), float(grad_sigma)


def _pairwise_diff(x: np.ndarray, pattern: PrecisionPattern) -> np.ndarray:
    return x[pattern.edges[:, 0]] - x[pattern.edges[:, 1]]


def icar_lpdf(x, pattern: PrecisionPattern, soft_zero_scale: float | None = None) -> float:
    """Unnormalised ICAR log-density plus the soft sum-to-zero penalty."""
    x = _check(x, pattern)
    if soft_zero_scale is None:
        soft_zero_scale = default_soft_zero_scale(x.shape[0])
    if not soft_zero_scale > 0:
        raise NonPositiveScaleError(f"soft_zero_scale must be positive, got {soft_zero_scale}")
    d = _pairwise_diff(x, pattern)
    s = x.sum() / soft_zero_scale
    return float(-0.5 * d @ d - 0.5 * (LOG_2PI + s * s) - math.log(soft_zero_scale))


def icar_grad(x, pattern: PrecisionPattern, soft_zero_scale: float | None = None) -> np.ndarray:
    x = _check(x, pattern)
    if soft_zero_scale is None:
        soft_zero_scale = default_soft_zero_scale(x.shape[0])
    d = _pairwise_diff(x, pattern)
    g = np.zeros_like(x)
    np.add.at(g, pattern.edges[:, 0], -d)
    np.add.at(g, pattern.edges[:, 1], d)
    return g - x.sum() / soft_zero_scale**2


def iid_lpdf(x, sigma: float = 1.0) -> float:
    x = _check(x, sigma=sigma)
    N = x.shape[0]
    return float(-0.5 * N * LOG_2PI - N * math.log(sigma) - 0.5 * (x @ x) / sigma**2)


def iid_grad(x, sigma: float = 1.0) -> np.ndarray:
    x = _check(x, sigma=sigma)
    return -x / sigma**2
