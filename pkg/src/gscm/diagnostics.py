"""Convergence diagnostics: rank-normalised split R-hat and effective sample size.

Inputs are arrays shaped ``(chains, draws)`` for a scalar quantity or
``(chains, draws, ...)`` for a block of scalars; the leading two axes are
always chains and draws.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import stats

from .errors import InsufficientDrawsError

__all__ = ["rhat", "ess", "split_chains", "autocorrelation", "mcse_mean"]


def _as_chains(draws) -> np.ndarray:
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim < 2:
        raise InsufficientDrawsError("draws must be shaped (chains, draws, ...)")
    return x


def split_chains(x: np.ndarray) -> np.ndarray:
    """Halve every chain; the middle draw of an odd-length chain is dropped."""
    n = x.shape[1]
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half:]], axis=0)


def _classic_rhat(x: np.ndarray) -> float:
    m, n = x.shape
    chain_means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * chain_means.var(ddof=1)
    if not W > 0:
        return np.nan
    var_hat = (n - 1) / n * W + B / n
    return float(np.sqrt(var_hat / W))


def _rank_normalise(x: np.ndarray) -> np.ndarray:
    size = x.size
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((ranks - 0.375) / (size + 0.25))


def _rhat_scalar(x: np.ndarray) -> float:
    if np.ptp(x) == 0 or not np.all(np.isfinite(x)):
        return np.nan
    xs = split_chains(x)
    bulk = _classic_rhat(_rank_normalise(xs))
    folded = np.abs(xs - np.median(xs))
    tail = _classic_rhat(_rank_normalise(folded)) if np.ptp(folded) > 0 else np.nan
    return float(np.nanmax([bulk, tail]))


def rhat(draws) -> np.ndarray | float:
    """Rank-normalised split R-hat (maximum of bulk and folded-tail versions).

    Constant quantities give NaN with a warning.

    >>> rng = np.random.default_rng(1)
    >>> bool(rhat(rng.standard_normal((4, 1000))) < 1.01)
    True
    """
    x = _as_chains(draws)
    if x.shape[0] < 2 or x.shape[1] < 4:
        raise InsufficientDrawsError(f"R-hat needs >= 2 chains of >= 4 draws, got {x.shape[:2]}")
    flat = x.reshape(x.shape[0], x.shape[1], -1)
    out = np.array([_rhat_scalar(flat[:, :, j]) for j in range(flat.shape[2])])
    if np.isnan(out).any():
        warnings.warn("R-hat undefined for constant or non-finite draws; reported as NaN", RuntimeWarning,
                      stacklevel=2)
    return float(out[0]) if x.ndim == 2 else out.reshape(x.shape[2:])


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Autocovariance of each row of ``x`` (biased, lag 0 = variance) via FFT."""
    m, n = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=nfft, axis=1)
    acov = np.fft.irfft(f * np.conjugate(f), n=nfft, axis=1)[:, :n]
    return acov / n


def _ess_scalar(x: np.ndarray) -> float:
    m, n = x.shape
    if np.ptp(x) == 0 or not np.all(np.isfinite(x)):
        return np.nan
    acov = autocorrelation(x)
    chain_mean = x.mean(axis=1)
    mean_var = np.mean(acov[:, 0]) * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    rho_hat = np.zeros(n + 2)
    rho_even = 1.0
    rho_hat[0] = rho_even
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho_hat[1] = rho_odd
    s = 1
    while s < n - 4 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - acov[:, s + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, s + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho_hat[s + 1] = rho_even
            rho_hat[s + 2] = rho_odd
        s += 2
    max_s = s
    if rho_even > 0:
        rho_hat[max_s + 1] = rho_even
    # initial monotone sequence on the paired sums
    for t in range(1, max_s - 2, 2):
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t]:
            rho_hat[t + 1] = rho_hat[t + 2] = (rho_hat[t - 1] + rho_hat[t]) / 2.0
    tau_hat = -1.0 + 2.0 * np.sum(rho_hat[:max_s]) + rho_hat[max_s + 1]
    return float(min(m * n / tau_hat, m * n))


def ess(draws, split: bool = True) -> np.ndarray | float:
    """Effective sample size from Geyer's initial-monotone pairwise sums.

    Computed on split chains by default and capped at the total draw count.
    Constant quantities give NaN with a warning.
    """
    x = _as_chains(draws)
    if x.shape[1] < 4:
        raise InsufficientDrawsError(f"ESS needs >= 4 draws per chain, got {x.shape[1]}")
    if split:
        x = split_chains(x)
    flat = x.reshape(x.shape[0], x.shape[1], -1)
    out = np.array([_ess_scalar(flat[:, :, j]) for j in range(flat.shape[2])])
    if np.isnan(out).any():
        warnings.warn("ESS undefined for constant or non-finite draws; reported as NaN", RuntimeWarning,
                      stacklevel=2)
    return float(out[0]) if x.ndim == 2 else out.reshape(x.shape[2:])


def mcse_mean(draws) -> np.ndarray | float:
    """Monte Carlo standard error of the posterior mean."""
    x = _as_chains(draws)
    sd = x.reshape(-1, *x.shape[2:]).std(axis=0, ddof=1)
    return sd / np.sqrt(ess(x))
