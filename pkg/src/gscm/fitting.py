"""Fit a GSCM by NUTS and summarise the run.

:func:`fit_gscm` wires the model density into the sampler, extracts the
constrained parameters of every retained draw, evaluates DIC / WAIC / MAB and
tabulates R-hat and ESS for the monitored scalars.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .diagnostics import autocorrelation, ess, rhat
from .graph import PrecisionPattern, prep_precision
from .metrics import MIN_DRAWS, FitReport
from .model import GSCM, FeaturePanel, ModelConfig
from .sampler import PosteriorDraws, SamplerConfig, run_nuts

__all__ = ["FitResult", "fit_gscm", "monitored_scalars", "diagnostics_table", "autocorrelation_table"]

RHAT_THRESHOLD = 1.05


@dataclass
class FitResult:
    model: GSCM
    draws: PosteriorDraws
    report: FitReport | None
    diagnostics: pd.DataFrame
    deviance_at_mean: float

    @property
    def max_rhat(self) -> float:
        r = self.diagnostics["rhat"].to_numpy()
        return float(np.nanmax(r)) if np.isfinite(r).any() else float("nan")

    def converged(self, threshold: float = RHAT_THRESHOLD) -> bool:
        r = self.diagnostics["rhat"].to_numpy()
        return bool(np.all(r[np.isfinite(r)] <= threshold))


def _extractor(model: GSCM):
    layout = model.layout

    def extract(theta):
        p = layout.unpack(theta)
        out = {
            "loadings": p.loadings,
            "z": p.z,
            "tau": p.tau,
            "mu": model.mu(theta),
            "log_lik": model.pointwise_loglik(theta),
        }
        if layout.rho_idx.size:
            out["rho"] = p.rho[layout.rho_idx]
        if layout.kappa_idx.size:
            out["kappa"] = p.kappa[layout.kappa_idx]
        return out

    return extract


def monitored_scalars(draws: PosteriorDraws, model: GSCM) -> dict[str, np.ndarray]:
    """Named scalar series ``(chains, draws)`` used for convergence checks.

    Covers free loadings, ``tau``, ``rho``, ``kappa`` and every ``z`` score.
    """
    layout = model.layout
    out: dict[str, np.ndarray] = {}
    lam = draws.by_chain("loadings")
    for name, k, l in zip(layout.loading_names(), layout.load_rows, layout.load_cols):
        out[name] = lam[:, :, k, l]
    tau = draws.by_chain("tau")
    for k in range(layout.K):
        out[f"tau[{k + 1}]"] = tau[:, :, k]
    if "rho" in draws.params:
        rho = draws.by_chain("rho")
        for j, l in enumerate(layout.rho_idx):
            out[f"rho[{l + 1}]"] = rho[:, :, j]
    if "kappa" in draws.params:
        kappa = draws.by_chain("kappa")
        for j, k in enumerate(layout.kappa_idx):
            out[f"kappa[{k + 1}]"] = kappa[:, :, j]
    z = draws.by_chain("z")
    for n in range(layout.N):
        for l in range(layout.L):
            out[f"z[{n + 1},{l + 1}]"] = z[:, :, n, l]
    return out


def diagnostics_table(series: dict[str, np.ndarray]) -> pd.DataFrame:
    """R-hat, bulk ESS, posterior mean and SD per monitored scalar."""
    names = list(series)
    block = np.stack([series[n] for n in names], axis=-1)
    n_chains, n_draws = block.shape[:2]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = rhat(block) if n_chains >= 2 and n_draws >= 4 else np.full(len(names), np.nan)
        e = ess(block) if n_draws >= 4 else np.full(len(names), np.nan)
    flat = block.reshape(-1, len(names))
    return pd.DataFrame({"parameter": names, "mean": flat.mean(axis=0),
                         "sd": flat.std(axis=0, ddof=1) if flat.shape[0] > 1 else np.zeros(len(names)),
                         "rhat": np.atleast_1d(r), "ess": np.atleast_1d(e)})


def autocorrelation_table(series: dict[str, np.ndarray], max_lag: int = 50,
                          include=lambda name: not name.startswith("z[")) -> pd.DataFrame:
    """Per-chain autocorrelation series in long format for external plotting."""
    rows = []
    for name, x in series.items():
        if not include(name):
            continue
        acov = autocorrelation(np.asarray(x, dtype=float))
        with np.errstate(invalid="ignore", divide="ignore"):
            acf = acov / acov[:, :1]
        lags = min(max_lag, acf.shape[1] - 1)
        for c in range(acf.shape[0]):
            for lag in range(lags + 1):
                rows.append((name, c, lag, acf[c, lag]))
    return pd.DataFrame(rows, columns=["parameter", "chain", "lag", "acf"])


def fit_gscm(panel: FeaturePanel, config: ModelConfig, graph, sampler_config: SamplerConfig | None = None,
             init=None, min_draws: int = MIN_DRAWS) -> FitResult:
    """Sample the posterior and compute fit metrics and diagnostics.

    Parameters
    ----------
    panel : FeaturePanel
    config : ModelConfig
    graph : AdjacencyGraph or PrecisionPattern
    sampler_config : SamplerConfig, optional
    init : optional
        Passed through to :func:`run_nuts`.
    min_draws : int
        Fewer retained draws than this skip the fit metrics (``report`` is
        None) instead of raising.

    Notes
    -----
    The deviance at the posterior mean is evaluated at the mean of the
    unconstrained draws, mapped back to the constrained scale.
    """
    pattern = graph if isinstance(graph, PrecisionPattern) else prep_precision(graph)
    sampler_config = sampler_config or SamplerConfig()
    model = GSCM(panel, config, pattern)
    draws = run_nuts(model, init, sampler_config, extract=_extractor(model))
    theta_bar = draws.unconstrained.mean(axis=0)
    deviance_at_mean = float(-2.0 * model.pointwise_loglik(theta_bar).sum())
    report = None
    if draws.n_draws >= min_draws:
        report = FitReport.from_draws(draws.log_lik, deviance_at_mean, panel.Y, draws.params["mu"], min_draws)
    table = diagnostics_table(monitored_scalars(draws, model))
    return FitResult(model=model, draws=draws, report=report, diagnostics=table,
                     deviance_at_mean=deviance_at_mean)
