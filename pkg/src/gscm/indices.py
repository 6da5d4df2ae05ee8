"""Composite indices and their posterior summaries.

Four indices are built from draws of the shared factors ``z``:

* ``factor1``, ``factor2``: the columns of ``z``;
* ``hbi``: ``w1 * z1 + w2 * z2`` with weights from squared loadings;
* ``pahbi``: ``P_n * hbi`` with area populations ``P``.

Each index is summarised per area by its posterior median and 95% HPDI,
along with posterior ranks (1 = highest value), percentiles (100 = highest)
and exceedance / top-k probabilities. A sign flag per index sets the ranking
direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    DimensionMismatchError,
    NonPositivePopulationError,
    RequiresTwoFactorsError,
    TooFewDrawsError,
    UnlabelledAreaError,
)

__all__ = [
    "IndexDraws",
    "hbi_weights",
    "compose_hbi",
    "compose_pahbi",
    "to_ranks",
    "to_percentiles",
    "hpdi",
    "exceedance_and_toprank",
    "group_scoped_percentiles",
    "summarise_index",
    "build_indices",
    "PERCENTILE_THRESHOLDS",
    "TOP_K",
]

PERCENTILE_THRESHOLDS = (80, 95, 99)
TOP_K = (10, 20, 100)


@dataclass
class IndexDraws:
    name: str
    values: np.ndarray                      # (draws, N)
    weights: np.ndarray | None = None       # (draws, 2) or (2,)
    meta: dict = field(default_factory=dict)


def hbi_weights(loading_draws, point: bool = False) -> np.ndarray:
    """Squared-loading weights for the two shared factors.

    ``w_l = sum_k lambda_kl^2 / sum_k sum_l lambda_kl^2``.

    Parameters
    ----------
    loading_draws : array, ``(K, 2)`` or ``(draws, K, 2)``
    point : bool
        Evaluate once at the element-wise posterior median of the loadings
        instead of per draw.

    >>> lam = [[0.77, 0], [-0.15, 0.54], [-0.47, 0.51], [-0.24, 0.40], [0.09, 0.64]]
    >>> np.round(hbi_weights(lam), 3).tolist()
    [0.446, 0.554]
    """
    lam = np.asarray(loading_draws, dtype=float)
    if lam.shape[-1] != 2:
        raise RequiresTwoFactorsError(f"HBI weights need exactly two factors, got {lam.shape[-1]}")
    if point and lam.ndim == 3:
        lam = np.median(lam, axis=0)
    sq = np.sum(lam**2, axis=-2)
    w = sq / np.sum(sq, axis=-1, keepdims=True)
    w[..., 1] = 1.0 - w[..., 0]
    return w


def compose_hbi(z_draws, weights) -> IndexDraws:
    """Weighted sum of the two factor columns, per draw and area.

    ``z_draws`` is ``(draws, N, 2)``; ``weights`` is ``(draws, 2)`` or ``(2,)``.
    """
    z = np.asarray(z_draws, dtype=float)
    w = np.asarray(weights, dtype=float)
    if z.ndim != 3 or z.shape[2] != 2:
        raise RequiresTwoFactorsError(f"z draws must be (draws, N, 2), got {z.shape}")
    if w.ndim == 1:
        w = np.broadcast_to(w, (z.shape[0], 2))
    if w.shape != (z.shape[0], 2):
        raise DimensionMismatchError(f"weights have shape {w.shape}, expected {(z.shape[0], 2)}")
    values = w[:, 0, None] * z[:, :, 0] + w[:, 1, None] * z[:, :, 1]
    return IndexDraws("hbi", values, np.asarray(weights, dtype=float))


def compose_pahbi(hbi_draws, P) -> IndexDraws:
    hbi = hbi_draws.values if isinstance(hbi_draws, IndexDraws) else np.asarray(hbi_draws, dtype=float)
    P = np.asarray(P, dtype=float)
    if P.shape != (hbi.shape[1],):
        raise DimensionMismatchError(f"P has shape {P.shape}, expected ({hbi.shape[1]},)")
    if np.any(~(P > 0)):
        raise NonPositivePopulationError("populations must be strictly positive")
    weights = hbi_draws.weights if isinstance(hbi_draws, IndexDraws) else None
    return IndexDraws("pahbi", hbi * P, weights)


def to_ranks(index_draws, sign: float = 1.0) -> np.ndarray:
    """Per-draw ranks, 1 for the highest ``sign * value``; ties by area index."""
    x = np.atleast_2d(np.asarray(getattr(index_draws, "values", index_draws), dtype=float)) * sign
    order = np.argsort(-x, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(x.shape[0])[:, None]
    ranks[rows, order] = np.arange(1, x.shape[1] + 1)
    return ranks


def _percentile_from_rank(ranks: np.ndarray, n: int) -> np.ndarray:
    # ceil(100 * (n + 1 - rank) / n) in exact integer arithmetic
    pct = -((-100 * (n + 1 - ranks)) // n)
    return np.clip(pct, 1, 100)


def to_percentiles(index_draws, sign: float = 1.0, ranks: np.ndarray | None = None) -> np.ndarray:
    """Per-draw percentiles in 1..100, 100 for the highest value."""
    if ranks is None:
        ranks = to_ranks(index_draws, sign)
    return _percentile_from_rank(ranks, ranks.shape[1])


def hpdi(draws, mass: float = 0.95, min_draws: int = 20):
    """Shortest interval containing ``ceil(mass * n)`` of the sorted draws.

    Works on the last axis, so a ``(draws, N)`` matrix should be passed
    transposed or via :func:`summarise_index`.
    """
    x = np.sort(np.asarray(draws, dtype=float), axis=-1)
    n = x.shape[-1]
    if n < min_draws:
        raise TooFewDrawsError(f"HPDI needs at least {min_draws} draws, got {n}")
    m = min(n, int(math.ceil(mass * n - 1e-9)))
    widths = x[..., m - 1:] - x[..., : n - m + 1]
    start = np.argmin(widths, axis=-1)
    low = np.take_along_axis(x, start[..., None], axis=-1)[..., 0]
    high = np.take_along_axis(x, (start + m - 1)[..., None], axis=-1)[..., 0]
    if low.ndim == 0:
        return float(low), float(high)
    return low, high


def exceedance_and_toprank(percentile_draws, rank_draws, thresholds=PERCENTILE_THRESHOLDS, top_k=TOP_K) -> dict:
    """Posterior probabilities as draw fractions, keyed ``p_gt{t}`` and ``p_top{k}``."""
    pct = np.asarray(percentile_draws)
    rk = np.asarray(rank_draws)
    if pct.shape != rk.shape:
        raise DimensionMismatchError("percentile and rank draws must align")
    out = {}
    for t in thresholds:
        out[f"p_gt{t}"] = np.mean(pct > t, axis=0)
    for k in top_k:
        out[f"p_top{k}"] = np.mean(rk <= k, axis=0)
    return out


def group_scoped_percentiles(index_draws, group_labels, sign: float = 1.0):
    """Ranks and percentiles computed within each group, per draw.

    Returns ``(ranks, percentiles)`` with the same shape as the input.
    """
    x = np.atleast_2d(np.asarray(getattr(index_draws, "values", index_draws), dtype=float))
    labels = list(group_labels)
    if len(labels) != x.shape[1]:
        raise DimensionMismatchError(f"{len(labels)} labels for {x.shape[1]} areas")
    if any(g is None or (isinstance(g, float) and math.isnan(g)) or str(g) == "" for g in labels):
        raise UnlabelledAreaError("every area needs a group label")
    labels_arr = np.array([str(g) for g in labels])
    ranks = np.empty(x.shape, dtype=int)
    pct = np.empty(x.shape, dtype=int)
    for g in dict.fromkeys(labels_arr):
        cols = np.flatnonzero(labels_arr == g)
        r = to_ranks(x[:, cols], sign)
        ranks[:, cols] = r
        pct[:, cols] = _percentile_from_rank(r, len(cols))
    return ranks, pct


def summarise_index(index: IndexDraws, area_ids, group_labels, sign: float = 1.0,
                    mass: float = 0.95) -> pd.DataFrame:
    """Per-area summary table for one index."""
    x = index.values
    ranks = to_ranks(x, sign)
    pct = to_percentiles(x, ranks=ranks)
    lo, hi = hpdi(x.T, mass)
    probs = exceedance_and_toprank(pct, ranks)
    g_ranks, g_pct = group_scoped_percentiles(x, group_labels, sign)
    g_probs = exceedance_and_toprank(g_pct, g_ranks, top_k=())
    cols = {
        "area_id": list(area_ids),
        "group": [str(g) for g in group_labels],
        "median": np.median(x, axis=0),
        "hpdi_low": lo,
        "hpdi_high": hi,
        "median_percentile": np.median(pct, axis=0),
        "median_rank": np.median(ranks, axis=0),
    }
    cols.update(probs)
    cols["group_median_percentile"] = np.median(g_pct, axis=0)
    cols["group_median_rank"] = np.median(g_ranks, axis=0)
    for t in PERCENTILE_THRESHOLDS:
        cols[f"group_p_gt{t}"] = g_probs[f"p_gt{t}"]
    return pd.DataFrame(cols)


def build_indices(z_draws, loading_draws, P, point_weights: bool = False) -> dict[str, IndexDraws]:
    """All available indices; HBI and PAHBI only when there are two factors."""
    z = np.asarray(z_draws, dtype=float)
    out = {f"factor{l + 1}": IndexDraws(f"factor{l + 1}", z[:, :, l]) for l in range(z.shape[2])}
    if z.shape[2] == 2:
        w = hbi_weights(loading_draws, point=point_weights)
        hbi = compose_hbi(z, w)
        out["hbi"] = hbi
        out["pahbi"] = compose_pahbi(hbi, P)
    return out
