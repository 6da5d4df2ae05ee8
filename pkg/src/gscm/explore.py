"""Exploratory summaries of a feature panel.

Pairwise Pearson correlations, PCA of the correlation matrix (used to pick a
feature ordering before fitting), and a univariate Moran's I per feature with
binary, unstandardised weights and a permutation p-value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstantFeatureError, DataValidationError
from .graph import AdjacencyGraph
from .model import FeaturePanel

__all__ = ["MoranResult", "moran_i", "moran_test", "pca", "explore", "pca_feature_order"]


@dataclass
class MoranResult:
    I: float
    expected: float
    p_value: float
    n_permutations: int


def moran_i(x, W) -> float:
    """Global Moran's I with weight matrix ``W`` (dense, zero diagonal)."""
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    d = x - x.mean()
    denom = d @ d
    if denom == 0:
        raise ConstantFeatureError("Moran's I is undefined for a constant feature")
    return float(x.shape[0] / W.sum() * (d @ W @ d) / denom)


def moran_test(x, W, n_permutations: int = 999, seed=None) -> MoranResult:
    """Moran's I with a one-sided pseudo p-value from random permutations.

    The p-value counts permutations at least as extreme as the observed value
    on the side the observed value falls, as ``(count + 1) / (perms + 1)``.
    """
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    obs = moran_i(x, W)
    n = x.shape[0]
    if n_permutations == 0:
        return MoranResult(I=obs, expected=-1.0 / (n - 1), p_value=float("nan"), n_permutations=0)
    rng = np.random.default_rng(seed)
    d = x - x.mean()
    scale = n / W.sum() / (d @ d)
    perms = np.array([rng.permutation(d) for _ in range(n_permutations)])
    sims = scale * np.einsum("pi,ij,pj->p", perms, W, perms)
    larger = int(np.sum(sims >= obs))
    if n_permutations - larger < larger:
        larger = n_permutations - larger
    return MoranResult(I=obs, expected=-1.0 / (n - 1), p_value=(larger + 1.0) / (n_permutations + 1.0),
                       n_permutations=n_permutations)


def pca(corr) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a correlation matrix.

    Returns loadings (columns = components, descending variance) and the
    percentage of variance per component. Each component is signed so its
    largest-magnitude loading is positive.
    """
    w, V = np.linalg.eigh(np.asarray(corr, dtype=float))
    order = np.argsort(w)[::-1]
    w, V = np.clip(w[order], 0.0, None), V[:, order]
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    V = V * np.where(flip == 0, 1.0, flip)
    return V, 100.0 * w / w.sum()


def explore(panel: FeaturePanel, graph: AdjacencyGraph, n_permutations: int = 999, seed=0) -> dict:
    """Correlation matrix, PCA and per-feature Moran's I as a JSON-ready dict."""
    if panel.n_areas < 3:
        raise DataValidationError("exploration needs at least 3 areas")
    if graph.n_areas != panel.n_areas:
        raise DataValidationError("graph and panel disagree on the number of areas")
    Y = panel.Y
    if np.any(np.ptp(Y, axis=0) == 0):
        raise ConstantFeatureError("a feature is constant across areas")
    corr = np.corrcoef(Y, rowvar=False)
    loadings, share = pca(corr)
    W = graph.adjacency_matrix()
    seeds = np.random.SeedSequence(seed).spawn(panel.n_features)
    moran = {}
    for k, name in enumerate(panel.feature_names):
        res = moran_test(Y[:, k], W, n_permutations, seeds[k])
        moran[name] = {"I": res.I, "expected": res.expected, "p_value": res.p_value,
                       "n_permutations": res.n_permutations}
    return {
        "features": list(panel.feature_names),
        "correlation": corr.tolist(),
        "pca_loadings": loadings.tolist(),
        "pca_variance_percent": share.tolist(),
        "moran": moran,
    }


def pca_feature_order(report: dict) -> list[str]:
    """Features sorted by absolute first-component loading, largest first."""
    pc1 = np.abs(np.asarray(report["pca_loadings"])[:, 0])
    order = np.argsort(-pc1, kind="stable")
    return [report["features"][i] for i in order]
