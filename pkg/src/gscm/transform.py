"""Survey proportions to the modelling scale.

Proportions ``pi`` with standard errors ``sigma`` are moved to the log-odds
scale with a delta-method standard error, then each feature is centred and
scaled by its empirical mean and standard deviation (``ddof=1``)::

    theta = log(pi / (1 - pi))        S_tilde = sigma / (pi (1 - pi))
    Y = (theta - theta_bar) / s       S = S_tilde / s
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFeatureError, DimensionMismatchError, NonPositiveSEError, ProportionOutOfRangeError
from .model import FeaturePanel

__all__ = ["RawSurveyPanel", "TransformStats", "transform_inputs", "inverse_transform"]


@dataclass
class RawSurveyPanel:
    pi: np.ndarray
    sigma: np.ndarray
    area_ids: list[str] | None = None
    P: np.ndarray | None = None
    group_labels: list[str] | None = None
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.pi = np.atleast_2d(np.asarray(self.pi, dtype=float))
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if self.pi.shape != self.sigma.shape:
            raise DimensionMismatchError(f"pi {self.pi.shape} and sigma {self.sigma.shape} differ")
        if not np.all((self.pi > 0) & (self.pi < 1)):
            raise ProportionOutOfRangeError("proportions must lie strictly inside (0, 1)")
        if not np.all(self.sigma > 0):
            raise NonPositiveSEError("standard errors must be strictly positive")


@dataclass
class TransformStats:
    """Per-feature centring and scaling constants on the log-odds scale."""

    mean: np.ndarray
    sd: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}


def transform_inputs(raw: RawSurveyPanel) -> tuple[FeaturePanel, TransformStats]:
    """Log-odds transform, then standardise each feature column.

    >>> panel, _ = transform_inputs(RawSurveyPanel([[0.5], [0.2]], [[0.1], [0.05]]))
    >>> panel.Y.ravel().round(6).tolist()
    [0.707107, -0.707107]
    """
    pi, sigma = raw.pi, raw.sigma
    theta = np.log(pi) - np.log1p(-pi)
    s_tilde = sigma / (pi * (1.0 - pi))
    mean = theta.mean(axis=0)
    sd = theta.std(axis=0, ddof=1) if theta.shape[0] > 1 else np.zeros(theta.shape[1])
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        raise DegenerateFeatureError(f"features with zero spread on the log-odds scale: {bad.tolist()}")
    Y = (theta - mean) / sd
    S = s_tilde / sd
    panel = FeaturePanel(Y=Y, S=S, P=raw.P, area_ids=raw.area_ids, feature_names=raw.feature_names,
                         group_labels=raw.group_labels)
    return panel, TransformStats(mean=mean, sd=sd)


def inverse_transform(Y, stats: TransformStats) -> np.ndarray:
    """Map modelling-scale values back to proportions."""
    theta = np.asarray(Y, dtype=float) * stats.sd + stats.mean
    return 1.0 / (1.0 + np.exp(-theta))
