"""Generalised shared component model.

Multivariate small-area latent factor model with spatial (IID, ICAR, LCAR)
priors on shared factors and feature-specific residuals, heteroscedastic
measurement error, a NUTS sampler, fit metrics and composite-index summaries.
"""

from .errors import ConfigError, DataValidationError, GSCMError
from .explore import explore, moran_i, moran_test, pca
from .fitting import FitResult, fit_gscm
from .graph import AdjacencyGraph, PrecisionPattern, build_graph, lattice_graph, prep_precision
from .indices import (
    build_indices,
    compose_hbi,
    compose_pahbi,
    exceedance_and_toprank,
    group_scoped_percentiles,
    hbi_weights,
    hpdi,
    summarise_index,
    to_percentiles,
    to_ranks,
)
from .metrics import FitReport, dic, mab, waic
from .model import (
    GSCM,
    FeaturePanel,
    ModelConfig,
    ModelParams,
    implied_covariance,
    log_posterior,
    log_posterior_grad,
    reconstruct_mu,
    simulate,
)
from .priors import PriorKind, icar_lpdf, lcar_lpdf
from .sampler import PosteriorDraws, SamplerConfig, run_nuts
from .transform import RawSurveyPanel, inverse_transform, transform_inputs

__version__ = "0.1.0"
