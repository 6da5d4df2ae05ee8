"""From survey proportions to the modelling scale, then exploration.

Raw prevalence estimates with standard errors are moved to standardised
log-odds, and the exploratory report (correlations, PCA, Moran's I) suggests
a feature order for fitting.
"""

import numpy as np

from gscm.explore import explore, pca_feature_order
from gscm.graph import lattice_graph
from gscm.model import ModelConfig, ModelParams, simulate
from gscm.transform import RawSurveyPanel, TransformStats, inverse_transform, transform_inputs

graph = lattice_graph(6, 6)
names = ["smoking", "inactivity", "poor_diet", "alcohol"]
truth = ModelParams(np.array([[0.8, 0.0], [0.3, 0.6], [-0.4, 0.5], [0.2, 0.4]]), None, None,
                    tau=np.full(4, 0.3), rho=np.full(2, 0.9), kappa=np.full(4, 0.5))
latent = simulate(ModelConfig(n_factors=2), truth, graph, seed=3)

# pretend the latent values are log-odds around 25% prevalence
raw_scale = TransformStats(mean=np.full(4, np.log(1 / 3)), sd=np.full(4, 0.4))
pi = inverse_transform(latent.Y, raw_scale)
sigma = np.random.default_rng(4).uniform(0.01, 0.03, size=pi.shape)
raw = RawSurveyPanel(pi, sigma, feature_names=names)

panel, stats = transform_inputs(raw)
print("prevalence range:", pi.min().round(3), "-", pi.max().round(3))
print("column means", panel.Y.mean(axis=0).round(12), "column SDs", panel.Y.std(axis=0, ddof=1).round(12))
print("model-scale SEs (first area):", panel.S[0].round(3))
print("round trip error:", np.abs(inverse_transform(panel.Y, stats) - pi).max())

report = explore(panel, graph, n_permutations=499, seed=5)
print("variance explained by PCs (%):", np.round(report["pca_variance_percent"], 1))
for name, m in report["moran"].items():
    print(f"  {name:10s} Moran's I {m['I']:+.3f}  p {m['p_value']:.3f}")
print("suggested feature order:", pca_feature_order(report))
