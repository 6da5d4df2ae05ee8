import itertools
import math
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from gscm.errors import ConfigError, DataValidationError, DimensionMismatchError, NonFiniteDensityError
from gscm.graph import lattice_graph, prep_precision
from gscm.model import (
    GSCM,
    FeaturePanel,
    ModelConfig,
    ModelParams,
    ParamLayout,
    implied_covariance,
    log_posterior,
    log_posterior_grad,
    prior_covariance,
    reconstruct_mu,
    simulate,
)
from oracles import car_c_matrix, dense_log_posterior, lattice_adjacency, scm_logpdf

KINDS = ["IID", "LCAR", "ICAR"]


def _panel(rng, N, K, me=True):
    S = rng.uniform(0.2, 0.6, size=(N, K)) if me else np.zeros((N, K))
    return FeaturePanel(Y=rng.normal(size=(N, K)), S=S)


def _random_params(rng, lay: ParamLayout) -> ModelParams:
    Lam = np.zeros((lay.K, lay.L))
    for k, l, d in zip(lay.load_rows, lay.load_cols, lay.load_is_diag):
        Lam[k, l] = rng.uniform(0.3, 1.5) if d else rng.normal()
    rho = np.zeros(lay.L)
    rho[lay.rho_idx] = rng.uniform(0.05, 0.95, size=lay.rho_idx.size)
    kappa = np.zeros(lay.K)
    kappa[lay.kappa_idx] = rng.uniform(0.05, 0.95, size=lay.kappa_idx.size)
    return ModelParams(loadings=Lam, z=rng.normal(size=(lay.N, lay.L)),
                       u=rng.normal(size=(lay.N, lay.K)) if lay.has_u else None,
                       tau=rng.uniform(0.2, 1.5, size=lay.K), rho=rho, kappa=kappa)


def _dense(model: GSCM, params: ModelParams, W) -> float:
    cfg = model.config
    return dense_log_posterior(
        model.data.Y, model.data.S, params.loadings, params.z, params.u, params.tau, params.rho, params.kappa, W,
        [k.value for k in model.layout.shared_kinds], [k.value for k in model.layout.residual_kinds],
        measurement_error=cfg.measurement_error, loading_scale=cfg.loading_scale, soft_zero_scale=cfg.soft_zero_scale,
    )


@pytest.mark.parametrize("me", [True, False])
@pytest.mark.parametrize("L", [1, 2])
@pytest.mark.parametrize("shared,resid", list(itertools.product(KINDS, KINDS)))
def test_log_posterior_matches_dense_reference(me, L, shared, resid):
    rng = np.random.default_rng(zlib.crc32(f"{me}{L}{shared}{resid}".encode()))
    W = lattice_adjacency(3, 3)
    cfg = ModelConfig(n_factors=L, shared_prior=shared, residual_prior=resid, measurement_error=me,
                      loading_scale=1.3, soft_zero_scale=0.05)
    model = GSCM(_panel(rng, 9, 3, me), cfg, prep_precision(lattice_graph(3, 3)))
    for _ in range(3):
        params = _random_params(rng, model.layout)
        if not me:
            params.u = None
        theta = model.pack(params)
        assert model.log_posterior(theta) == pytest.approx(_dense(model, params, W), abs=1e-10)


def test_zero_state_likelihood_term():
    rng = np.random.default_rng(0)
    p = prep_precision(lattice_graph(3, 3))
    panel = _panel(rng, 9, 3)
    cfg = ModelConfig(n_factors=2)
    full, prior = GSCM(panel, cfg, p), GSCM(panel, ModelConfig(n_factors=2, prior_only=True), p)
    lay = full.layout
    params = ModelParams(loadings=np.array([[1.0, 0], [0, 1.0], [0, 0]]), z=np.zeros((9, 2)), u=np.zeros((9, 3)),
                         tau=np.ones(3), rho=np.full(2, 0.5), kappa=np.array([0, 0.5, 0.5]))
    theta = lay.pack(params)
    like = full.log_posterior(theta) - prior.log_posterior(theta)
    assert like == pytest.approx(stats.norm.logpdf(panel.Y, 0.0, panel.S).sum(), abs=1e-10)


def test_pointwise_loglik_sums_to_likelihood_term():
    rng = np.random.default_rng(1)
    p = prep_precision(lattice_graph(3, 3))
    panel = _panel(rng, 9, 4)
    full = GSCM(panel, ModelConfig(n_factors=2), p)
    prior = GSCM(panel, ModelConfig(n_factors=2, prior_only=True), p)
    theta = rng.normal(size=full.dim) * 0.5
    assert full.pointwise_loglik(theta).sum() == pytest.approx(
        full.log_posterior(theta) - prior.log_posterior(theta), abs=1e-10)


def test_no_measurement_error_pointwise_is_full_conditional():
    rng = np.random.default_rng(2)
    g = lattice_graph(3, 3)
    p = prep_precision(g)
    C = car_c_matrix(g.adjacency_matrix())
    cfg = ModelConfig(n_factors=1, residual_prior=["IID", "LCAR", "ICAR"], measurement_error=False)
    model = GSCM(_panel(rng, 9, 3, me=False), cfg, p)
    theta = rng.normal(size=model.dim) * 0.5
    pr = model.unpack(theta)
    R = model.data.Y - pr.z @ pr.loadings.T
    ll = model.pointwise_loglik(theta)
    deg = g.degrees.astype(float)
    for k in range(3):
        if k == 0:
            Q = np.eye(9)
        elif k == 1:
            Q = np.eye(9) - pr.kappa[k] * C
        else:
            Q = np.diag(deg) - g.adjacency_matrix()
        Q = Q / pr.tau[k] ** 2
        for n in range(9):
            others = np.delete(np.arange(9), n)
            mean = -Q[n, others] @ R[others, k] / Q[n, n]
            ref = stats.norm.logpdf(R[n, k], mean, 1.0 / math.sqrt(Q[n, n]))
            assert ll[n, k] == pytest.approx(ref, abs=1e-10)


def test_reduces_to_conventional_scm():
    rng = np.random.default_rng(4)
    g = lattice_graph(3, 3)
    W = g.adjacency_matrix()
    p = prep_precision(g)
    cfg = ModelConfig(n_factors=1, shared_prior="LCAR", residual_prior="LCAR", measurement_error=False)
    model = GSCM(_panel(rng, 9, 3, me=False), cfg, p)
    prior_only = GSCM(model.data, ModelConfig(n_factors=1, shared_prior="LCAR", residual_prior="LCAR",
                                              measurement_error=False, prior_only=True), p)
    for _ in range(5):
        theta = rng.normal(size=model.dim) * 0.6
        pr = model.unpack(theta)
        like = model.log_posterior(theta) - prior_only.log_posterior(theta)
        ref = scm_logpdf(model.data.Y, pr.loadings[:, 0], pr.z[:, 0], pr.tau, pr.kappa, W,
                         ["IID", "LCAR", "LCAR"])
        assert like == pytest.approx(ref, abs=1e-10)


def test_measurement_scale_change_closed_form():
    rng = np.random.default_rng(5)
    p = prep_precision(lattice_graph(3, 3))
    panel = _panel(rng, 9, 3)
    c = 1.7
    a = GSCM(panel, ModelConfig(n_factors=2), p)
    b = GSCM(FeaturePanel(Y=panel.Y, S=c * panel.S), ModelConfig(n_factors=2), p)
    theta = rng.normal(size=a.dim) * 0.5
    resid = panel.Y - a.mu(theta)
    quad = np.sum(resid**2 / panel.S**2)
    expected = -9 * 3 * math.log(c) - 0.5 * quad * (1.0 / c**2 - 1.0)
    assert b.log_posterior(theta) - a.log_posterior(theta) == pytest.approx(expected, abs=1e-10)


@given(seed=st.integers(0, 2**31 - 1), me=st.booleans(), L=st.integers(1, 3),
       shared=st.sampled_from(KINDS), resid=st.sampled_from(KINDS))
def test_pack_unpack_round_trip(seed, me, L, shared, resid):
    rng = np.random.default_rng(seed)
    lay = ParamLayout(9, 4, ModelConfig(n_factors=L, shared_prior=shared, residual_prior=resid,
                                        measurement_error=me))
    theta = rng.normal(size=lay.dim)
    np.testing.assert_allclose(lay.pack(lay.unpack(theta)), theta, rtol=1e-12, atol=1e-12)
    pr = lay.unpack(theta)
    assert np.all(np.triu(pr.loadings, 1) == 0)
    assert np.all(np.diag(pr.loadings[:L]) > 0)


def test_pack_unpack_thousand_states():
    rng = np.random.default_rng(6)
    lay = ParamLayout(16, 5, ModelConfig(n_factors=2, residual_prior="ICAR"))
    for _ in range(1000):
        theta = rng.normal(size=lay.dim) * 2
        np.testing.assert_allclose(lay.pack(lay.unpack(theta)), theta, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("me", [True, False])
def test_state_dimension(me):
    N, K, L = 9, 5, 2
    cfg = ModelConfig(n_factors=L, shared_prior=["LCAR", "ICAR"], residual_prior="LCAR", measurement_error=me)
    lay = ParamLayout(N, K, cfg)
    n_free = K * L - L * (L - 1) // 2
    n_lcar_resid = K - 1  # the first residual is IID
    assert lay.n_loadings == n_free
    assert lay.dim == n_free + N * L + (N * K if me else 0) + K + 1 + n_lcar_resid


def test_log_posterior_invariant_to_packing_round_trip():
    rng = np.random.default_rng(7)
    p = prep_precision(lattice_graph(3, 3))
    model = GSCM(_panel(rng, 9, 3), ModelConfig(n_factors=2, residual_prior="ICAR"), p)
    theta = rng.normal(size=model.dim)
    assert model.log_posterior(model.pack(model.unpack(theta))) == pytest.approx(model.log_posterior(theta),
                                                                                abs=1e-10)


def test_tau_gradient_zero_at_prior_mode():
    rng = np.random.default_rng(8)
    p = prep_precision(lattice_graph(3, 3))
    model = GSCM(_panel(rng, 9, 3), ModelConfig(n_factors=1, prior_only=True), p)
    theta = rng.normal(size=model.dim)
    # Gamma(2, 3) with a log transform: d/d eta [2 eta - 3 e^eta] = 0 at tau = 2/3
    theta[model.layout.slices["tau"]] = math.log(2.0 / 3.0)
    _, g = model.logp_and_grad(theta)
    np.testing.assert_allclose(g[model.layout.slices["tau"]], 0.0, atol=1e-12)


def test_z_gradient_zero_without_loadings_at_prior_maximum():
    rng = np.random.default_rng(9)
    p = prep_precision(lattice_graph(3, 3))
    model = GSCM(_panel(rng, 9, 3), ModelConfig(n_factors=2), p)
    lay = model.layout
    params = _random_params(rng, lay)
    params.loadings = np.array([[np.exp(-60), 0], [0, np.exp(-60)], [0, 0]])
    params.z = np.zeros((9, 2))
    _, g = model.logp_and_grad(lay.pack(params))
    np.testing.assert_allclose(g[lay.slices["z"]], 0.0, atol=1e-12)


@pytest.mark.parametrize("me", [True, False])
def test_module_level_gradient_matches_finite_differences(me):
    rng = np.random.default_rng(10)
    p = prep_precision(lattice_graph(3, 3))
    panel = _panel(rng, 9, 3, me)
    cfg = ModelConfig(n_factors=2, residual_prior="ICAR", measurement_error=me)
    theta = rng.normal(size=GSCM(panel, cfg, p).dim) * 0.5
    g = log_posterior_grad(theta, panel, cfg, p)
    h = 1e-6
    fd = np.array([(log_posterior(theta + e, panel, cfg, p) - log_posterior(theta - e, panel, cfg, p)) / (2 * h)
                   for e in np.eye(theta.size) * h])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5)


def test_non_finite_density_raises():
    rng = np.random.default_rng(11)
    p = prep_precision(lattice_graph(3, 3))
    panel = _panel(rng, 9, 3)
    cfg = ModelConfig(n_factors=1)
    theta = np.zeros(GSCM(panel, cfg, p).dim)
    theta[GSCM(panel, cfg, p).layout.slices["tau"]] = 800.0
    with pytest.raises(NonFiniteDensityError):
        log_posterior(theta, panel, cfg, p)
    assert GSCM(panel, cfg, p).log_posterior(theta) == -np.inf


def test_reconstruct_mu():
    zero = ModelParams(loadings=np.ones((3, 1)), z=np.zeros((4, 1)), u=np.zeros((4, 3)), tau=np.ones(3),
                       rho=np.zeros(1), kappa=np.zeros(3))
    assert np.all(reconstruct_mu(zero, ModelConfig(n_factors=1)) == 0)
    a, b, pz, q = 0.7, -1.3, 2.0, 0.5
    pr = ModelParams(loadings=np.array([[a, b], [1, 0], [0, 1]]), z=np.array([[pz, q]]), u=np.zeros((1, 3)),
                     tau=np.ones(3), rho=np.zeros(2), kappa=np.zeros(3))
    assert reconstruct_mu(pr, ModelConfig(n_factors=2))[0, 0] == pytest.approx(a * pz + b * q)
    rng = np.random.default_rng(12)
    pr = ModelParams(loadings=rng.normal(size=(4, 2)), z=rng.normal(size=(6, 2)), u=rng.normal(size=(6, 4)),
                     tau=rng.uniform(0.1, 1, 4), rho=np.zeros(2), kappa=np.zeros(4))
    expected = np.einsum("nl,kl->nk", pr.z, pr.loadings) + pr.u * pr.tau[None, :]
    np.testing.assert_allclose(reconstruct_mu(pr, ModelConfig(n_factors=2)), expected, atol=1e-14)


def test_reconstruct_mu_without_measurement_error_returns_estimates():
    panel = FeaturePanel(Y=np.arange(6.0).reshape(3, 2), S=np.zeros((3, 2)))
    pr = ModelParams(loadings=np.ones((2, 1)), z=np.zeros((3, 1)), u=None, tau=np.ones(2), rho=np.zeros(1),
                     kappa=np.zeros(2))
    np.testing.assert_array_equal(reconstruct_mu(pr, ModelConfig(n_factors=1, measurement_error=False), panel),
                                  panel.Y)
    with pytest.raises(ConfigError):
        reconstruct_mu(pr, ModelConfig(n_factors=1, measurement_error=False))


def test_implied_covariance_single_factor_identity():
    N, K = 4, 3
    lam = np.ones((K, 1))
    cov = implied_covariance(lam, [np.eye(N)], [np.zeros((N, N))] * K, np.zeros((N, K)))
    np.testing.assert_allclose(cov, np.kron(np.ones((K, K)), np.eye(N)))


def test_implied_covariance_entry_identities():
    rng = np.random.default_rng(13)
    p = prep_precision(lattice_graph(2, 3))
    N, K = 6, 3
    Lam = np.array([[0.8, 0.0], [0.3, 0.6], [-0.4, 0.5]])
    sh = [prior_covariance("LCAR", 0.7, p), prior_covariance("IID", 0.0, p)]
    tau = np.array([0.3, 0.5, 0.2])
    rs = [prior_covariance("IID", 0, p, tau[0]), prior_covariance("LCAR", 0.4, p, tau[1]),
          prior_covariance("ICAR", 0, p, tau[2])]
    S = rng.uniform(0.1, 0.4, size=(N, K))
    cov = implied_covariance(Lam, sh, rs, S)
    for n, k in itertools.product(range(N), range(K)):
        var = sum(Lam[k, l] ** 2 * sh[l][n, n] for l in range(2)) + rs[k][n, n] + S[n, k] ** 2
        assert cov[k * N + n, k * N + n] == pytest.approx(var)
    for n in range(N):
        cross = sum(Lam[0, l] * Lam[2, l] * sh[l][n, n] for l in range(2))
        assert cov[0 * N + n, 2 * N + n] == pytest.approx(cross)
    # one factor: Lambda Lambda^T kron Sigma
    one = implied_covariance(Lam[:, :1], sh[:1], [np.zeros((N, N))] * K, np.zeros((N, K)))
    np.testing.assert_allclose(one, np.kron(Lam[:, :1] @ Lam[:, :1].T, sh[0]), atol=1e-12)
    with pytest.raises(DimensionMismatchError):
        implied_covariance(Lam, sh[:1], rs, S)


def test_icar_covariance_is_sum_zero_pseudo_inverse():
    g = lattice_graph(3, 3)
    cov = prior_covariance("ICAR", 0.0, prep_precision(g))
    Q = np.diag(g.degrees.astype(float)) - g.adjacency_matrix()
    np.testing.assert_allclose(cov.sum(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(Q @ cov @ Q, Q, atol=1e-10)


def test_simulate_noise_free_is_factor_product_and_deterministic():
    g = lattice_graph(3, 3)
    cfg = ModelConfig(n_factors=2)
    truth = ModelParams(loadings=np.array([[0.8, 0], [0.3, 0.6], [-0.4, 0.5]]), z=None, u=None,
                        tau=np.zeros(3), rho=np.array([0.9, 0.5]), kappa=np.array([0, 0.5, 0.5]))
    panel, tr = simulate(cfg, truth, g, seed=3, return_truth=True)
    np.testing.assert_array_equal(panel.Y, tr.z @ tr.loadings.T)
    again = simulate(cfg, truth, g, seed=3, S=None)
    np.testing.assert_array_equal(panel.Y, again.Y)
    other = simulate(cfg, truth, g, seed=4)
    assert not np.array_equal(panel.Y, other.Y)


def test_feature_panel_validation():
    with pytest.raises(DimensionMismatchError):
        FeaturePanel(Y=np.zeros((3, 2)), S=np.zeros((3, 3)))
    with pytest.raises(DataValidationError):
        FeaturePanel(Y=np.array([[np.nan, 0.0]]), S=np.zeros((1, 2)))
    with pytest.raises(DataValidationError):
        FeaturePanel(Y=np.zeros((2, 2)), S=-np.ones((2, 2)))
    with pytest.raises(DataValidationError):
        GSCM(FeaturePanel(Y=np.zeros((4, 3)), S=np.zeros((4, 3))), ModelConfig(n_factors=1),
             prep_precision(lattice_graph(2, 2)))


def test_reorder_features():
    panel = FeaturePanel(Y=np.arange(6.0).reshape(2, 3), S=np.ones((2, 3)), feature_names=["a", "b", "c"])
    out = panel.reorder_features(["c", "a", "b"])
    assert out.feature_names == ["c", "a", "b"]
    np.testing.assert_array_equal(out.Y[:, 0], panel.Y[:, 2])
    with pytest.raises(ConfigError):
        panel.reorder_features(["a", "a", "b"])


def test_model_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(n_factors=3).validate(3)
    with pytest.raises(ConfigError):
        ModelConfig(n_factors=0).validate(3)
    with pytest.raises(ConfigError):
        ModelConfig(n_factors=2, shared_prior=["LCAR"]).validate(4)
    kinds = ModelConfig(residual_prior="ICAR").residual_kinds(3)
    assert [k.value for k in kinds] == ["IID", "ICAR", "ICAR"]
    kinds = ModelConfig(residual_prior="ICAR", first_residual_iid=False).residual_kinds(3)
    assert [k.value for k in kinds] == ["ICAR"] * 3
