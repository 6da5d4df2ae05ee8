import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gscm.errors import DimensionMismatchError, NonPositiveScaleError, RhoOutOfRangeError
from gscm.graph import build_graph, lattice_graph, prep_precision
from gscm.priors import (
    PriorKind,
    default_soft_zero_scale,
    icar_grad,
    icar_lpdf,
    iid_grad,
    iid_lpdf,
    lcar_grad,
    lcar_lpdf,
)
from oracles import icar_logpdf_dense, lcar_logpdf_dense


def _fd(f, x, h=1e-6):
    return np.array([(f(x + e) - f(x - e)) / (2 * h) for e in np.eye(len(x)) * h])


def test_lcar_path3_hand_value():
    # path of 3: eig(C) = {1, 0, -2}, so log|I - 0.5 C| = log(0.5) + log(1) + log(2) = 0
    p = prep_precision(lattice_graph(1, 3))
    np.testing.assert_allclose(p.eigenvalues, [1.0, 0.0, -2.0], atol=1e-12)
    expected = -1.5 * np.log(2 * np.pi)
    assert lcar_lpdf(np.zeros(3), 0.5, 1.0, p) == pytest.approx(expected, abs=1e-12)


@given(seed=st.integers(0, 2**31 - 1), rho=st.floats(0.0, 0.99), sigma=st.floats(0.1, 3.0))
def test_lcar_matches_dense_mvn(seed, rho, sigma):
    p = prep_precision(lattice_graph(3, 4))
    x = np.random.default_rng(seed).normal(size=12) * sigma
    ref = lcar_logpdf_dense(x, rho, sigma, p.dense() - np.eye(12) + np.diag(p.degrees))
    assert lcar_lpdf(x, rho, sigma, p) == pytest.approx(ref, abs=1e-8)


def test_lcar_rho_zero_is_iid():
    p = prep_precision(lattice_graph(3, 3))
    x = np.linspace(-1, 1, 9)
    assert lcar_lpdf(x, 0.0, 1.7, p) == pytest.approx(iid_lpdf(x, 1.7), abs=1e-12)


def test_lcar_errors():
    p = prep_precision(lattice_graph(2, 2))
    with pytest.raises(RhoOutOfRangeError):
        lcar_lpdf(np.zeros(4), 1.0, 1.0, p)
    with pytest.raises(RhoOutOfRangeError):
        lcar_lpdf(np.zeros(4), -0.1, 1.0, p)
    with pytest.raises(NonPositiveScaleError):
        lcar_lpdf(np.zeros(4), 0.5, 0.0, p)
    with pytest.raises(DimensionMismatchError):
        lcar_lpdf(np.zeros(5), 0.5, 1.0, p)


@given(seed=st.integers(0, 2**31 - 1), rho=st.floats(0.01, 0.98), sigma=st.floats(0.3, 2.0))
def test_lcar_gradient_matches_finite_differences(seed, rho, sigma):
    p = prep_precision(lattice_graph(3, 3))
    x = np.random.default_rng(seed).normal(size=9)
    gx, grho, gsig = lcar_grad(x, rho, sigma, p)
    np.testing.assert_allclose(gx, _fd(lambda v: lcar_lpdf(v, rho, sigma, p), x), rtol=1e-5, atol=1e-6)
    h = 1e-6
    fd_rho = (lcar_lpdf(x, rho + h, sigma, p) - lcar_lpdf(x, rho - h, sigma, p)) / (2 * h)
    fd_sig = (lcar_lpdf(x, rho, sigma + h, p) - lcar_lpdf(x, rho, sigma - h, p)) / (2 * h)
    assert grho == pytest.approx(fd_rho, rel=1e-5, abs=1e-6)
    assert gsig == pytest.approx(fd_sig, rel=1e-5, abs=1e-6)


@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.005, 2.0))
def test_icar_matches_dense_kernel(seed, scale):
    g = lattice_graph(3, 4)
    p = prep_precision(g)
    x = np.random.default_rng(seed).normal(size=12)
    assert icar_lpdf(x, p, scale) == pytest.approx(icar_logpdf_dense(x, g.adjacency_matrix(), scale), abs=1e-9)


def test_icar_invariant_to_shift_apart_from_sum_penalty():
    p = prep_precision(lattice_graph(3, 3))
    x = np.random.default_rng(1).normal(size=9)
    x -= x.mean()
    big = 1e6
    # zero-sum vectors: the penalty term is constant, so shifting by c only moves that term
    a = icar_lpdf(x, p, big)
    b = icar_lpdf(x + 0.3, p, big)
    assert a == pytest.approx(b, abs=1e-9)


def test_icar_gradient_matches_finite_differences():
    p = prep_precision(build_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]))
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.normal(size=5)
        np.testing.assert_allclose(icar_grad(x, p, 0.5), _fd(lambda v: icar_lpdf(v, p, 0.5), x),
                                   rtol=1e-6, atol=1e-6)


def test_icar_default_soft_zero_scale():
    assert default_soft_zero_scale(2221) == pytest.approx(2.221)
    p = prep_precision(lattice_graph(2, 5))
    x = np.arange(10.0)
    assert icar_lpdf(x, p) == icar_lpdf(x, p, 0.01)


def test_iid_gradient():
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_allclose(iid_grad(x, 2.0), _fd(lambda v: iid_lpdf(v, 2.0), x), rtol=1e-7)


def test_prior_kind_parse():
    assert PriorKind.parse("lcar") is PriorKind.LCAR
    assert PriorKind.parse(PriorKind.ICAR) is PriorKind.ICAR
    with pytest.raises(ValueError):
        PriorKind.parse("BYM")
