import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gscm.errors import (
    DimensionMismatchError,
    NonPositivePopulationError,
    RequiresTwoFactorsError,
    TooFewDrawsError,
    UnlabelledAreaError,
)
from gscm.indices import (
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
from oracles import brute_hpdi, brute_percentile, brute_ranks

PUBLISHED_LOADINGS = [[0.77, 0.0], [-0.15, 0.54], [-0.47, 0.51], [-0.24, 0.40], [0.09, 0.64]]


def test_weights_published_loadings():
    w = hbi_weights(PUBLISHED_LOADINGS)
    np.testing.assert_allclose(w, [0.446, 0.554], atol=5e-4)


def test_weights_symmetric_and_degenerate():
    np.testing.assert_allclose(hbi_weights([[1, -1], [-1, 1]]), [0.5, 0.5])
    np.testing.assert_allclose(hbi_weights([[1, 0], [2, 0]]), [1.0, 0.0])
    with pytest.raises(RequiresTwoFactorsError):
        hbi_weights(np.ones((3, 1)))


def test_weights_per_draw_sum_to_one_and_point_mode():
    lam = np.random.default_rng(0).normal(size=(50, 4, 2))
    w = hbi_weights(lam)
    assert w.shape == (50, 2)
    assert np.all(w.sum(axis=1) == 1.0)
    np.testing.assert_allclose(hbi_weights(lam, point=True), hbi_weights(np.median(lam, axis=0)))


def test_compose_hbi():
    rng = np.random.default_rng(1)
    z1 = rng.normal(size=(10, 6))
    same = np.stack([z1, z1], axis=-1)
    np.testing.assert_allclose(compose_hbi(same, [0.3, 0.7]).values, z1, atol=1e-15)
    z = rng.normal(size=(10, 6, 2))
    np.testing.assert_array_equal(compose_hbi(z, [1.0, 0.0]).values, z[:, :, 0])
    w = rng.dirichlet([1, 1], size=10)
    brute = np.array([[w[d, 0] * z[d, n, 0] + w[d, 1] * z[d, n, 1] for n in range(6)] for d in range(10)])
    np.testing.assert_allclose(compose_hbi(z, w).values, brute, atol=1e-15)
    with pytest.raises(DimensionMismatchError):
        compose_hbi(z, np.ones((9, 2)))


@given(seed=st.integers(0, 2**31 - 1))
def test_hbi_between_factors(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(5, 7, 2))
    h = compose_hbi(z, rng.dirichlet([1, 1], size=5)).values
    assert np.all(h >= z.min(axis=2) - 1e-12) and np.all(h <= z.max(axis=2) + 1e-12)


def test_compose_pahbi():
    rng = np.random.default_rng(2)
    hbi = compose_hbi(rng.normal(size=(4, 5, 2)), [0.5, 0.5])
    np.testing.assert_array_equal(compose_pahbi(hbi, np.ones(5)).values, hbi.values)
    with pytest.raises(NonPositivePopulationError):
        compose_pahbi(hbi, np.array([1, 2, 0, 4, 5.0]))
    P = np.array([5.0, 1.0, 3.0, 2.0, 4.0])
    uniform = np.ones((3, 5))
    ranks = to_ranks(compose_pahbi(uniform, P).values)
    assert ranks[0].tolist() == brute_ranks(P.tolist())


def test_pahbi_larger_population_more_extreme():
    rng = np.random.default_rng(3)
    base = rng.normal(size=(200, 6))
    base[:, 1] = base[:, 0]  # areas 0 and 1 share HBI draws
    P = np.array([10.0, 1000.0, 50, 70, 300, 20])
    pct = to_percentiles(compose_pahbi(base, P).values)
    pos = base[:, 0] > 0
    assert np.all(pct[pos, 1] >= pct[pos, 0])
    assert np.all(pct[~pos, 1] <= pct[~pos, 0])


def test_ranks():
    assert to_ranks(np.array([[3.0, 1.0, 2.0]]))[0].tolist() == [1, 3, 2]
    assert to_ranks(np.zeros((1, 4)))[0].tolist() == [1, 2, 3, 4]
    assert to_ranks(np.array([[3.0, 1.0, 2.0]]), sign=-1)[0].tolist() == [3, 1, 2]
    x = np.random.default_rng(4).normal(size=(20, 30)).round(1)  # rounding creates ties
    for row, r in zip(x, to_ranks(x)):
        assert r.tolist() == brute_ranks(row.tolist())


def test_percentiles():
    ranks = np.arange(1, 101)[None, :]
    p = to_percentiles(None, ranks=ranks)
    assert p[0, 0] == 100 and p[0, -1] == 1
    n = 2221
    pct = to_percentiles(None, ranks=np.arange(1, n + 1)[None, :])[0]
    sizes = np.bincount(pct, minlength=101)[1:]
    assert set(pct.tolist()) == set(range(1, 101))
    assert sizes.max() - sizes.min() <= 1
    assert all(pct[r - 1] == brute_percentile(r, n) for r in range(1, n + 1))


@given(seed=st.integers(0, 2**31 - 1))
def test_ranks_invariant_to_increasing_transform(seed):
    x = np.random.default_rng(seed).normal(size=(3, 15))
    np.testing.assert_array_equal(to_ranks(x), to_ranks(np.exp(3 * x) + 2))
    np.testing.assert_array_equal(to_percentiles(x), to_percentiles(np.arctan(x)))


def test_hpdi():
    x = np.random.default_rng(5).standard_normal(20000)
    lo, hi = hpdi(x)
    assert lo == pytest.approx(-1.96, abs=0.06) and hi == pytest.approx(1.96, abs=0.06)
    assert hpdi(np.full(50, 2.5)) == (2.5, 2.5)
    e = np.random.default_rng(6).exponential(size=5000)
    lo, hi = hpdi(e)
    q = np.quantile(e, [0.025, 0.975])
    assert lo < 0.01 and hi - lo < q[1] - q[0]
    with pytest.raises(TooFewDrawsError):
        hpdi(np.zeros(19))


def test_hpdi_matches_brute_force():
    rng = np.random.default_rng(7)
    for n in (20, 21, 57, 200):
        x = rng.gamma(2.0, size=n)
        assert hpdi(x) == pytest.approx(brute_hpdi(x), abs=1e-12)


def test_exceedance_and_toprank():
    pct = np.full((10, 3), 100)
    pct[:, 1] = 50
    pct[:, 2] = 99
    ranks = np.tile([1, 150, 200], (10, 1))
    out = exceedance_and_toprank(pct, ranks)
    assert out["p_gt99"].tolist() == [1.0, 0.0, 0.0]
    assert out["p_top100"].tolist() == [1.0, 0.0, 0.0]
    with pytest.raises(DimensionMismatchError):
        exceedance_and_toprank(pct, ranks[:5])


def test_group_scoped_percentiles():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(30, 9))
    r1, p1 = group_scoped_percentiles(x, ["a"] * 9)
    np.testing.assert_array_equal(p1, to_percentiles(x))
    _, ps = group_scoped_percentiles(x, ["a"] * 8 + ["solo"])
    assert np.all(ps[:, 8] == 100)
    labels = ["a", "b", "a", "b", "b", "a", "a", "b", "a"]
    r, p = group_scoped_percentiles(x, labels)
    for g in ("a", "b"):
        cols = [i for i, lab in enumerate(labels) if lab == g]
        for d in range(30):
            br = brute_ranks(x[d, cols].tolist())
            assert r[d, cols].tolist() == br
            assert p[d, cols].tolist() == [brute_percentile(v, len(cols)) for v in br]
    with pytest.raises(UnlabelledAreaError):
        group_scoped_percentiles(x, ["a"] * 8 + [None])


def test_summary_table_invariants():
    rng = np.random.default_rng(9)
    z = rng.normal(size=(400, 25, 2)) + rng.normal(size=(1, 25, 2))
    lam = rng.normal(size=(400, 4, 2))
    idx = build_indices(z, lam, rng.uniform(100, 1000, size=25))
    assert list(idx) == ["factor1", "factor2", "hbi", "pahbi"]
    groups = ["x"] * 12 + ["y"] * 13
    for name, ind in idx.items():
        t = summarise_index(ind, [f"a{i}" for i in range(25)], groups)
        assert list(t.columns[:13]) == ["area_id", "group", "median", "hpdi_low", "hpdi_high",
                                        "median_percentile", "median_rank", "p_gt80", "p_gt95", "p_gt99",
                                        "p_top10", "p_top20", "p_top100"]
        assert np.all(t.hpdi_low <= t["median"]) and np.all(t["median"] <= t.hpdi_high)
        assert np.all(t.p_gt99 <= t.p_gt95) and np.all(t.p_gt95 <= t.p_gt80)
        assert np.all(t.p_top10 <= t.p_top20) and np.all(t.p_top20 <= t.p_top100)
        probs = t.filter(regex=r"(^|_)p_(gt|top)")
        assert np.all((probs >= 0) & (probs <= 1))


def test_build_indices_single_factor():
    idx = build_indices(np.zeros((5, 4, 1)), np.ones((5, 3, 1)), np.ones(4))
    assert list(idx) == ["factor1"]
