import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from hiercop import bivariate as biv
from hiercop import exchangeable as ex

FAMILIES = [ex.NormalEx(0.35), ex.ClaytonEx(1.2), ex.FrankEx(4.0)]
IDS = [repr(f) for f in FAMILIES]


def _sidi(k=48):
    t, w = np.polynomial.legendre.leggauss(k)
    t, w = 0.5 * (t + 1.0), 0.5 * w
    return t - np.sin(2 * np.pi * t) / (2 * np.pi), w * (1.0 - np.cos(2 * np.pi * t))


@pytest.mark.parametrize(
    "fam,bv",
    [(ex.NormalEx(0.4), biv.Normal(0.4)), (ex.ClaytonEx(1.5), biv.Clayton(1.5)), (ex.FrankEx(3.0), biv.Frank(3.0))],
)
def test_two_dimensional_member_is_the_bivariate_copula(fam, bv):
    rng = np.random.default_rng(0)
    for u, v in rng.uniform(0.02, 0.98, size=(20, 2)):
        assert fam.logpdf([u, v]) == pytest.approx(float(bv.logpdf(u, v)), abs=1e-10)


@pytest.mark.parametrize("n", [2, 3, 5, 9])
def test_normal_density_matches_dense_oracle(n):
    rng = np.random.default_rng(n)
    for rho in (0.0, 0.2, 0.8):
        w = rng.uniform(0.01, 0.99, n)
        z = special.ndtri(w)
        R = (1 - rho) * np.eye(n) + rho
        ref = stats.multivariate_normal(np.zeros(n), R).logpdf(z) - stats.norm.logpdf(z).sum()
        assert ex.NormalEx(rho).logpdf(w) == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("fam", FAMILIES, ids=IDS)
def test_permutation_invariance(fam):
    w = np.array([0.1, 0.45, 0.8, 0.63])
    vals = {round(fam.logpdf(np.array(p)), 12) for p in itertools.permutations(w)}
    assert len(vals) == 1


@pytest.mark.parametrize("fam", FAMILIES, ids=IDS)
def test_marginalization_closure(fam):
    x, wx = _sidi()
    for w in ([0.2, 0.7], [0.5, 0.5], [0.9, 0.15]):
        total = sum(wk * fam.pdf(np.array(w + [xk])) for xk, wk in zip(x, wx))
        assert total == pytest.approx(fam.pdf(np.array(w)), rel=1e-6)


@pytest.mark.parametrize("fam", FAMILIES, ids=IDS)
def test_conditional_density_integrates_to_one(fam):
    x, wx = _sidi(64)
    for hist in ([], [0.3], [0.2, 0.9, 0.6]):
        assert wx @ fam.conditional_pdf(hist, x) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("fam", FAMILIES, ids=IDS)
def test_grouped_equals_single_cluster_calls(fam):
    rng = np.random.default_rng(2)
    sizes = np.array([1, 3, 2, 5])
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    w = rng.uniform(0.05, 0.95, sizes.sum())
    grouped = fam.logpdf_grouped(w, starts, sizes)
    single = [fam.logpdf(w[s : s + n]) for s, n in zip(starts, sizes)]
    assert np.allclose(grouped, single, atol=1e-12)
    assert grouped[0] == 0.0


@pytest.mark.parametrize("fam", FAMILIES + [ex.IndependenceEx()], ids=IDS + ["Independence"])
def test_sampling_margins_and_pairwise_tau(fam):
    sizes = np.full(4000, 3)
    w = fam.sample_clusters(sizes, np.random.default_rng(9)).reshape(-1, 3)
    assert stats.kstest(w[:, 0], "uniform").pvalue > 0.001
    assert stats.kendalltau(w[:, 0], w[:, 2])[0] == pytest.approx(fam.tau(), abs=0.03)


def test_log_polylog_matches_series():
    for s in (0, 1, 2, 5, 9):
        for z in (0.05, 0.5, 0.93):
            k = np.arange(1, 4000)
            ref = np.sum(k.astype(float) ** s * z**k)
            assert math.exp(ex.log_polylog_neg(s, math.log(z))) == pytest.approx(ref, rel=1e-10)


def test_archimedean_size_cap():
    w = np.full(ex.MAX_ARCHIMEDEAN_N + 1, 0.5)
    with pytest.raises(ValueError):
        ex.ClaytonEx(1.0).logpdf(w)
    with pytest.raises(ValueError):
        ex.FrankEx(1.0).logpdf(w)
    assert np.isfinite(ex.NormalEx(0.3).logpdf(w))


def test_conditional_moments_match_gaussian_conditioning():
    rho = 0.37
    h = np.array([0.2, 0.85, 0.6, 0.41])
    k = h.size
    R = (1 - rho) * np.eye(k + 1) + rho
    z = special.ndtri(h)
    S12 = R[k, :k]
    mu = S12 @ np.linalg.solve(R[:k, :k], z)
    var = 1.0 - S12 @ np.linalg.solve(R[:k, :k], S12)
    m0, s0 = ex.conditional_moments_normal(rho, h)
    assert m0 == pytest.approx(mu, abs=1e-12)
    assert s0 == pytest.approx(math.sqrt(var), abs=1e-12)
    assert ex.conditional_moments_normal(rho, []) == (0.0, 1.0)


def test_normal_conditional_density_is_gaussian_in_scores():
    rho = 0.3
    h = [0.2, 0.7]
    m0, s0 = ex.conditional_moments_normal(rho, h)
    w = np.linspace(0.05, 0.95, 7)
    q = special.ndtri(w)
    ref = stats.norm(m0, s0).logpdf(q) - stats.norm.logpdf(q)
    assert np.allclose(ex.NormalEx(rho).conditional_logpdf(h, w), ref, atol=1e-12)


def test_make_exchangeable():
    for fam in FAMILIES:
        assert ex.make_exchangeable(fam.to_dict()) == fam
    with pytest.raises(ValueError):
        ex.make_exchangeable({"family": "Gumbel", "params": [2.0]})
    with pytest.raises(ValueError):
        ex.NormalEx(-0.2)


@settings(max_examples=60, deadline=None)
@given(
    fam=st.sampled_from(["Normal", "Clayton", "Frank"]),
    tau=st.floats(0.01, 0.85),
)
def test_tau_roundtrip_property(fam, tau):
    cls = {"Normal": ex.NormalEx, "Clayton": ex.ClaytonEx, "Frank": ex.FrankEx}[fam]
    assert cls.from_tau(tau).tau() == pytest.approx(tau, abs=1e-7)


@settings(max_examples=40, deadline=None)
@given(
    delta=st.floats(0.05, 15.0),
    w=st.lists(st.floats(0.01, 0.99), min_size=2, max_size=12),
)
def test_archimedean_logpdf_finite_property(delta, w):
    for fam in (ex.ClaytonEx(delta), ex.FrankEx(delta)):
        assert np.isfinite(fam.logpdf(np.array(w)))
