import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hiercop import bivariate as biv

COPULAS = [
    biv.Independence(),
    biv.Normal(0.6),
    biv.Normal(-0.5),
    biv.Clayton(2.0),
    biv.Frank(5.0),
    biv.Frank(-4.0),
    biv.Gumbel(2.0),
    biv.Khoudraji(biv.Normal(0.7), 0.8, 1.0),
    biv.Khoudraji(biv.Gumbel(1.7), 0.5, 0.9),
    biv.Survival(biv.Clayton(1.5)),
    biv.Survival(biv.Khoudraji(biv.Normal(0.795), 0.822, 0.959)),
]
IDS = [repr(c) for c in COPULAS]
G = np.linspace(0.03, 0.97, 11)
U, V = (a.ravel() for a in np.meshgrid(G, G))


def _sidi_grid(k=80):
    t, w = np.polynomial.legendre.leggauss(k)
    t, w = 0.5 * (t + 1.0), 0.5 * w
    x = t - np.sin(2 * np.pi * t) / (2 * np.pi)
    wx = w * (1.0 - np.cos(2 * np.pi * t))
    X, Y = np.meshgrid(x, x, indexing="ij")
    return X.ravel(), Y.ravel(), np.outer(wx, wx).ravel()


@pytest.mark.parametrize("cop", COPULAS, ids=IDS)
def test_density_integrates_to_one(cop):
    X, Y, W = _sidi_grid()
    assert W @ cop.pdf(X, Y) == pytest.approx(1.0, abs=5e-5)


@pytest.mark.parametrize("cop", COPULAS, ids=IDS)
def test_density_is_mixed_derivative_of_cdf(cop):
    e = 1e-4
    fd = (cop.cdf(U + e, V + e) - cop.cdf(U + e, V - e) - cop.cdf(U - e, V + e) + cop.cdf(U - e, V - e)) / (4 * e * e)
    assert np.allclose(cop.pdf(U, V), fd, rtol=1e-4, atol=1e-4)


@pytest.mark.parametrize("cop", COPULAS, ids=IDS)
def test_boundary_conditions(cop):
    assert np.allclose(cop.cdf(G, np.ones_like(G) - 1e-15), G, atol=1e-10)
    assert np.allclose(cop.cdf(np.ones_like(G) - 1e-15, G), G, atol=1e-10)
    assert np.allclose(cop.cdf(G, np.full_like(G, 1e-15)), 0.0, atol=1e-10)


@pytest.mark.parametrize("cop", COPULAS, ids=IDS)
def test_both_h_functions_match_finite_differences(cop):
    e = 1e-6
    h1 = (cop.cdf(U + e, V) - cop.cdf(U - e, V)) / (2 * e)
    h2 = (cop.cdf(U, V + e) - cop.cdf(U, V - e)) / (2 * e)
    assert np.allclose(cop.hfunc(V, U), h1, atol=1e-6)
    assert np.allclose(cop.hfunc_u(U, V), h2, atol=1e-6)


@pytest.mark.parametrize("cop", COPULAS, ids=IDS)
def test_hinv_roundtrip(cop):
    assert np.allclose(cop.hinv(cop.hfunc(V, U), U), V, atol=1e-9)


def test_hinv_bisect_matches_closed_forms():
    for cop in (biv.Normal(0.6), biv.Clayton(2.0), biv.Frank(5.0)):
        t = np.clip(V, 0.05, 0.95)
        assert np.allclose(biv.hinv_bisect(cop, t, U), cop.hinv(t, U), atol=1e-10)


def test_survival_identity():
    base = biv.Khoudraji(biv.Normal(0.7), 0.6, 0.9)
    s = biv.Survival(base)
    assert np.allclose(s.cdf(U, V), U + V - 1.0 + base.cdf(1 - U, 1 - V), atol=1e-13)
    assert np.allclose(s.pdf(U, V), base.pdf(1 - U, 1 - V), rtol=1e-12)


def test_khoudraji_identities():
    base = biv.Clayton(2.0)
    assert np.allclose(biv.Khoudraji(base, 1.0, 1.0).cdf(U, V), base.cdf(U, V), atol=1e-14)
    assert np.allclose(biv.Khoudraji(base, 1e-9, 1e-9).cdf(U, V), U * V, atol=1e-7)
    k = biv.Khoudraji(base, 0.7, 0.4)
    expect = U**0.3 * V**0.6 * base.cdf(U**0.7, V**0.4)
    assert np.allclose(k.cdf(U, V), expect, atol=1e-14)


@pytest.mark.parametrize("family", ["Normal", "Clayton", "Frank", "Gumbel"])
def test_tau_closed_form_matches_quadrature(family):
    for tau in (0.1, 0.4, 0.7):
        cop = biv.make_copula({"family": family, "params": list(biv.tau_to_param(family, tau))})
        assert biv.tau_quadrature(cop) == pytest.approx(tau, abs=2e-3)


def test_khoudraji_tau_by_quadrature_agrees_with_sampling():
    cop = biv.Khoudraji(biv.Normal(0.679), 0.82, 1.0)
    rng = np.random.default_rng(11)
    u, v = cop.sample(4000, rng)
    emp = stats.kendalltau(u, v)[0]
    assert cop.tau() == pytest.approx(emp, abs=0.03)


@pytest.mark.parametrize("cop", COPULAS, ids=IDS)
def test_sampling_reproduces_tau(cop):
    u, v = cop.sample(3000, np.random.default_rng(5))
    assert np.all((u > 0) & (u < 1) & (v > 0) & (v < 1))
    assert stats.kendalltau(u, v)[0] == pytest.approx(cop.tau(), abs=0.04)


def test_frank_tau_small_delta_is_continuous():
    assert biv.frank_tau(1e-9) == pytest.approx(1e-9 / 9, rel=1e-9)
    for d in (0.009, 0.011, -0.0099):
        assert biv.frank_tau(d) == pytest.approx(biv.tau_quadrature(biv.Frank(d), nodes=400), abs=1e-6)
    assert biv.frank_delta(biv.frank_tau(3.0)) == pytest.approx(3.0, rel=1e-9)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        biv.Normal(1.0)
    with pytest.raises(ValueError):
        biv.Clayton(-0.5)
    with pytest.raises(ValueError):
        biv.Gumbel(0.9)
    with pytest.raises(ValueError):
        biv.Khoudraji(biv.Normal(0.5), 1.2, 0.5)
    with pytest.raises(ValueError):
        biv.make_copula({"family": "Plackett", "params": [2.0]})


def test_dict_roundtrip():
    for cop in COPULAS:
        back = biv.make_copula(cop.to_dict())
        assert np.allclose(back.cdf(U, V), cop.cdf(U, V), atol=0)


def test_unconstrained_roundtrip():
    for cop in COPULAS:
        if cop.tau() < 0:
            # transforms cover positive dependence only
            with pytest.raises(ValueError):
                cop.to_unconstrained()
            continue
        back = cop.from_unconstrained(cop.to_unconstrained())
        assert np.allclose(back.params, cop.params, rtol=1e-10, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(
    fam=st.sampled_from(["Normal", "Clayton", "Frank", "Gumbel"]),
    tau=st.floats(0.01, 0.9),
)
def test_tau_map_roundtrip_property(fam, tau):
    p = biv.tau_to_param(fam, tau)
    assert biv.param_to_tau(fam, p) == pytest.approx(tau, abs=1e-7)


@settings(max_examples=80, deadline=None)
@given(
    rho=st.floats(0.05, 0.95),
    k1=st.floats(0.1, 1.0),
    k2=st.floats(0.1, 1.0),
    u=st.floats(0.001, 0.999),
    t=st.floats(0.001, 0.999),
)
def test_khoudraji_hinv_property(rho, k1, k2, u, t):
    cop = biv.Khoudraji(biv.Normal(rho), k1, k2)
    v = cop.hinv(np.array([t]), np.array([u]))
    assert float(cop.hfunc(v, np.array([u]))[0]) == pytest.approx(t, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    fam=st.sampled_from([biv.Clayton(0.5), biv.Clayton(6.0), biv.Gumbel(1.3), biv.Gumbel(4.0), biv.Frank(-8.0), biv.Frank(12.0)]),
    u=st.floats(0.001, 0.999),
    v=st.floats(0.001, 0.999),
)
def test_h_function_in_unit_interval_property(fam, u, v):
    h = float(fam.hfunc(np.array([v]), np.array([u]))[0])
    assert 0.0 <= h <= 1.0
