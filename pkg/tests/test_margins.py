import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from hiercop import margins as mg
from hiercop._numeric import ConvergenceError

MARGINS = [mg.Normal(0.3, 1.7), mg.Beta(4.271, 2.359), mg.Beta(0.7, 0.8), mg.GB3(2.457, 2.470, 0.248), mg.GB3(1.5, 3.0, 0.9)]


def _support(m):
    return getattr(m, "support", (-np.inf, np.inf))


@pytest.mark.parametrize("m", MARGINS, ids=repr)
def test_pdf_integrates_to_one(m):
    lo, hi = _support(m)
    total, _ = integrate.quad(m.pdf, lo, hi, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("m", MARGINS, ids=repr)
def test_cdf_is_integral_of_pdf(m):
    lo, _ = _support(m)
    for p in (0.1, 0.5, 0.9):
        x = float(m.quantile(p))
        area, _ = integrate.quad(m.pdf, lo, x, limit=200)
        assert float(m.cdf(x)) == pytest.approx(area, abs=1e-8)


@pytest.mark.parametrize("m", MARGINS, ids=repr)
def test_quantile_roundtrip(m):
    p = np.linspace(0.001, 0.999, 101)
    assert np.allclose(m.cdf(m.quantile(p)), p, atol=1e-11)


def test_scipy_agreement():
    x = np.linspace(0.01, 0.99, 30)
    assert np.allclose(mg.Beta(2.5, 1.5).logpdf(x), stats.beta(2.5, 1.5).logpdf(x), atol=1e-12)
    assert np.allclose(mg.Normal(1.0, 2.0).cdf(x), stats.norm(1.0, 2.0).cdf(x), atol=1e-14)


def test_gb3_with_unit_lambda_is_beta():
    x = np.linspace(0.01, 0.99, 50)
    g, b = mg.GB3(2.2, 3.1, 1.0), mg.Beta(2.2, 3.1)
    assert np.allclose(g.logpdf(x), b.logpdf(x), atol=1e-13)
    assert np.allclose(g.cdf(x), b.cdf(x), atol=1e-14)


def test_gb3_is_transformed_beta():
    # Y = X / (lam + (1 - lam) X) with X ~ Beta(a, b)
    a, b, lam = 2.0, 3.0, 0.4
    rng = np.random.default_rng(1)
    xb = rng.beta(a, b, size=20000)
    y = xb / (lam + (1 - lam) * xb)
    ks = stats.kstest(y, mg.GB3(a, b, lam).cdf)
    assert ks.pvalue > 0.01


def test_invalid_parameters():
    with pytest.raises(ValueError):
        mg.Normal(0.0, -1.0)
    with pytest.raises(ValueError):
        mg.Beta(0.0, 1.0)
    with pytest.raises(ValueError):
        mg.GB3(1.0, 1.0, 1.5)


def test_outside_support_is_minus_infinity():
    assert mg.Beta(2.0, 2.0).logpdf(np.array([1.2]))[0] == -np.inf
    assert mg.GB3(2.0, 2.0, 0.5).logpdf(np.array([-0.1]))[0] == -np.inf


@pytest.mark.parametrize("family,truth", [("Normal", mg.Normal(2.0, 0.5)), ("Beta", mg.Beta(4.0, 2.0)), ("GB3", mg.GB3(2.5, 2.5, 0.3))])
def test_fit_margin_recovers_parameters(family, truth):
    x = truth.quantile(np.random.default_rng(7).random(5000))
    fit = mg.fit_margin(family, x)
    z = (np.array(fit.margin.params) - np.array(truth.params)) / fit.pse
    assert np.all(np.abs(z) < 4.0)
    assert fit.loglik == pytest.approx(float(np.sum(fit.margin.logpdf(x))))
    assert fit.aic == pytest.approx(2 * fit.k - 2 * fit.loglik)


def test_normal_fit_is_closed_form():
    x = np.random.default_rng(3).normal(1.0, 2.0, 500)
    fit = mg.fit_margin("Normal", x)
    assert fit.margin.mu == pytest.approx(x.mean())
    assert fit.margin.sigma == pytest.approx(x.std())


def test_fit_margin_errors():
    with pytest.raises(ValueError):
        mg.fit_margin("Beta", [])
    with pytest.raises(ValueError):
        mg.fit_margin("Beta", [0.2, np.nan])
    with pytest.raises((ValueError, KeyError)):
        mg.fit_margin("Weibull", [0.2, 0.3])


def test_margin_dict_roundtrip():
    for m in MARGINS:
        assert mg.margin_from_dict(m.to_dict()) == m


def test_unconstrained_roundtrip():
    for m in MARGINS:
        back = mg.from_unconstrained(m, mg.to_unconstrained(m))
        assert np.allclose(back.params, m.params, rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    a=st.floats(0.3, 20.0),
    b=st.floats(0.3, 20.0),
    lam=st.floats(0.05, 1.0),
    p=st.floats(1e-6, 1 - 1e-6),
)
def test_gb3_quantile_roundtrip_property(a, b, lam, p):
    m = mg.GB3(a, b, lam)
    q = float(m.quantile(p))
    # near the ends the representable spacing of q itself limits the roundtrip
    tol = 1e-9 + 4.0 * float(m.pdf(q)) * max(np.spacing(q), np.spacing(1.0 - q))
    assert float(m.cdf(q)) == pytest.approx(p, abs=tol)


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(-5, 5), sigma=st.floats(0.05, 10), x=st.floats(-20, 20))
def test_normal_logpdf_property(mu, sigma, x):
    assert float(mg.Normal(mu, sigma).logpdf(x)) == pytest.approx(stats.norm(mu, sigma).logpdf(x), abs=1e-10)


def test_convergence_error_is_runtime_error():
    e = ConvergenceError("boom", np.zeros(2), 1.0, "stage")
    assert isinstance(e, RuntimeError) and e.stage == "stage" and math.isfinite(e.grad_norm)
