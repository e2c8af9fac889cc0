import json

import numpy as np
import pytest

from hiercop import bivariate as biv
from hiercop import exchangeable as ex
from hiercop import margins as mg
from hiercop.estimation import (
    FittedModel,
    aic,
    cluster_bootstrap_se,
    fit_ifm,
    fit_mle,
    likelihood_ratio_test,
    lr_pvalue,
)
from hiercop.model import ModelSpec, full_log_likelihood, simulate

TRUTH = ModelSpec(mg.Normal(0.0, 1.0), mg.Normal(0.0, 1.0), ex.NormalEx(0.31), biv.Clayton(1.33), ex.NormalEx(0.16))
KHOU = ModelSpec(
    mg.Beta(4.0, 2.0),
    mg.Beta(2.5, 2.5),
    ex.NormalEx(0.2),
    biv.Khoudraji(biv.Normal(0.7), 0.8, 1.0),
    ex.NormalEx(0.2),
    frozenset({"c2.kappa2"}),
)


@pytest.fixture(scope="module")
def data():
    return simulate(TRUTH, np.full(50, 18), np.random.default_rng(2024))


@pytest.fixture(scope="module")
def fits(data):
    ifm, trace = fit_ifm(TRUTH, data)
    mle = fit_mle(TRUTH, data, init=ifm)
    return ifm, trace, mle


def test_mle_loglik_at_least_ifm(fits, data):
    ifm, _, mle = fits
    assert mle.loglik >= ifm.loglik - 1e-8
    assert mle.loglik == pytest.approx(full_log_likelihood(mle.spec, data))


def test_mle_recovers_truth(fits):
    _, _, mle = fits
    z = (mle.estimates - TRUTH.natural()) / mle.se
    assert np.all(np.isfinite(mle.se)) and np.all(np.abs(z) < 4)


def test_ifm_trace_and_standard_errors(fits):
    ifm, trace, _ = fits
    stages = [s["component"] for s in trace.stages]
    assert stages[:2] == ["marginX", "marginY"] and stages[2] == "c2"
    assert set(stages) == {"marginX", "marginY", "c1", "c2", "c3"}
    assert np.all(np.isfinite(ifm.se))
    assert np.allclose(ifm.vcov, np.diag(ifm.se**2))


def test_natural_and_transformed_coordinates_agree(fits, data):
    _, _, mle = fits
    nat = fit_mle(TRUTH, data, init=mle, coords="natural", compute_vcov=False)
    assert nat.loglik == pytest.approx(mle.loglik, abs=1e-4)
    assert np.allclose(nat.estimates, mle.estimates, atol=5e-3)


def test_fixed_parameters_stay_fixed():
    d = simulate(KHOU, np.full(20, 10), np.random.default_rng(3))
    ifm, _ = fit_ifm(KHOU, d, compute_se=False)
    assert ifm.spec.c2.kappa2 == 1.0 and "c2.kappa2" not in ifm.param_names
    mle = fit_mle(KHOU, d, init=ifm, compute_vcov=False)
    assert mle.spec.c2.kappa2 == 1.0


def test_likelihood_ratio_test_nested():
    d = simulate(KHOU, np.full(20, 10), np.random.default_rng(4))
    nested = fit_mle(KHOU, d, compute_vcov=False)
    c2 = nested.spec.c2
    # the full model frees kappa2; start it next to the nested optimum
    start = ModelSpec(
        nested.spec.marginX, nested.spec.marginY, nested.spec.c1,
        biv.Khoudraji(c2.base, c2.kappa1, 0.99), nested.spec.c3,
    )
    full = fit_mle(start, d, init=start, compute_vcov=False)
    chi2, df, p = likelihood_ratio_test(full, nested)
    assert df == 1 and chi2 >= 0.0 and 0.0 <= p <= 1.0
    assert full.loglik >= nested.loglik - 1e-6


def test_likelihood_ratio_test_rejects_non_nested(fits):
    ifm, _, mle = fits
    other = FittedModel(TRUTH.with_component("c2", biv.Frank(3.0)), "mle", mle.loglik, mle.se, mle.vcov)
    with pytest.raises(ValueError):
        likelihood_ratio_test(mle, other)


def test_lr_pvalue_and_aic():
    assert lr_pvalue(8.2, 1)[2] == pytest.approx(0.00419, abs=1e-5)
    assert lr_pvalue(-1e-9, 1)[0] == 0.0
    assert aic(-10.0, 3) == 26.0
    with pytest.raises(ValueError):
        aic(-10.0, 0)


def test_fitted_model_json_roundtrip(fits):
    _, _, mle = fits
    d = json.loads(json.dumps(mle.to_dict(), allow_nan=False))
    back = FittedModel.from_dict(d)
    assert back.spec == mle.spec and back.loglik == mle.loglik
    assert np.allclose(back.vcov, mle.vcov)


def test_identifiability_and_argument_errors():
    d = simulate(TRUTH, np.ones(40, dtype=int), np.random.default_rng(0))
    with pytest.raises(ValueError):
        fit_ifm(TRUTH, d)
    fixed_margin = ModelSpec(TRUTH.marginX, TRUTH.marginY, TRUTH.c1, TRUTH.c2, TRUTH.c3, frozenset({"marginX.mu"}))
    d2 = simulate(TRUTH, np.full(10, 5), np.random.default_rng(0))
    with pytest.raises(ValueError):
        fit_ifm(fixed_margin, d2)
    with pytest.raises(ValueError):
        fit_mle(TRUTH, d2, coords="polar")


def test_bootstrap_guards(data):
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        cluster_bootstrap_se(lambda d: None, data, 20, rng)

    def always_fails(d):
        raise ValueError("no")

    with pytest.raises(RuntimeError):
        cluster_bootstrap_se(always_fails, data, 50, rng)


def test_bootstrap_se_of_a_simple_statistic(data):
    class Mean:
        def __init__(self, d):
            self.estimates = np.array([d.x.mean()])

    se = cluster_bootstrap_se(Mean, data, 200, np.random.default_rng(1))
    cl_means = np.array([data.cluster(i)[0].mean() for i in range(data.m)])
    assert se[0] == pytest.approx(cl_means.std(ddof=1) / np.sqrt(data.m), rel=0.25)
