"""Parametric univariate margins: Normal, Beta and the generalized beta GB3.

GB3(a, b, lam) is the law of ``Y = X / (lam + (1 - lam) X)`` for ``X ~ Beta(a, b)``.
Its cdf and quantile go through that monotone map, so no numerical integration is
needed anywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from hiercop._numeric import TRANSFORMS, ConvergenceError, num_grad, num_hessian


class Margin:
    """Base class. Subclasses are frozen dataclasses whose fields are the parameters."""

    family: str = ""
    param_names: tuple = ()
    transforms: tuple = ()
    support: tuple = (-math.inf, math.inf)

    @property
    def params(self):
        return tuple(getattr(self, n) for n in self.param_names)

    def with_params(self, params):
        return type(self)(*[float(p) for p in params])

    def _finite(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{self.family}: non-finite argument")
        return x

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def loglik(self, x):
        """Per-observation log-likelihood (alias of :meth:`logpdf`)."""
        return self.logpdf(x)

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if not np.all((p > 0.0) & (p < 1.0)):
            raise ValueError("quantile: probabilities must lie in (0, 1)")
        return self._ppf(p)

    ppf = quantile

    def to_dict(self):
        return {"family": self.family, "params": [float(p) for p in self.params]}

    def __repr__(self):
        args = ", ".join(f"{n}={v:.6g}" for n, v in zip(self.param_names, self.params))
        return f"{type(self).__name__}({args})"


@dataclass(frozen=True, repr=False)
class Normal(Margin):
    mu: float = 0.0
    sigma: float = 1.0

    family = "Normal"
    param_names = ("mu", "sigma")
    transforms = ("identity", "log")

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("Normal: sigma must be positive")

    def logpdf(self, x):
        z = (self._finite(x) - self.mu) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - 0.5 * math.log(2.0 * math.pi)

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def _ppf(self, p):
        return self.mu + self.sigma * special.ndtri(p)


@dataclass(frozen=True, repr=False)
class Beta(Margin):
    a: float = 1.0
    b: float = 1.0

    family = "Beta"
    param_names = ("a", "b")
    transforms = ("log", "log")
    support = (0.0, 1.0)

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("Beta: shape parameters must be positive")

    def logpdf(self, x):
        x = self._finite(x)
        inside = (x > 0.0) & (x < 1.0)
        xs = np.where(inside, x, 0.5)
        lp = (self.a - 1.0) * np.log(xs) + (self.b - 1.0) * np.log1p(-xs) - special.betaln(self.a, self.b)
        return np.where(inside, lp, -np.inf)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        return special.betainc(self.a, self.b, x)

    def _ppf(self, p):
        return special.betaincinv(self.a, self.b, p)


@dataclass(frozen=True, repr=False)
class GB3(Margin):
    a: float = 1.0
    b: float = 1.0
    lam: float = 1.0

    family = "GB3"
    param_names = ("a", "b", "lambda")
    transforms = ("log", "log", "logit")
    support = (0.0, 1.0)

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and 0 < self.lam <= 1):
            raise ValueError("GB3: need a > 0, b > 0 and 0 < lambda <= 1")

    @property
    def params(self):
        return (self.a, self.b, self.lam)

    def _to_beta(self, y):
        return self.lam * y / (1.0 - (1.0 - self.lam) * y)

    def logpdf(self, x):
        y = self._finite(x)
        inside = (y > 0.0) & (y < 1.0)
        ys = np.where(inside, y, 0.5)
        a, b, lam = self.a, self.b, self.lam
        lp = (
            a * math.log(lam)
            - special.betaln(a, b)
            + (a - 1.0) * np.log(ys)
            + (b - 1.0) * np.log1p(-ys)
            - (a + b) * np.log1p(-(1.0 - lam) * ys)
        )
        return np.where(inside, lp, -np.inf)

    def cdf(self, x):
        y = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        return special.betainc(self.a, self.b, self._to_beta(y))

    def _ppf(self, p):
        x = special.betaincinv(self.a, self.b, p)
        return x / (self.lam + (1.0 - self.lam) * x)


FAMILIES = {"Normal": Normal, "Beta": Beta, "GB3": GB3}


def make_margin(family, params=None):
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown margin family {family!r}") from None
    if params is None:
        return cls()
    return cls(*[float(p) for p in params])


def margin_from_dict(d):
    return make_margin(d["family"], d.get("params"))


def to_unconstrained(margin):
    return np.array([TRANSFORMS[t][0](p) for t, p in zip(margin.transforms, margin.params)], dtype=float)


def from_unconstrained(margin, z):
    return margin.with_params([TRANSFORMS[t][1](zi) for t, zi in zip(margin.transforms, z)])


@dataclass
class MarginFit:
    margin: Margin
    loglik: float
    pse: np.ndarray
    n: int
    converged: bool = True
    notes: list = field(default_factory=list)

    @property
    def k(self):
        return len(self.margin.params)

    @property
    def aic(self):
        return 2.0 * self.k - 2.0 * self.loglik


def _beta_moments(x):
    m = float(np.mean(x))
    v = float(np.var(x))
    common = m * (1.0 - m) / max(v, 1e-12) - 1.0
    if common <= 0:
        common = 1.0
    return max(m * common, 1e-2), max((1.0 - m) * common, 1e-2)


def _natural_pse(nll, margin):
    H = num_hessian(nll, np.asarray(margin.params, dtype=float))
    try:
        cov = np.linalg.inv(H)
        d = np.diag(cov)
        return np.sqrt(np.where(d > 0, d, np.nan))
    except np.linalg.LinAlgError:
        return np.full(len(margin.params), np.nan)


def _minimize(fun, z0, stage):
    res = optimize.minimize(fun, z0, method="BFGS", jac=lambda z: num_grad(fun, z), options={"maxiter": 500, "gtol": 1e-7})
    gnorm = float(np.max(np.abs(num_grad(fun, res.x))))
    if not np.isfinite(res.fun) or (not res.success and gnorm > 1e-3 * (1.0 + abs(res.fun))):
        raise ConvergenceError(f"{stage}: optimizer did not converge ({res.message})", res.x, gnorm, stage)
    return res


def fit_margin(family, sample):
    """Maximum likelihood fit of one margin to an i.i.d. sample.

    Returns a :class:`MarginFit` whose ``pse`` come from the inverse observed
    information of the i.i.d. likelihood; clustering is ignored on purpose.
    """
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("fit_margin: empty sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("fit_margin: non-finite values")
    n = x.size
    if family == "Normal":
        mu = float(np.mean(x))
        sigma = float(np.sqrt(np.mean((x - mu) ** 2)))
        m = Normal(mu, sigma)
        pse = np.array([sigma / math.sqrt(n), sigma / math.sqrt(2.0 * n)])
        return MarginFit(m, float(np.sum(m.logpdf(x))), pse, n)

    if family not in ("Beta", "GB3"):
        raise ValueError(f"unknown margin family {family!r}")
    if not np.all((x > 0.0) & (x < 1.0)):
        raise ValueError(f"fit_margin: {family} data must lie in (0, 1)")

    a0, b0 = _beta_moments(x)
    beta_nll_z = lambda z: -float(np.sum(Beta(math.exp(z[0]), math.exp(z[1])).logpdf(x)))
    res = _minimize(beta_nll_z, np.log([a0, b0]), "Beta margin")
    beta = Beta(*np.exp(res.x))
    beta_ll = -float(res.fun)
    beta_nll = lambda p: -float(np.sum(Beta(*p).logpdf(x))) if np.all(p > 0) else np.inf

    if family == "Beta":
        return MarginFit(beta, beta_ll, _natural_pse(beta_nll, beta), n)

    def gb3_nll_z(z):
        try:
            m = GB3(math.exp(z[0]), math.exp(z[1]), float(special.expit(z[2])))
        except ValueError:
            return np.inf
        return -float(np.sum(m.logpdf(x)))

    best = None
    for lam0 in (0.3, 0.7):
        try:
            r = _minimize(gb3_nll_z, np.array([math.log(beta.a), math.log(beta.b), special.logit(lam0)]), "GB3 margin")
        except ConvergenceError:
            continue
        if best is None or r.fun < best.fun:
            best = r
    # lambda = 1 is the Beta boundary; stop there when the interior does no better
    if best is None or -best.fun <= beta_ll + 1e-8 or special.expit(best.x[2]) > 1.0 - 1e-6:
        m = GB3(beta.a, beta.b, 1.0)
        pse = np.append(_natural_pse(beta_nll, beta), np.nan)
        return MarginFit(m, beta_ll, pse, n, notes=["lambda at boundary 1; no pse"])
    m = GB3(math.exp(best.x[0]), math.exp(best.x[1]), float(special.expit(best.x[2])))
    nll = lambda p: -float(np.sum(GB3(*p).logpdf(x))) if (p[0] > 0 and p[1] > 0 and 0 < p[2] <= 1) else np.inf
    return MarginFit(m, -float(best.fun), _natural_pse(nll, m), n)
