"""Cluster-specific prediction of ``Y`` for a new unit with covariate ``x``.

Given the residual history ``w_1..w_{n-1}`` of a cluster and a NormalEx ``c3``, the
normal score ``Phi^-1(W_n)`` is ``N(mu0, sigma0^2)``; every predictive quantity follows
by pushing that law through ``y = G^-1(h^-1(Phi(z) | F(x)))``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from hiercop import exchangeable as exch
from hiercop._numeric import check_open01, clip01
from hiercop.model import pseudo_observations, HierarchicalDataset

DEFAULT_NODES = 30
MIN_NODES = 5


@dataclass(frozen=True)
class PredictionContext:
    spec: object
    mu0: float = 0.0
    sigma0: float = 1.0
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    approximate: bool = False

    @classmethod
    def from_cluster(cls, model, x_hist=(), y_hist=()):
        """Context from a cluster's observed pairs (empty history gives the marginal regression)."""
        spec = getattr(model, "spec", model)
        x_hist = np.atleast_1d(np.asarray(x_hist, dtype=float))
        y_hist = np.atleast_1d(np.asarray(y_hist, dtype=float))
        if x_hist.shape != y_hist.shape:
            raise ValueError("x and y histories differ in length")
        if x_hist.size:
            data = HierarchicalDataset(x_hist, y_hist, [x_hist.size])
            w = pseudo_observations(spec, data).w
        else:
            w = np.zeros(0)
        c3 = spec.c3
        if isinstance(c3, exch.NormalEx):
            mu0, s0 = exch.conditional_moments_normal(c3.rho, w)
            return cls(spec, mu0, s0, w, False)
        if isinstance(c3, exch.IndependenceEx) or w.size == 0:
            return cls(spec, 0.0, 1.0, w, False)
        return cls(spec, math.nan, math.nan, w, True)

    @classmethod
    def from_moments(cls, model, mu0, sigma0):
        spec = getattr(model, "spec", model)
        if not math.isfinite(mu0):
            raise ValueError("mu0 must be finite")
        if not 0.0 < sigma0 <= 1.0:
            raise ValueError("sigma0 must lie in (0, 1]")
        return cls(spec, float(mu0), float(sigma0))

    # -- internals ---------------------------------------------------------------
    def _y_of_score(self, z, x):
        """``G^-1(h^-1(Phi(z) | F(x)))``, broadcasting ``z`` against ``x``."""
        spec = self.spec
        u = clip01(spec.marginX.cdf(x))
        t = clip01(special.ndtr(z))
        t, u = np.broadcast_arrays(t, u)
        v = clip01(spec.c2._hinv(t, u), 1e-15)
        return spec.marginY.quantile(v)

    def _y_of_w(self, w, x):
        spec = self.spec
        u = clip01(spec.marginX.cdf(x))
        t, u = np.broadcast_arrays(clip01(w), u)
        return spec.marginY.quantile(clip01(spec.c2._hinv(t, u), 1e-15))

    def _conditional_w_cdf(self, nodes=400):
        """Tabulated cdf of ``W_n`` given the history (non-normal ``c3``)."""
        x, wt = np.polynomial.legendre.leggauss(nodes)
        grid = np.linspace(0.0, 1.0, 201)
        cdf = np.zeros_like(grid)
        for k in range(1, grid.size):
            a, b = grid[k - 1], grid[k]
            pts = a + (b - a) * 0.5 * (x + 1.0)
            cdf[k] = cdf[k - 1] + 0.5 * (b - a) * np.sum(wt * self.spec.c3.conditional_pdf(self.history, pts))
        return grid, cdf / cdf[-1]


def gauss_hermite(nodes=DEFAULT_NODES):
    """Nodes and weights for ``E f(Z)``, ``Z ~ N(0, 1)``."""
    if nodes < MIN_NODES:
        raise ValueError(f"Gauss-Hermite needs at least {MIN_NODES} nodes")
    t, w = np.polynomial.hermite.hermgauss(nodes)
    return math.sqrt(2.0) * t, w / math.sqrt(math.pi)


def predictive_mean(ctx, x_new, nodes=DEFAULT_NODES, mc_draws=20000, rng=None):
    """Conditional expectation of ``Y`` at ``x_new`` (vectorized in ``x_new``).

    Exact Gauss-Hermite rule for a NormalEx ``c3``. Other residual families use
    self-normalized Monte Carlo over the conditional density and return ``(mean, se)``.
    """
    x = np.asarray(x_new, dtype=float)
    if not ctx.approximate:
        z, w = gauss_hermite(nodes)
        y = ctx._y_of_score(ctx.mu0 + ctx.sigma0 * z[:, None], x.ravel()[None, :])
        return (w @ y).reshape(x.shape) if x.ndim else float(w @ y[:, 0])
    warnings.warn("non-normal c3: predictive mean by Monte Carlo, approximate", RuntimeWarning, stacklevel=2)
    rng = np.random.default_rng(0) if rng is None else rng
    ws = clip01(rng.random(mc_draws))
    dens = ctx.spec.c3.conditional_pdf(ctx.history, ws)
    y = ctx._y_of_w(ws[:, None], x.ravel()[None, :])
    wt = dens / dens.sum()
    mean = wt @ y
    se = np.sqrt(np.sum(wt[:, None] ** 2 * (y - mean) ** 2, axis=0))
    if not x.ndim:
        return float(mean[0]), float(se[0])
    return mean.reshape(x.shape), se.reshape(x.shape)


def predictive_density(ctx, x_new, y):
    """Predictive density of ``Y`` at ``y`` for a unit with covariate ``x_new``."""
    spec = ctx.spec
    y = np.asarray(y, dtype=float)
    v = spec.marginY.cdf(y)
    check_open01("predictive_density", v)
    u = clip01(spec.marginX.cdf(np.asarray(x_new, dtype=float)))
    base = np.exp(spec.marginY.logpdf(y) + spec.c2._logpdf(u, v))
    s = clip01(spec.c2._h1(u, v))
    if ctx.approximate:
        return base * spec.c3.conditional_pdf(ctx.history, np.ravel(s)).reshape(np.shape(s))
    q = special.ndtri(s)
    m0, s0 = ctx.mu0, ctx.sigma0
    return base / s0 * np.exp(-((q - m0) ** 2) / (2.0 * s0 * s0) + 0.5 * q * q)


def predictive_density_ratio(ctx, x_new, y):
    """Same density written as ``g c2 * c3_n(w_hist, w) / c3_{n-1}(w_hist)``.

    Needs a context built from an observed history.
    """
    spec = ctx.spec
    y = np.atleast_1d(np.asarray(y, dtype=float))
    v = spec.marginY.cdf(y)
    check_open01("predictive_density_ratio", v)
    u = clip01(spec.marginX.cdf(float(x_new)))
    s = clip01(spec.c2._h1(u, v))
    cond = spec.c3.conditional_pdf(ctx.history, s)
    return np.exp(spec.marginY.logpdf(y) + spec.c2._logpdf(u, v)) * cond


def predictive_quantile(ctx, x_new, p):
    """Quantile of the predictive law (vectorized in ``x_new`` and ``p``)."""
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise ValueError("predictive_quantile: p must lie in (0, 1)")
    if not ctx.approximate:
        return ctx._y_of_score(ctx.mu0 + ctx.sigma0 * special.ndtri(p), np.asarray(x_new, dtype=float))
    grid, cdf = ctx._conditional_w_cdf()
    t = np.array([optimize.brentq(lambda s: np.interp(s, grid, cdf) - pk, 0.0, 1.0, xtol=1e-14) for pk in p.ravel()])
    return ctx._y_of_w(t.reshape(p.shape), np.asarray(x_new, dtype=float))


def prediction_interval(ctx, x_new, level=0.95):
    """Equal-tailed interval ``(q(a/2), q(1 - a/2))`` with ``a = 1 - level``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    a = 0.5 * (1.0 - level)
    return predictive_quantile(ctx, x_new, a), predictive_quantile(ctx, x_new, 1.0 - a)


def quantile_column(p):
    """Column label for a quantile level, e.g. 0.025 -> ``q025``, 0.5 -> ``q500``."""
    return "q" + f"{p:.3f}"[2:] if p < 1 else "q1000"


def prediction_curve(ctx, x_grid, quantiles=(0.025, 0.5, 0.975), nodes=DEFAULT_NODES):
    """Dict of columns: ``x``, ``mean`` and one ``qNNN`` column per quantile."""
    x = np.asarray(x_grid, dtype=float).ravel()
    out = {"x": x}
    mean = predictive_mean(ctx, x, nodes=nodes)
    out["mean"] = mean[0] if isinstance(mean, tuple) else mean
    for p in quantiles:
        out[quantile_column(p)] = predictive_quantile(ctx, x, np.full(x.size, p))
    return out


def population_fan(model, x_grid, probs=(0.1, 0.5, 0.9), n=21, basis="finite_n", nodes=DEFAULT_NODES):
    """Predictive mean curves for clusters at quantiles of the between-cluster effect.

    ``basis="finite_n"`` takes quantiles of the average residual score of ``n - 1``
    observed units and maps them to ``(mu0, sigma0)``; ``basis="limit"`` uses the
    large-``n`` approximation ``mu0 ~ N(0, rho3)``, ``sigma0^2 = 1 - rho3``. The two
    agree as ``n`` grows. Returns ``{prob: mean_curve}``.
    """
    spec = getattr(model, "spec", model)
    if not isinstance(spec.c3, exch.NormalEx):
        raise ValueError("population_fan needs a NormalEx c3")
    r = spec.c3.rho
    curves = {}
    for p in probs:
        if basis == "finite_n":
            k = n - 1
            zbar = math.sqrt((1.0 + (k - 1.0) * r) / k) * special.ndtri(p)
            den = 1.0 + (k - 1.0) * r
            mu0 = k * r * zbar / den
            s0 = math.sqrt((1.0 - r) * (1.0 + k * r) / den)
        elif basis == "limit":
            mu0 = math.sqrt(r) * special.ndtri(p)
            s0 = math.sqrt(1.0 - r)
        else:
            raise ValueError("basis must be 'finite_n' or 'limit'")
        ctx = PredictionContext.from_moments(spec, mu0, s0)
        curves[p] = predictive_mean(ctx, x_grid, nodes=nodes)
    return curves
