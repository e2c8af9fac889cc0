"""Exchangeable copula families {c_{1,1:n}} for within-cluster dependence.

Used twice in the model: for the covariates (``c1``) and for the regression
residuals ``W = C_{2|1}(V | U)`` (``c3``). Densities are evaluated in log space and
can be summed cluster-wise over a flat array through ``logpdf_grouped``.

Archimedean members use closed-form n-th generator derivatives:

* Clayton, ``psi(t) = (1 + d t)**(-1/d)``: ``|psi^(n)| = prod_{k<n}(1 + k d) (1 + d t)**(-1/d - n)``
* Frank, ``psi(t) = -log(1 - (1 - e^-d) e^-t) / d``: ``|psi^(n)| = Li_{1-n}(z) / d`` with
  ``z = (1 - e^-d) e^-t``; the negative-order polylogarithm is a positive Eulerian-number
  polynomial, summed in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from hiercop._numeric import TRANSFORMS, check_open01
from hiercop.bivariate import frank_delta, frank_tau

#: Archimedean densities are supported up to this cluster size.
MAX_ARCHIMEDEAN_N = 64


def group_sum(values, starts):
    """Sum a flat array over contiguous clusters beginning at ``starts``."""
    return np.add.reduceat(values, starts)


class ExchangeableCopula:
    family = ""
    param_names: tuple = ()
    transforms: tuple = ()

    @property
    def params(self):
        return tuple(float(getattr(self, n)) for n in self.param_names)

    def with_params(self, params):
        return type(self)(*[float(p) for p in params])

    def to_unconstrained(self):
        return np.array([TRANSFORMS[t][0](p) for t, p in zip(self.transforms, self.params)], dtype=float)

    def from_unconstrained(self, z):
        return self.with_params([TRANSFORMS[t][1](zi) for t, zi in zip(self.transforms, z)])

    def to_dict(self):
        return {"family": self.family, "params": list(self.params)}

    def logpdf(self, w):
        """Log density of one cluster's vector ``w``."""
        w = np.atleast_1d(np.asarray(w, dtype=float))
        check_open01(f"{self.family}.logpdf", w)
        return float(self.logpdf_grouped(w, np.array([0]), np.array([w.size]))[0])

    def pdf(self, w):
        return math.exp(self.logpdf(w))

    def conditional_logpdf(self, history, w):
        """Log density of the next coordinate given the first ``n - 1`` (vectorized in ``w``)."""
        history = np.asarray(history, dtype=float).ravel()
        w = np.atleast_1d(np.asarray(w, dtype=float))
        check_open01(f"{self.family}.conditional_logpdf", w)
        if history.size:
            check_open01(f"{self.family}.conditional_logpdf", history)
        n = history.size + 1
        flat = np.concatenate([np.tile(history, (w.size, 1)), w[:, None]], axis=1).ravel()
        starts = np.arange(w.size) * n
        joint = self.logpdf_grouped(flat, starts, np.full(w.size, n))
        marg = self.logpdf(history) if history.size else 0.0
        return joint - marg

    def conditional_pdf(self, history, w):
        return np.exp(self.conditional_logpdf(history, w))

    def sample(self, n, rng):
        return self.sample_clusters(np.array([n]), rng)

    def __repr__(self):
        args = ", ".join(f"{n}={v:.6g}" for n, v in zip(self.param_names, self.params))
        return f"{type(self).__name__}({args})"


@dataclass(frozen=True, repr=False)
class IndependenceEx(ExchangeableCopula):
    family = "Independence"

    def logpdf_grouped(self, w, starts, sizes):
        return np.zeros(len(sizes))

    def sample_clusters(self, sizes, rng):
        return _open(rng.random(int(np.sum(sizes))))

    def tau(self):
        return 0.0


@dataclass(frozen=True, repr=False)
class NormalEx(ExchangeableCopula):
    """Gaussian copula with exchangeable correlation matrix ``(1 - rho) I + rho J``."""

    rho: float = 0.0

    family = "Normal"
    param_names = ("rho",)
    transforms = ("logit",)

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("NormalEx: rho must lie in [0, 1)")

    def logpdf_grouped(self, w, starts, sizes):
        z = special.ndtri(w)
        return self._logpdf_scores(group_sum(z, starts), group_sum(z * z, starts), np.asarray(sizes, dtype=float))

    def _logpdf_scores(self, s1, s2, n):
        r = self.rho
        if r == 0.0:
            return np.zeros_like(s1)
        a = 1.0 + (n - 1.0) * r
        logdet = (n - 1.0) * math.log1p(-r) + np.log(a)
        quad = (s2 - r * s1 * s1 / a) / (1.0 - r)
        # a single unit carries no dependence; avoid rounding noise there
        return np.where(n == 1.0, 0.0, -0.5 * logdet - 0.5 * (quad - s2))

    def sample_clusters(self, sizes, rng):
        sizes = np.asarray(sizes)
        a = rng.standard_normal(sizes.size)
        e = rng.standard_normal(int(sizes.sum()))
        z = math.sqrt(self.rho) * np.repeat(a, sizes) + math.sqrt(1.0 - self.rho) * e
        return _open(special.ndtr(z))

    def conditional_moments(self, history):
        return conditional_moments_normal(self.rho, history)

    def correlation_matrix(self, n):
        return (1.0 - self.rho) * np.eye(n) + self.rho * np.ones((n, n))

    def tau(self):
        return 2.0 / math.pi * math.asin(self.rho)

    @classmethod
    def from_tau(cls, tau):
        if not 0.0 <= tau < 1.0:
            raise ValueError("NormalEx: tau must lie in [0, 1)")
        return cls(math.sin(math.pi * tau / 2.0))


def conditional_moments_normal(rho, history):
    """Mean and sd of Phi^-1(W_n) given W_1..W_{n-1} under an exchangeable normal copula."""
    h = np.asarray(history, dtype=float).ravel()
    k = h.size
    if k == 0:
        return 0.0, 1.0
    check_open01("conditional_moments_normal", h)
    zbar = float(np.mean(special.ndtri(h)))
    den = 1.0 + (k - 1.0) * rho
    mu0 = k * rho * zbar / den
    var0 = (1.0 - rho) * (1.0 + k * rho) / den
    return mu0, math.sqrt(var0)


def _check_archimedean_sizes(sizes, family):
    if np.max(sizes) > MAX_ARCHIMEDEAN_N:
        raise ValueError(f"{family}Ex density supports cluster sizes up to {MAX_ARCHIMEDEAN_N}")


@dataclass(frozen=True, repr=False)
class ClaytonEx(ExchangeableCopula):
    delta: float = 1.0

    family = "Clayton"
    param_names = ("delta",)
    transforms = ("log",)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("ClaytonEx: delta must be positive")

    def logpdf_grouped(self, w, starts, sizes):
        sizes = np.asarray(sizes)
        _check_archimedean_sizes(sizes, "Clayton")
        d = self.delta
        lw = np.log(w)
        # 1 + d * sum psi^-1(w_j), with psi^-1(w) = (w^-d - 1) / d
        s = group_sum(np.expm1(-d * lw), starts)
        coef = np.cumsum(np.log1p(d * np.arange(MAX_ARCHIMEDEAN_N)))
        return coef[sizes - 1] - (1.0 / d + sizes) * np.log1p(s) - (d + 1.0) * group_sum(lw, starts)

    def sample_clusters(self, sizes, rng):
        sizes = np.asarray(sizes)
        m = rng.gamma(1.0 / self.delta, 1.0, size=sizes.size)
        e = rng.standard_exponential(int(sizes.sum()))
        return _open(np.exp(-np.log1p(e / np.repeat(m, sizes)) / self.delta))

    def tau(self):
        return self.delta / (self.delta + 2.0)

    @classmethod
    def from_tau(cls, tau):
        if not 0.0 < tau < 1.0:
            raise ValueError("ClaytonEx: tau must lie in (0, 1)")
        return cls(2.0 * tau / (1.0 - tau))


@lru_cache(maxsize=None)
def _log_eulerian_row(s):
    """log A(s, k) for k = 0..s-1 (A(0, 0) := 1)."""
    if s == 0:
        return np.array([0.0])
    row = [1]
    for n in range(2, s + 1):
        new = [0] * n
        for k in range(n):
            left = row[k] if k < n - 1 else 0
            right = row[k - 1] if k >= 1 else 0
            new[k] = (k + 1) * left + (n - k) * right
        row = new
    return np.array([math.log(a) for a in row])


def log_polylog_neg(s, logz):
    """log Li_{-s}(z) for integer s >= 0 and 0 < z < 1, vectorized in ``logz``."""
    logz = np.asarray(logz, dtype=float)
    shape = logz.shape
    logz = logz.ravel()
    la = _log_eulerian_row(s)
    k = np.arange(la.size)
    terms = la[:, None] + k[:, None] * logz[None, :]
    log1mz = np.log(-np.expm1(logz))
    return (logz + special.logsumexp(terms, axis=0) - (s + 1.0) * log1mz).reshape(shape)


@dataclass(frozen=True, repr=False)
class FrankEx(ExchangeableCopula):
    delta: float = 1.0

    family = "Frank"
    param_names = ("delta",)
    transforms = ("log",)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("FrankEx: delta must be positive")

    def logpdf_grouped(self, w, starts, sizes):
        sizes = np.asarray(sizes)
        _check_archimedean_sizes(sizes, "Frank")
        d = self.delta
        log_phi = math.log(-math.expm1(-d))
        log_a = np.log(-np.expm1(-d * w))
        sum_log_a = group_sum(log_a, starts)
        sum_w = group_sum(w, starts)
        logz = (1.0 - sizes) * log_phi + sum_log_a
        logz = np.minimum(logz, -1e-300)
        out = np.empty(sizes.size)
        for n in np.unique(sizes):
            sel = sizes == n
            out[sel] = log_polylog_neg(int(n) - 1, logz[sel])
        return out + (sizes - 1.0) * math.log(d) - d * sum_w - sum_log_a

    def sample_clusters(self, sizes, rng):
        sizes = np.asarray(sizes)
        d = self.delta
        p = -math.expm1(-d)
        m = rng.logseries(p, size=sizes.size).astype(float)
        e = rng.standard_exponential(int(sizes.sum()))
        t = e / np.repeat(m, sizes)
        # psi(t) = -log(1 - p e^-t) / d
        return _open(-np.log1p(-p * np.exp(-t)) / d)

    def tau(self):
        return frank_tau(self.delta)

    @classmethod
    def from_tau(cls, tau):
        if not 0.0 < tau < 1.0:
            raise ValueError("FrankEx: tau must lie in (0, 1)")
        return cls(frank_delta(tau))


def _open(u):
    return np.clip(u, 1e-16, 1.0 - 1e-16)


FAMILIES = {
    "Independence": IndependenceEx,
    "Normal": NormalEx,
    "Clayton": ClaytonEx,
    "Frank": FrankEx,
}


def make_exchangeable(d):
    fam = d["family"]
    if fam == "Gumbel":
        raise ValueError("Gumbel exchangeable copulas are not supported for clusters larger than 2")
    try:
        cls = FAMILIES[fam]
    except KeyError:
        raise ValueError(f"unknown exchangeable copula family {fam!r}") from None
    params = d.get("params")
    if params is None or fam == "Independence":
        return cls()
    return cls(*[float(p) for p in params])
