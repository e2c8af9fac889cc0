"""Bivariate copulas for the unit-level (X, Y) link.

Every family exposes the cdf, the log density, both partial derivatives of the cdf
(``_h1 = dC/du`` and ``_h2 = dC/dv``), the inverse of ``_h1`` in ``v`` and a sampler.
The underscored methods skip argument validation and are what the likelihood code
calls after clipping; the public ones check their inputs.

Two transforms build new families from old ones: :class:`Khoudraji` (asymmetrizing,
``C(u, v) = u**(1-k1) v**(1-k2) D(u**k1, v**k2)``) and :class:`Survival` (the copula of
``(1-U, 1-V)``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from hiercop._numeric import TRANSFORMS, check_open01
from hiercop.kernels import bvn_cdf


class BivariateCopula:
    family = ""
    param_names: tuple = ()
    transforms: tuple = ()
    symmetric = True

    # -- parameters ---------------------------------------------------------------
    @property
    def params(self):
        return tuple(float(getattr(self, n)) for n in self.param_names)

    def with_params(self, params):
        return type(self)(*[float(p) for p in params])

    def to_unconstrained(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            z = np.array([TRANSFORMS[t][0](p) for t, p in zip(self.transforms, self.params)], dtype=float)
        if np.any(np.isnan(z)):
            raise ValueError(f"{self!r}: parameters outside the estimable (positive dependence) range")
        return z

    def from_unconstrained(self, z):
        return self.with_params([TRANSFORMS[t][1](zi) for t, zi in zip(self.transforms, z)])

    def to_dict(self):
        return {"family": self.family, "params": list(self.params)}

    # -- public, validated --------------------------------------------------------
    def cdf(self, u, v):
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        v = np.clip(np.asarray(v, dtype=float), 0.0, 1.0)
        out = self._cdf(np.clip(u, 1e-300, 1.0), np.clip(v, 1e-300, 1.0))
        out = np.where((u == 0.0) | (v == 0.0), 0.0, out)
        out = np.where(u == 1.0, v, out)
        out = np.where(v == 1.0, u, out)
        return np.clip(out, np.maximum(u + v - 1.0, 0.0), np.minimum(u, v))

    def logpdf(self, u, v):
        check_open01(f"{self.family}.logpdf", u, v)
        return self._logpdf(np.asarray(u, dtype=float), np.asarray(v, dtype=float))

    def pdf(self, u, v):
        return np.exp(self.logpdf(u, v))

    def hfunc(self, v, u):
        """Conditional cdf of V given U = u, i.e. dC(u, v)/du."""
        check_open01(f"{self.family}.hfunc", u, v)
        return self._h1(np.asarray(u, dtype=float), np.asarray(v, dtype=float))

    def hfunc_u(self, u, v):
        """Conditional cdf of U given V = v, i.e. dC(u, v)/dv."""
        check_open01(f"{self.family}.hfunc_u", u, v)
        return self._h2(np.asarray(u, dtype=float), np.asarray(v, dtype=float))

    def hinv(self, t, u):
        """Solve hfunc(v, u) = t for v."""
        check_open01(f"{self.family}.hinv", t, u)
        t, u = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(u, dtype=float))
        return self._hinv(t, u)

    def sample(self, n, rng):
        u = np.clip(rng.random(n), 1e-16, 1 - 1e-16)
        t = np.clip(rng.random(n), 1e-16, 1 - 1e-16)
        return u, self._hinv(t, u)

    def tau(self):
        return tau_quadrature(self)

    # -- generic numerics ---------------------------------------------------------
    def _pdf(self, u, v):
        return np.exp(self._logpdf(u, v))

    def _hinv(self, t, u):
        return hinv_bisect(self, t, u)

    def __repr__(self):
        args = ", ".join(f"{n}={v:.6g}" for n, v in zip(self.param_names, self.params))
        return f"{type(self).__name__}({args})"


def hinv_bisect(cop, t, u, iters=60):
    """Invert ``cop._h1(u, .)`` by vectorized bisection followed by guarded Newton steps."""
    t, u = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(u, dtype=float))
    shape = t.shape
    t = t.ravel()
    u = u.ravel()
    lo = np.zeros_like(t)
    hi = np.ones_like(t)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = cop._h1(u, mid) < t
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    v = 0.5 * (lo + hi)
    inner = (v > 0.0) & (v < 1.0)
    for _ in range(2):
        if not np.any(inner):
            break
        with np.errstate(all="ignore"):
            step = (cop._h1(u, v) - t) / cop._pdf(u, v)
        cand = v - np.where(np.isfinite(step), step, 0.0)
        ok = inner & (cand > lo) & (cand < hi)
        v = np.where(ok, cand, v)
    resid = np.abs(cop._h1(u, np.clip(v, 1e-300, 1.0)) - t)
    bad = ~(resid < 1e-6)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"{cop.family}.hinv: failed to bracket root for t={t[i]:.6g}, u={u[i]:.6g}; "
            f"final interval [{lo[i]:.3g}, {hi[i]:.3g}]"
        )
    return v.reshape(shape)


def tau_quadrature(cop, nodes=200):
    """Kendall's tau as 1 - 4 * int int dC/du * dC/dv by tensor Gauss-Legendre."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    U, V = np.meshgrid(x, x, indexing="ij")
    val = cop._h1(U, V) * cop._h2(U, V)
    return float(1.0 - 4.0 * np.einsum("i,j,ij->", w, w, val))


def tau_mc(cop, n, rng):
    """Monte Carlo estimate of 4 E[C(U, V)] - 1 with its standard error."""
    u, v = cop.sample(n, rng)
    c = cop._cdf(u, v)
    return float(4.0 * c.mean() - 1.0), float(4.0 * c.std(ddof=1) / math.sqrt(n))


@dataclass(frozen=True, repr=False)
class Independence(BivariateCopula):
    family = "Independence"

    def _cdf(self, u, v):
        return u * v

    def _logpdf(self, u, v):
        return np.zeros(np.broadcast(u, v).shape)

    def _h1(self, u, v):
        return np.broadcast_to(v, np.broadcast(u, v).shape).astype(float)

    def _h2(self, u, v):
        return np.broadcast_to(u, np.broadcast(u, v).shape).astype(float)

    def _hinv(self, t, u):
        return np.array(t, dtype=float)

    def tau(self):
        return 0.0


@dataclass(frozen=True, repr=False)
class Normal(BivariateCopula):
    rho: float = 0.0

    family = "Normal"
    param_names = ("rho",)
    transforms = ("logit",)

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError("Normal copula: rho must lie in (-1, 1)")

    def _cdf(self, u, v):
        return bvn_cdf(special.ndtri(u), special.ndtri(v), self.rho)

    def _logpdf(self, u, v):
        x = special.ndtri(u)
        y = special.ndtri(v)
        r = self.rho
        s = 1.0 - r * r
        return -0.5 * math.log(s) - (r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * s)

    def _h1(self, u, v):
        r = self.rho
        return special.ndtr((special.ndtri(v) - r * special.ndtri(u)) / math.sqrt(1.0 - r * r))

    def _h2(self, u, v):
        return self._h1(v, u)

    def _hinv(self, t, u):
        r = self.rho
        return special.ndtr(special.ndtri(t) * math.sqrt(1.0 - r * r) + r * special.ndtri(u))

    def tau(self):
        return 2.0 / math.pi * math.asin(self.rho)

    @classmethod
    def from_tau(cls, tau):
        _check_tau(tau, -1.0, 1.0)
        return cls(math.sin(math.pi * tau / 2.0))


@dataclass(frozen=True, repr=False)
class Clayton(BivariateCopula):
    delta: float = 1.0

    family = "Clayton"
    param_names = ("delta",)
    transforms = ("log",)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("Clayton copula: delta must be positive")

    def _base(self, lu, lv):
        d = self.delta
        return np.log1p(np.expm1(-d * lu) + np.expm1(-d * lv))

    def _cdf(self, u, v):
        return np.exp(-self._base(np.log(u), np.log(v)) / self.delta)

    def _logpdf(self, u, v):
        d = self.delta
        lu, lv = np.log(u), np.log(v)
        return math.log1p(d) - (d + 1.0) * (lu + lv) - (1.0 / d + 2.0) * self._base(lu, lv)

    def _h1(self, u, v):
        d = self.delta
        lu, lv = np.log(u), np.log(v)
        return np.exp(-(d + 1.0) * lu - (1.0 / d + 1.0) * self._base(lu, lv))

    def _h2(self, u, v):
        return self._h1(v, u)

    def _hinv(self, t, u):
        d = self.delta
        a = np.expm1(-d / (1.0 + d) * np.log(t)) * np.exp(-d * np.log(u))
        return np.exp(-np.log1p(a) / d)

    def tau(self):
        return self.delta / (self.delta + 2.0)

    @classmethod
    def from_tau(cls, tau):
        _check_tau(tau, 0.0, 1.0)
        return cls(2.0 * tau / (1.0 - tau))


def _debye1(d):
    if d == 0.0:
        return 1.0
    f = lambda t: t / math.expm1(t) if t != 0.0 else 1.0
    val, _ = integrate.quad(f, 0.0, d, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val / d


def frank_tau(delta):
    if abs(delta) < 1e-2:
        # Taylor series; the Debye form cancels badly near zero
        d2 = delta * delta
        return delta * (1.0 / 9.0 - d2 / 900.0 + d2 * d2 / 52920.0)
    return 1.0 + 4.0 * (_debye1(delta) - 1.0) / delta


def frank_delta(tau):
    _check_tau(tau, -1.0, 1.0)
    if tau == 0.0:
        return 0.0
    s = 1.0 if tau > 0 else -1.0
    a = abs(tau)
    hi = 1.0
    while frank_tau(hi) < a:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("Frank: tau too close to 1")
    return s * optimize.brentq(lambda d: frank_tau(d) - a, 1e-12, hi, xtol=1e-14, rtol=1e-15)


@dataclass(frozen=True, repr=False)
class Frank(BivariateCopula):
    delta: float = 1.0

    family = "Frank"
    param_names = ("delta",)
    transforms = ("log",)

    def __post_init__(self):
        if self.delta == 0 or not math.isfinite(self.delta):
            raise ValueError("Frank copula: delta must be finite and non-zero")

    def _cdf(self, u, v):
        d = self.delta
        return -np.log1p(np.expm1(-d * u) * np.expm1(-d * v) / math.expm1(-d)) / d

    def _logpdf(self, u, v):
        d = self.delta
        den = math.expm1(-d) + np.expm1(-d * u) * np.expm1(-d * v)
        return math.log(-d * math.expm1(-d)) - d * (u + v) - 2.0 * np.log(np.abs(den))

    def _h1(self, u, v):
        d = self.delta
        gv = np.expm1(-d * v)
        return np.exp(-d * u) * gv / (math.expm1(-d) + np.expm1(-d * u) * gv)

    def _h2(self, u, v):
        return self._h1(v, u)

    def _hinv(self, t, u):
        d = self.delta
        g = t * math.expm1(-d) / (np.exp(-d * u) - t * np.expm1(-d * u))
        return np.clip(-np.log1p(g) / d, 0.0, 1.0)

    def tau(self):
        return frank_tau(self.delta)

    @classmethod
    def from_tau(cls, tau):
        d = frank_delta(tau)
        if d == 0.0:
            raise ValueError("Frank: tau = 0 is the independence copula (delta = 0)")
        return cls(d)


@dataclass(frozen=True, repr=False)
class Gumbel(BivariateCopula):
    delta: float = 1.5

    family = "Gumbel"
    param_names = ("delta",)
    transforms = ("log1",)

    def __post_init__(self):
        if not self.delta >= 1.0:
            raise ValueError("Gumbel copula: delta must be >= 1")

    def _parts(self, u, v):
        x = -np.log(u)
        y = -np.log(v)
        s = x**self.delta + y**self.delta
        return x, y, s

    def _cdf(self, u, v):
        _, _, s = self._parts(u, v)
        return np.exp(-(s ** (1.0 / self.delta)))

    def _logpdf(self, u, v):
        d = self.delta
        x, y, s = self._parts(u, v)
        a = s ** (1.0 / d)
        return (
            -a
            + (d - 1.0) * (np.log(x) + np.log(y))
            + x
            + y
            + (2.0 / d - 2.0) * np.log(s)
            + np.log1p((d - 1.0) / a)
        )

    def _h1(self, u, v):
        d = self.delta
        x, y, s = self._parts(u, v)
        return np.exp(-(s ** (1.0 / d)) + (1.0 / d - 1.0) * np.log(s) + (d - 1.0) * np.log(x) + x)

    def _h2(self, u, v):
        return self._h1(v, u)

    def tau(self):
        return 1.0 - 1.0 / self.delta

    @classmethod
    def from_tau(cls, tau):
        _check_tau(tau, 0.0, 1.0, lo_closed=True)
        return cls(1.0 / (1.0 - tau))


@dataclass(frozen=True, repr=False)
class Khoudraji(BivariateCopula):
    """``C(u, v) = u**(1-k1) * v**(1-k2) * base(u**k1, v**k2)`` with ``k1, k2`` in (0, 1]."""

    base: BivariateCopula = Normal(0.5)
    kappa1: float = 1.0
    kappa2: float = 1.0

    family = "Khoudraji"
    symmetric = False

    def __post_init__(self):
        if not (0.0 < self.kappa1 <= 1.0 and 0.0 < self.kappa2 <= 1.0):
            raise ValueError("Khoudraji: kappa1 and kappa2 must lie in (0, 1]")

    @property
    def param_names(self):
        return tuple(self.base.param_names) + ("kappa1", "kappa2")

    @property
    def transforms(self):
        return tuple(self.base.transforms) + ("logit", "logit")

    @property
    def params(self):
        return tuple(self.base.params) + (float(self.kappa1), float(self.kappa2))

    def with_params(self, params):
        p = [float(x) for x in params]
        nb = len(self.base.params)
        return Khoudraji(self.base.with_params(p[:nb]), p[nb], p[nb + 1])

    def to_dict(self):
        return {"family": self.family, "params": [float(self.kappa1), float(self.kappa2)], "base": self.base.to_dict()}

    def _pieces(self, u, v):
        k1, k2 = self.kappa1, self.kappa2
        A = u**k1
        B = v**k2
        return k1, k2, A, B

    def _cdf(self, u, v):
        k1, k2, A, B = self._pieces(u, v)
        return u ** (1.0 - k1) * v ** (1.0 - k2) * self.base._cdf(A, B)

    def _h1(self, u, v):
        k1, k2, A, B = self._pieces(u, v)
        vk = v ** (1.0 - k2)
        out = k1 * vk * self.base._h1(A, B)
        if k1 < 1.0:
            out = out + (1.0 - k1) * u ** (-k1) * vk * self.base._cdf(A, B)
        return out

    def _h2(self, u, v):
        k1, k2, A, B = self._pieces(u, v)
        uk = u ** (1.0 - k1)
        out = k2 * uk * self.base._h2(A, B)
        if k2 < 1.0:
            out = out + (1.0 - k2) * v ** (-k2) * uk * self.base._cdf(A, B)
        return out

    def _pdf(self, u, v):
        k1, k2, A, B = self._pieces(u, v)
        base = self.base
        out = k1 * k2 * base._pdf(A, B)
        need_cdf = k1 < 1.0 and k2 < 1.0
        D = base._cdf(A, B) if need_cdf else 0.0
        if k1 < 1.0:
            out = out + (1.0 - k1) * u ** (-k1) * k2 * base._h2(A, B)
        if k2 < 1.0:
            out = out + k1 * (1.0 - k2) * v ** (-k2) * base._h1(A, B)
        if need_cdf:
            out = out + (1.0 - k1) * (1.0 - k2) * u ** (-k1) * v ** (-k2) * D
        return out

    def _logpdf(self, u, v):
        with np.errstate(divide="ignore"):
            return np.log(self._pdf(u, v))

    def tau(self):
        return tau_quadrature(self)


@dataclass(frozen=True, repr=False)
class Survival(BivariateCopula):
    """Copula of ``(1 - U, 1 - V)`` when ``(U, V)`` follows ``base``."""

    base: BivariateCopula = Normal(0.5)

    family = "Survival"

    @property
    def symmetric(self):
        return self.base.symmetric

    @property
    def param_names(self):
        return tuple(self.base.param_names)

    @property
    def transforms(self):
        return tuple(self.base.transforms)

    @property
    def params(self):
        return tuple(self.base.params)

    def with_params(self, params):
        return Survival(self.base.with_params(params))

    def to_dict(self):
        return {"family": self.family, "base": self.base.to_dict()}

    def _cdf(self, u, v):
        return u + v - 1.0 + self.base._cdf(1.0 - u, 1.0 - v)

    def _logpdf(self, u, v):
        return self.base._logpdf(1.0 - u, 1.0 - v)

    def _pdf(self, u, v):
        return self.base._pdf(1.0 - u, 1.0 - v)

    def _h1(self, u, v):
        return 1.0 - self.base._h1(1.0 - u, 1.0 - v)

    def _h2(self, u, v):
        return 1.0 - self.base._h2(1.0 - u, 1.0 - v)

    def _hinv(self, t, u):
        return 1.0 - self.base._hinv(1.0 - t, 1.0 - u)

    def sample(self, n, rng):
        u, v = self.base.sample(n, rng)
        return 1.0 - u, 1.0 - v

    def tau(self):
        return self.base.tau()

    def __repr__(self):
        return f"Survival({self.base!r})"


def _check_tau(tau, lo, hi, lo_closed=False):
    above = lo <= tau if lo_closed else lo < tau
    if not (above and tau < hi):
        raise ValueError(f"tau={tau} outside the attainable range ({lo}, {hi})")


FAMILIES = {
    "Independence": Independence,
    "Normal": Normal,
    "Clayton": Clayton,
    "Frank": Frank,
    "Gumbel": Gumbel,
}


def tau_to_param(family, tau):
    """Map Kendall's tau to the parameter tuple of a one-parameter family."""
    if family == "Independence":
        if tau != 0.0:
            raise ValueError("Independence copula has tau = 0")
        return ()
    if family == "Frank":
        return (frank_delta(tau),)
    if family not in FAMILIES:
        raise ValueError(f"no closed tau map for family {family!r}")
    return FAMILIES[family].from_tau(tau).params


def param_to_tau(family, params):
    if family == "Frank":
        return frank_tau(float(params[0]))
    return make_copula({"family": family, "params": list(params)}).tau()


def make_copula(d):
    """Build a bivariate copula from its JSON dict form."""
    fam = d["family"]
    params = d.get("params")
    if fam == "Khoudraji":
        base = make_copula(d["base"])
        k1, k2 = (1.0, 1.0) if params is None else (float(params[0]), float(params[1]))
        return Khoudraji(base, k1, k2)
    if fam == "Survival":
        return Survival(make_copula(d["base"]))
    try:
        cls = FAMILIES[fam]
    except KeyError:
        raise ValueError(f"unknown bivariate copula family {fam!r}") from None
    if params is None or (fam == "Independence"):
        return cls()
    return cls(*[float(p) for p in params])
