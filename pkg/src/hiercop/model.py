"""The 2-exchangeable joint model for clustered ``(X, Y)`` pairs.

A cluster of ``n`` units has copula density

    c1(u_1..u_n) * prod_j c2(u_j, v_j) * c3(h(v_1|u_1), .., h(v_n|u_n))

where ``h = dC2/du``. Equivalently ``U ~ c1`` and ``W = h(V | U) ~ c3`` are
independent, which is what :func:`simulate` uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from hiercop import bivariate as biv
from hiercop import exchangeable as exch
from hiercop import margins as mg
from hiercop._numeric import TRANSFORMS, check_open01, clip01

COMPONENTS = ("marginX", "marginY", "c1", "c2", "c3")
SCHEMA = 1


# -- data ---------------------------------------------------------------------------
@dataclass(frozen=True)
class HierarchicalDataset:
    """Flat storage: units of cluster ``i`` occupy ``starts[i]:starts[i] + sizes[i]``."""

    x: np.ndarray
    y: np.ndarray
    sizes: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        sizes = np.asarray(self.sizes, dtype=np.int64)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("x and y must be 1-d arrays of equal length")
        if sizes.size == 0 or np.any(sizes < 1):
            raise ValueError("every cluster needs at least one unit")
        if int(sizes.sum()) != x.size:
            raise ValueError("cluster sizes do not add up to the number of units")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("data contain non-finite values")
        labels = tuple(str(s) for s in self.labels) or tuple(str(i + 1) for i in range(sizes.size))
        if len(labels) != sizes.size or len(set(labels)) != len(labels):
            raise ValueError("cluster labels must be unique, one per cluster")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_clusters(cls, clusters, labels=()):
        xs = [np.atleast_1d(np.asarray(c[0], dtype=float)) for c in clusters]
        ys = [np.atleast_1d(np.asarray(c[1], dtype=float)) for c in clusters]
        for i, (a, b) in enumerate(zip(xs, ys)):
            if a.shape != b.shape:
                raise ValueError(f"cluster {i}: x and y lengths differ")
        return cls(np.concatenate(xs), np.concatenate(ys), [a.size for a in xs], labels)

    @classmethod
    def from_long(cls, cluster_ids, x, y):
        """Group long-format rows by cluster id, keeping first-appearance order."""
        ids = [str(c) for c in cluster_ids]
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        order = {}
        for c in ids:
            order.setdefault(c, len(order))
        key = np.array([order[c] for c in ids])
        perm = np.argsort(key, kind="stable")
        sizes = np.bincount(key, minlength=len(order))
        return cls(x[perm], y[perm], sizes, tuple(order))

    @property
    def starts(self):
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)

    @property
    def m(self):
        return int(self.sizes.size)

    @property
    def n_units(self):
        return int(self.x.size)

    def cluster_ids(self):
        """Cluster index of every unit."""
        return np.repeat(np.arange(self.m), self.sizes)

    def cluster(self, key):
        i = self.labels.index(str(key)) if not isinstance(key, (int, np.integer)) else int(key)
        s = self.starts[i]
        return self.x[s : s + self.sizes[i]], self.y[s : s + self.sizes[i]]

    def subset(self, idx):
        """Dataset made of clusters ``idx`` (repeats allowed; labels are made unique)."""
        idx = np.asarray(idx, dtype=int)
        starts = self.starts
        parts = [np.arange(starts[i], starts[i] + self.sizes[i]) for i in idx]
        take = np.concatenate(parts)
        return HierarchicalDataset(self.x[take], self.y[take], self.sizes[idx], tuple(str(k) for k in range(idx.size)))


# -- specification ------------------------------------------------------------------
@dataclass(frozen=True)
class ModelSpec:
    """theta = (alpha, beta, delta1, delta2, delta3) with component families.

    ``fixed`` names parameters held at their current value during estimation, e.g.
    ``{"c2.kappa2"}``. Free parameters are packed in the order
    ``marginX | marginY | c1 | c2 | c3``, each in the component's ``param_names`` order.
    """

    marginX: mg.Margin
    marginY: mg.Margin
    c1: exch.ExchangeableCopula
    c2: biv.BivariateCopula
    c3: exch.ExchangeableCopula
    fixed: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        unknown = self.fixed - set(self.all_param_names())
        if unknown:
            raise ValueError(f"unknown fixed parameter(s): {sorted(unknown)}")

    def component(self, name):
        return getattr(self, name)

    def all_param_names(self):
        return [f"{c}.{p}" for c in COMPONENTS for p in self.component(c).param_names]

    @property
    def param_names(self):
        return [n for n in self.all_param_names() if n not in self.fixed]

    def _free_mask(self, comp):
        return [f"{comp}.{p}" not in self.fixed for p in self.component(comp).param_names]

    def natural(self):
        """Free parameters on their natural scale."""
        out = []
        for c in COMPONENTS:
            obj = self.component(c)
            out += [p for p, free in zip(obj.params, self._free_mask(c)) if free]
        return np.array(out, dtype=float)

    def transforms(self):
        out = []
        for c in COMPONENTS:
            obj = self.component(c)
            out += [t for t, free in zip(obj.transforms, self._free_mask(c)) if free]
        return out

    def to_unconstrained(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            z = np.array([TRANSFORMS[t][0](p) for t, p in zip(self.transforms(), self.natural())], dtype=float)
        if np.any(np.isnan(z)):
            bad = [n for n, zi in zip(self.param_names, z) if np.isnan(zi)]
            raise ValueError(f"parameters outside the estimable range: {bad}")
        return z

    def jacobian_diag(self, z):
        """d natural / d unconstrained for each free parameter."""
        return np.array([float(TRANSFORMS[t][2](zi)) for t, zi in zip(self.transforms(), z)])

    def with_natural(self, values):
        values = [float(v) for v in values]
        if len(values) != len(self.param_names):
            raise ValueError("wrong number of parameter values")
        kw = {}
        pos = 0
        for c in COMPONENTS:
            obj = self.component(c)
            params = list(obj.params)
            for k, free in enumerate(self._free_mask(c)):
                if free:
                    params[k] = values[pos]
                    pos += 1
            kw[c] = obj.with_params(params) if params else obj
        return replace(self, **kw)

    def from_unconstrained(self, z):
        return self.with_natural([TRANSFORMS[t][1](zi) for t, zi in zip(self.transforms(), z)])

    def with_component(self, name, obj):
        return replace(self, **{name: obj})

    def to_dict(self):
        d = {"schema": SCHEMA}
        for c in COMPONENTS:
            d[c] = self.component(c).to_dict()
        if self.fixed:
            d["fixed"] = sorted(self.fixed)
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                mg.margin_from_dict(d["marginX"]),
                mg.margin_from_dict(d["marginY"]),
                exch.make_exchangeable(d["c1"]),
                biv.make_copula(d["c2"]),
                exch.make_exchangeable(d["c3"]),
                frozenset(d.get("fixed", ())),
            )
        except KeyError as e:
            raise ValueError(f"model spec is missing {e.args[0]!r}") from None
        except TypeError as e:
            raise ValueError(f"malformed model spec: {e}") from None


# -- pseudo-observations and densities ---------------------------------------------------
@dataclass(frozen=True)
class PseudoObservations:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray


def pseudo_observations(spec, data):
    """``u = F(x)``, ``v = G(y)``, ``w = h(v | u)``, clipped to the open unit interval."""
    u = clip01(spec.marginX.cdf(data.x))
    v = clip01(spec.marginY.cdf(data.y))
    w = clip01(spec.c2._h1(u, v))
    return PseudoObservations(u, v, w)


def copula_log_density(spec, u, v):
    """Log copula density of one cluster with coordinates ``u`` and ``v``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if u.shape != v.shape:
        raise ValueError("u and v must have the same length")
    check_open01("copula_log_density", u, v)
    w = clip01(spec.c2._h1(u, v))
    return float(spec.c1.logpdf(u) + np.sum(spec.c2._logpdf(u, v)) + spec.c3.logpdf(w))


def as_bivariate(ex):
    """The two-dimensional member of an exchangeable family as a bivariate copula."""
    if isinstance(ex, exch.IndependenceEx):
        return biv.Independence()
    if isinstance(ex, exch.NormalEx):
        return biv.Normal(ex.rho)
    if isinstance(ex, exch.ClaytonEx):
        return biv.Clayton(ex.delta)
    if isinstance(ex, exch.FrankEx):
        return biv.Frank(ex.delta)
    raise ValueError(f"no bivariate counterpart for {ex!r}")


def dvine_density_n2(c_uu, c_uv, c_res, u1, v1, u2, v2):
    """D-vine density of ``(U1, V1, U2, V2)`` with the two second-tree copulas independent.

    Verification-only evaluator; all three arguments are bivariate copulas.
    """
    check_open01("dvine_density_n2", u1, v1, u2, v2)
    w1 = c_uv.hfunc(v1, u1)
    w2 = c_uv.hfunc(v2, u2)
    return c_uu.pdf(u1, u2) * c_uv.pdf(u1, v1) * c_uv.pdf(u2, v2) * c_res.pdf(w1, w2)


# -- likelihood ---------------------------------------------------------------------
TERMS = ("L_F", "L_G", "L_2", "L_1", "L_3")


class NonFiniteLikelihood(ValueError):
    def __init__(self, message, term, cluster=None, unit=None):
        super().__init__(message)
        self.term = term
        self.cluster = cluster
        self.unit = unit


def log_likelihood_terms(spec, data):
    """Per-unit arrays for L_F, L_G, L_2 and per-cluster arrays for L_1, L_3."""
    lf = spec.marginX.logpdf(data.x)
    lg = spec.marginY.logpdf(data.y)
    with np.errstate(all="ignore"):
        po = pseudo_observations(spec, data)
        l2 = spec.c2._logpdf(po.u, po.v)
    starts, sizes = data.starts, data.sizes
    l1 = spec.c1.logpdf_grouped(po.u, starts, sizes)
    l3 = spec.c3.logpdf_grouped(po.w, starts, sizes)
    return dict(zip(TERMS, (lf, lg, l2, l1, l3)))


def full_log_likelihood(spec, data, check=True, breakdown=False):
    """Full log-likelihood of ``data`` under ``spec``.

    With ``check=True`` a non-finite term raises :class:`NonFiniteLikelihood` naming
    the cluster (and unit for per-unit terms); with ``check=False`` it yields ``-inf``.
    ``breakdown=True`` returns ``(total, {term: sum})``.
    """
    with np.errstate(all="ignore"):
        terms = log_likelihood_terms(spec, data)
    sums = {k: float(np.sum(v)) for k, v in terms.items()}
    total = sum(sums.values())
    if not math.isfinite(total):
        if check:
            _raise_nonfinite(terms, data)
        total = -math.inf
    return (total, sums) if breakdown else total


def _raise_nonfinite(terms, data):
    cid = data.cluster_ids()
    for name in TERMS:
        arr = np.asarray(terms[name])
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size == 0:
            continue
        k = int(bad[0])
        if arr.size == data.n_units:
            c = int(cid[k])
            unit = k - int(data.starts[c])
            msg = f"non-finite {name} term at cluster {data.labels[c]!r}, unit {unit}"
            raise NonFiniteLikelihood(msg, name, data.labels[c], unit)
        msg = f"non-finite {name} term at cluster {data.labels[k]!r}"
        raise NonFiniteLikelihood(msg, name, data.labels[k])
    raise NonFiniteLikelihood("log-likelihood is not finite", "total")


# -- simulation ---------------------------------------------------------------------
def simulate(spec, sizes, rng, labels=()):
    """Draw a dataset with the given cluster sizes.

    Random draws happen in a fixed order: all of ``c1`` (frailties, then units),
    then all of ``c3``. Then ``V = h^-1(W | U)``, ``X = F^-1(U)``, ``Y = G^-1(V)``.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size == 0 or np.any(sizes < 1):
        raise ValueError("cluster sizes must be positive")
    u = spec.c1.sample_clusters(sizes, rng)
    w = spec.c3.sample_clusters(sizes, rng)
    v = np.clip(spec.c2.hinv(w, u), 1e-16, 1.0 - 1e-16)
    x = spec.marginX.quantile(u)
    y = spec.marginY.quantile(v)
    return HierarchicalDataset(x, y, sizes, labels)


def simulate_uniform(spec, sizes, rng):
    """Like :func:`simulate` but returns the copula-scale ``(u, v, w)`` arrays."""
    sizes = np.asarray(sizes, dtype=np.int64)
    u = spec.c1.sample_clusters(sizes, rng)
    w = spec.c3.sample_clusters(sizes, rng)
    v = np.clip(spec.c2.hinv(w, u), 1e-16, 1.0 - 1e-16)
    return u, v, w


# -- normal special case ----------------------------------------------------------------
def normal_regression(spec):
    """(beta0, beta1, sigma_e) of ``Y = beta0 + beta1 X + sigma_e Phi^-1(W)``.

    Requires Normal margins and a Normal ``c2``.
    """
    if not (
        isinstance(spec.marginX, mg.Normal)
        and isinstance(spec.marginY, mg.Normal)
        and isinstance(spec.c2, biv.Normal)
    ):
        raise ValueError("normal_regression needs Normal margins and a Normal c2")
    mu1, s1 = spec.marginX.mu, spec.marginX.sigma
    mu2, s2 = spec.marginY.mu, spec.marginY.sigma
    r = spec.c2.rho
    b1 = r * s2 / s1
    return mu2 - b1 * mu1, b1, s2 * math.sqrt(1.0 - r * r)
