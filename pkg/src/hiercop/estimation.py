"""IFM (stagewise) and full maximum likelihood estimation of the joint model."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from hiercop import bivariate as biv
from hiercop import exchangeable as exch
from hiercop import margins as mg
from hiercop._numeric import TRANSFORMS, ConvergenceError, clip01, num_grad, num_hessian
from hiercop.kernels import kendall_rowsums
from hiercop.model import COMPONENTS, ModelSpec, full_log_likelihood, pseudo_observations

MAX_ITER = 500


def aic(loglik, k):
    if k < 1:
        raise ValueError("aic: k must be at least 1")
    return 2.0 * k - 2.0 * loglik


@dataclass
class FittedModel:
    spec: ModelSpec
    method: str
    loglik: float
    se: np.ndarray
    vcov: np.ndarray
    convergence: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    seed: int | None = None

    @property
    def param_names(self):
        return self.spec.param_names

    @property
    def estimates(self):
        return self.spec.natural()

    @property
    def unconstrained(self):
        return self.spec.to_unconstrained()

    @property
    def k(self):
        return len(self.param_names)

    @property
    def aic(self):
        return aic(self.loglik, self.k)

    def to_dict(self):
        return {
            "schema": 1,
            "method": self.method,
            "spec": self.spec.to_dict(),
            "param_names": list(self.param_names),
            "estimates": [float(v) for v in self.estimates],
            "se": [_json_float(v) for v in self.se],
            "vcov": [[_json_float(v) for v in row] for row in np.asarray(self.vcov)],
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "convergence": self.convergence,
            "notes": list(self.notes),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        nan = float("nan")
        se = np.array([nan if v is None else v for v in d["se"]], dtype=float)
        vcov = np.array([[nan if v is None else v for v in row] for row in d["vcov"]], dtype=float)
        return cls(
            ModelSpec.from_dict(d["spec"]), d["method"], float(d["loglik"]), se, vcov,
            d.get("convergence", {}), d.get("notes", []), d.get("seed"),
        )


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass
class IfmTrace:
    """Per-stage estimates, pseudo log-likelihoods and AICs, in the order fitted."""

    stages: list = field(default_factory=list)

    def add(self, name, component, estimates, loglik, pse):
        k = len(estimates)
        self.stages.append(
            {
                "stage": name,
                "component": component,
                "estimates": [float(e) for e in estimates],
                "pseudo_loglik": float(loglik),
                "pse": [_json_float(p) for p in pse],
                "aic": float(aic(loglik, k)) if k else None,
            }
        )

    def to_dict(self):
        return {"stages": self.stages}


# -- generic helpers ---------------------------------------------------------------------
def _free_sub(spec, comp):
    obj = spec.component(comp)
    mask = np.array(spec._free_mask(comp), dtype=bool)
    return obj, mask


def _sub_unconstrained(obj, mask):
    return np.array([TRANSFORMS[t][0](p) for t, p, f in zip(obj.transforms, obj.params, mask) if f], dtype=float)


def _sub_from_unconstrained(obj, mask, z):
    params = list(obj.params)
    ts = list(obj.transforms)
    pos = 0
    for k, f in enumerate(mask):
        if f:
            params[k] = float(TRANSFORMS[ts[k]][1](z[pos]))
            pos += 1
    return obj.with_params(params)


def _stage_optimize(nll, z0, stage):
    """Minimize a stage objective; simplex for <= 2 parameters, BFGS otherwise."""
    z0 = np.asarray(z0, dtype=float)
    if z0.size <= 2:
        res = optimize.minimize(
            nll, z0, method="Nelder-Mead",
            options={"maxiter": MAX_ITER * max(1, z0.size), "xatol": 1e-8, "fatol": 1e-10},
        )
    else:
        res = optimize.minimize(nll, z0, method="BFGS", jac=lambda z: num_grad(nll, z), options={"maxiter": MAX_ITER, "gtol": 1e-6})
    if not np.isfinite(res.fun):
        raise ConvergenceError(f"stage {stage}: objective not finite at optimum", res.x, None, stage)
    gnorm = float(np.max(np.abs(num_grad(nll, res.x)))) if res.x.size else 0.0
    if not res.success and gnorm > 1e-3 * (1.0 + abs(res.fun)):
        raise ConvergenceError(f"stage {stage}: {res.message}", res.x, gnorm, stage)
    return res, gnorm


def _natural_cov(nll, z, obj, mask):
    """Delta-method covariance of the free natural parameters from the Hessian in ``z``."""
    if z.size == 0:
        return np.zeros((0, 0))
    H = num_hessian(nll, z)
    ts = [t for t, f in zip(obj.transforms, mask) if f]
    J = np.array([float(TRANSFORMS[t][2](zi)) for t, zi in zip(ts, z)])
    try:
        V = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        V = np.linalg.pinv(H)
    return V * np.outer(J, J)


def _safe(f):
    def g(z):
        try:
            val = f(z)
        except (ValueError, FloatingPointError, ZeroDivisionError):
            return 1e300
        return val if np.isfinite(val) else 1e300

    return g


# -- starting values ---------------------------------------------------------------------
def _pooled_tau(u, v):
    n = u.size
    if n < 2:
        return 0.0
    return float(np.sum(kendall_rowsums(u, v)) / (n * (n - 1)))


def _bivariate_start(c2, tau):
    """Starting copula for stage 2 from the pooled Kendall tau of the pseudo-observations."""
    tau = float(np.clip(tau, 0.02, 0.9))
    if isinstance(c2, biv.Independence):
        return c2
    if isinstance(c2, biv.Survival):
        return biv.Survival(_bivariate_start(c2.base, tau))
    if isinstance(c2, biv.Khoudraji):
        # asymmetry shrinks tau, so start the base a bit stronger
        base = _bivariate_start(c2.base, min(tau * 1.2, 0.9))
        k1 = c2.kappa1 if c2.kappa1 < 1.0 else 0.9
        k2 = c2.kappa2 if c2.kappa2 < 1.0 else 0.9
        return biv.Khoudraji(base, k1, k2)
    if isinstance(c2, biv.Frank):
        return biv.Frank(biv.frank_delta(tau))
    return type(c2).from_tau(tau)


def _exchangeable_start(spec, comp):
    c = spec.component(comp)
    if any(n.startswith(comp + ".") for n in spec.fixed):
        return c
    if isinstance(c, exch.NormalEx):
        return exch.NormalEx(0.1)
    if isinstance(c, exch.ClaytonEx):
        return exch.ClaytonEx(0.2)
    if isinstance(c, exch.FrankEx):
        return exch.FrankEx(1.0)
    return c


def _khoudraji_fixed_kappas(spec, start):
    """Keep user-fixed kappa values when building a stage-2 start."""
    names = spec.component("c2").param_names
    params = list(start.params)
    orig = spec.c2.params
    for k, name in enumerate(names):
        if f"c2.{name}" in spec.fixed:
            params[k] = orig[k]
    return start.with_params(params)


# -- IFM ----------------------------------------------------------------------------
def _check_identifiable(families, data):
    need = [c for c in ("c1", "c3") if not isinstance(families.component(c), exch.IndependenceEx)]
    if need and int(np.max(data.sizes)) < 2:
        raise ValueError(
            f"{' and '.join(need)} not identifiable: at least one cluster with two or more units is required"
        )


def _fit_copula_stage(spec, comp, nll_of_obj, stage, trace, compute_se=True):
    obj, mask = _free_sub(spec, comp)
    z0 = _sub_unconstrained(obj, mask)
    if z0.size == 0:
        ll = -nll_of_obj(obj)
        trace.add(stage, comp, [], ll, [])
        return obj, np.zeros((0, 0)), 0.0
    nll = _safe(lambda z: nll_of_obj(_sub_from_unconstrained(obj, mask, z)))
    res, gnorm = _stage_optimize(nll, z0, stage)
    fitted = _sub_from_unconstrained(obj, mask, res.x)
    cov = _natural_cov(nll, res.x, obj, mask) if compute_se else np.full((res.x.size, res.x.size), np.nan)
    pse = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    free_params = [p for p, f in zip(fitted.params, mask) if f]
    trace.add(stage, comp, free_params, -res.fun, pse)
    return fitted, cov, gnorm


def fit_ifm(families, data, compute_se=True):
    """Stagewise estimation: margins, then c2, c1 and c3 on pseudo-observations.

    ``families`` is a :class:`ModelSpec` whose parameter values serve as starting
    points and whose ``fixed`` set is honored. Returns ``(FittedModel, IfmTrace)``.
    Pseudo standard errors ignore the clustering and the cross-stage uncertainty.
    """
    _check_identifiable(families, data)
    for c in ("marginX", "marginY"):
        if any(n.startswith(c + ".") for n in families.fixed):
            raise ValueError("fixing margin parameters is not supported")
    trace = IfmTrace()
    blocks = []
    gmax = 0.0

    # stage 1: margins
    fx = mg.fit_margin(families.marginX.family, data.x)
    fy = mg.fit_margin(families.marginY.family, data.y)
    trace.add("L_F", "marginX", fx.margin.params, fx.loglik, fx.pse)
    trace.add("L_G", "marginY", fy.margin.params, fy.loglik, fy.pse)
    blocks += [np.diag(fx.pse**2), np.diag(fy.pse**2)]
    spec = families.with_component("marginX", fx.margin).with_component("marginY", fy.margin)

    # stage 2: pseudo-observations and c2
    u = clip01(spec.marginX.cdf(data.x))
    v = clip01(spec.marginY.cdf(data.y))
    start = _bivariate_start(spec.c2, _pooled_tau(u, v))
    spec = spec.with_component("c2", _khoudraji_fixed_kappas(spec, start))
    c2, cov2, g = _fit_copula_stage(spec, "c2", lambda c: -float(np.sum(c._logpdf(u, v))), "L_2", trace, compute_se)
    gmax = max(gmax, g)
    spec = spec.with_component("c2", c2)

    starts, sizes = data.starts, data.sizes
    # stage 3: c1
    spec = spec.with_component("c1", _exchangeable_start(spec, "c1"))
    c1, cov1, g = _fit_copula_stage(
        spec, "c1", lambda c: -float(np.sum(c.logpdf_grouped(u, starts, sizes))), "L_1", trace, compute_se
    )
    gmax = max(gmax, g)
    spec = spec.with_component("c1", c1)

    # stage 4: residual ranks and c3
    w = pseudo_observations(spec, data).w
    spec = spec.with_component("c3", _exchangeable_start(spec, "c3"))
    c3, cov3, g = _fit_copula_stage(
        spec, "c3", lambda c: -float(np.sum(c.logpdf_grouped(w, starts, sizes))), "L_3", trace, compute_se
    )
    gmax = max(gmax, g)
    spec = spec.with_component("c3", c3)

    # assemble in packing order: marginX | marginY | c1 | c2 | c3
    order = {"marginX": blocks[0], "marginY": blocks[1], "c1": cov1, "c2": cov2, "c3": cov3}
    vcov = _block_diag([order[c] for c in COMPONENTS])
    se = np.sqrt(np.where(np.diag(vcov) > 0, np.diag(vcov), np.nan))
    loglik = full_log_likelihood(spec, data, check=False)
    notes = ["stagewise pseudo standard errors; cross-stage covariances set to zero"]
    notes += fx.notes + fy.notes
    conv = {"status": "converged", "gradient_norm": gmax, "iterations": None}
    return FittedModel(spec, "IFM", loglik, se, vcov, conv, notes), trace


def _block_diag(blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    pos = 0
    for b in blocks:
        k = b.shape[0]
        out[pos : pos + k, pos : pos + k] = b
        pos += k
    return out


# -- full MLE -----------------------------------------------------------------------
_NATURAL_BOUNDS = {
    "identity": (None, None),
    "log": (1e-8, None),
    "logit": (1e-8, 1.0 - 1e-8),
    "log1": (1.0 + 1e-8, None),
}


def fit_mle(families, data, init=None, coords="transformed", compute_vcov=True, max_restarts=3):
    """Full maximum likelihood, started from ``init`` (default: the IFM estimate).

    ``coords="transformed"`` runs BFGS on the unconstrained parameters;
    ``coords="natural"`` runs bounded L-BFGS-B directly on the natural scale.
    The covariance is the inverse numerical Hessian of ``-L`` on the transformed
    scale, mapped to natural parameters by the delta method.
    """
    if init is None:
        init = fit_ifm(families, data, compute_se=False)[0].spec
    elif isinstance(init, FittedModel):
        init = init.spec
    n = data.n_units
    spec0 = init

    def nll_z(z):
        try:
            L = full_log_likelihood(spec0.from_unconstrained(z), data, check=False)
        except (ValueError, FloatingPointError):
            return 1e300
        return -L / n if math.isfinite(L) else 1e300

    trace = []
    if coords == "transformed":
        z = spec0.to_unconstrained()
        iters = 0
        for attempt in range(max_restarts + 1):
            res = optimize.minimize(
                nll_z, z, method="BFGS", jac=lambda q: num_grad(nll_z, q),
                options={"maxiter": MAX_ITER, "gtol": 1e-7},
            )
            iters += int(res.nit)
            z = res.x
            gnorm = float(np.max(np.abs(num_grad(nll_z, z)))) * n
            trace.append({"attempt": attempt, "nll": float(res.fun * n), "gradient_norm": gnorm, "message": str(res.message)})
            if gnorm <= 1e-4 * (1.0 + abs(res.fun * n)) and res.fun < 1e299:
                break
        else:
            raise ConvergenceError("MLE did not converge", z, gnorm, "MLE", trace)
        spec = spec0.from_unconstrained(z)
    elif coords == "natural":
        ts = spec0.transforms()
        bounds = [_NATURAL_BOUNDS[t] for t in ts]

        def nll_x(x):
            try:
                L = full_log_likelihood(spec0.with_natural(x), data, check=False)
            except (ValueError, FloatingPointError):
                return 1e300
            return -L / n if math.isfinite(L) else 1e300

        res = optimize.minimize(
            nll_x, spec0.natural(), method="L-BFGS-B", jac=lambda q: _bounded_grad(nll_x, q, bounds),
            bounds=bounds, options={"maxiter": MAX_ITER * 4, "ftol": 1e-15, "gtol": 1e-9},
        )
        iters = int(res.nit)
        spec = spec0.with_natural(res.x)
        z = spec.to_unconstrained()
        gnorm = float(np.max(np.abs(num_grad(nll_z, z)))) * n
        trace.append({"attempt": 0, "nll": float(res.fun * n), "gradient_norm": gnorm, "message": str(res.message)})
        if gnorm > 1e-3 * (1.0 + abs(res.fun * n)):
            raise ConvergenceError("MLE (natural coordinates) did not converge", res.x, gnorm, "MLE", trace)
    else:
        raise ValueError("coords must be 'transformed' or 'natural'")

    loglik = full_log_likelihood(spec, data)
    notes = []
    k = z.size
    vcov = np.full((k, k), np.nan)
    if compute_vcov:
        H = num_hessian(lambda q: n * nll_z(q), z)
        H = 0.5 * (H + H.T)
        eig = np.linalg.eigvalsh(H)
        if np.all(eig > 0):
            Vz = np.linalg.inv(H)
        else:
            Vz = np.linalg.pinv(H)
            notes.append("Hessian not positive definite; pseudo-inverse used")
            warnings.warn("MLE Hessian is not positive definite; using the pseudo-inverse", RuntimeWarning, stacklevel=2)
        J = spec.jacobian_diag(z)
        vcov = Vz * np.outer(J, J)
        vcov = 0.5 * (vcov + vcov.T)
    se = np.sqrt(np.where(np.diag(vcov) > 0, np.diag(vcov), np.nan))
    conv = {"status": "converged", "iterations": iters, "gradient_norm": gnorm, "trace": trace}
    return FittedModel(spec, "MLE", loglik, se, vcov, conv, notes)


def _bounded_grad(f, x, bounds, rel_step=1e-6):
    """Central differences, falling back to one-sided steps next to a bound."""
    g = np.empty_like(x)
    for k in range(x.size):
        h = rel_step * (1.0 + abs(x[k]))
        lo, hi = bounds[k]
        xp = x.copy()
        xm = x.copy()
        up = x[k] + h if hi is None else min(x[k] + h, hi)
        dn = x[k] - h if lo is None else max(x[k] - h, lo)
        xp[k] = up
        xm[k] = dn
        g[k] = (f(xp) - f(xm)) / (up - dn)
    return g


# -- tests and resampling ------------------------------------------------------------
def likelihood_ratio_test(fitted_full, fitted_nested):
    """Return ``(chi2, df, p)`` for nested fits."""
    full_names = set(fitted_full.spec.all_param_names())
    nested_names = set(fitted_nested.spec.all_param_names())
    same_families = all(
        fitted_full.spec.component(c).family == fitted_nested.spec.component(c).family for c in COMPONENTS
    )
    if not (same_families and full_names == nested_names):
        raise ValueError("likelihood_ratio_test: models are not nested (families differ)")
    if not set(fitted_full.param_names) >= set(fitted_nested.param_names):
        raise ValueError("likelihood_ratio_test: the nested model frees parameters the full model fixes")
    df = fitted_full.k - fitted_nested.k
    return lr_pvalue(2.0 * (fitted_full.loglik - fitted_nested.loglik), df)


def lr_pvalue(chi2, df):
    chi2 = max(float(chi2), 0.0)
    p = 1.0 if df == 0 else float(stats.chi2.sf(chi2, df))
    return chi2, int(df), p


def cluster_bootstrap_se(fit_fn, data, B, rng, max_fail_frac=0.2):
    """Cluster bootstrap standard errors of ``fit_fn(data).estimates``.

    Clusters are resampled with replacement; refits that raise are counted and
    more than ``max_fail_frac`` failures is an error.
    """
    if B < 50:
        raise ValueError("cluster_bootstrap_se needs B >= 50")
    ests = []
    fails = 0
    for _ in range(B):
        idx = rng.integers(0, data.m, size=data.m)
        try:
            ests.append(np.asarray(fit_fn(data.subset(idx)).estimates, dtype=float))
        except (ConvergenceError, ValueError, np.linalg.LinAlgError):
            fails += 1
    if fails > max_fail_frac * B:
        raise RuntimeError(f"cluster bootstrap: {fails} of {B} refits failed")
    return np.std(np.array(ests), axis=0, ddof=1)
