"""Monte Carlo study harness and a synthetic school-marks generator.

Replicate ``b`` of a scenario draws from ``SeedSequence(entropy=seed, spawn_key=(b,))``,
so a run gives the same numbers whether replicates execute serially or in a pool.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit, logit

from hiercop import bivariate as biv
from hiercop import exchangeable as exch
from hiercop import margins as mg
from hiercop._numeric import ConvergenceError
from hiercop.estimation import fit_ifm, fit_mle
from hiercop.model import ModelSpec, simulate

C2_FAMILIES = ("Normal", "Clayton", "KhoudrajiNormal")
DESIGNS = ("EQ", "NEQ")
SIZES = {
    ("EQ", 10): [30] * 10,
    ("EQ", 50): [18] * 50,
    ("NEQ", 10): [15] * 4 + [40] * 6,
    ("NEQ", 50): [10] * 30 + [30] * 20,
}
# (eta_rho, eta_kappa) of the one-kappa Khoudraji-normal copula
KHOUDRAJI_ETAS = {0.4: (0.75, 1.52), 0.6: (1.45, 3.48)}
TAU1, TAU3 = 0.2, 0.1
#: Logit-scale estimates beyond this magnitude sit on the parameter-space boundary.
BOUNDARY_ETA = 12.0
FAILURE_FLAG_RATE = 0.05


@dataclass(frozen=True)
class ScenarioConfig:
    c2: str = "Normal"
    tau2: float = 0.4
    m: int = 50
    design: str = "EQ"
    B: int = 200
    seed: int = 20240101

    def __post_init__(self):
        if self.c2 not in C2_FAMILIES:
            raise ValueError(f"c2 must be one of {C2_FAMILIES}")
        if self.design not in DESIGNS:
            raise ValueError(f"design must be one of {DESIGNS}")
        if (self.design, self.m) not in SIZES:
            raise ValueError("m must be 10 or 50")
        if self.c2 == "KhoudrajiNormal" and self.tau2 not in KHOUDRAJI_ETAS:
            raise ValueError("KhoudrajiNormal scenarios exist for tau2 in {0.4, 0.6}")
        if not 0.0 < self.tau2 < 1.0:
            raise ValueError("tau2 must lie in (0, 1)")
        if self.B < 2:
            raise ValueError("B must be at least 2")

    @property
    def sizes(self):
        return np.array(SIZES[(self.design, self.m)])

    def true_spec(self):
        c1 = exch.NormalEx.from_tau(TAU1)
        c3 = exch.NormalEx.from_tau(TAU3)
        fixed = ()
        if self.c2 == "Normal":
            c2 = biv.Normal.from_tau(self.tau2)
        elif self.c2 == "Clayton":
            c2 = biv.Clayton.from_tau(self.tau2)
        else:
            er, ek = KHOUDRAJI_ETAS[self.tau2]
            c2 = biv.Khoudraji(biv.Normal(float(expit(er))), float(expit(ek)), 1.0)
            fixed = ("c2.kappa2",)
        return ModelSpec(mg.Normal(0.0, 1.0), mg.Normal(0.0, 1.0), c1, c2, c3, frozenset(fixed))

    def to_dict(self):
        return {"schema": 1, **asdict(self)}

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if k != "schema"}
        unknown = set(d) - {"c2", "tau2", "m", "design", "B", "seed"}
        if unknown:
            raise ValueError(f"unknown scenario field(s): {sorted(unknown)}")
        return cls(**d)


def table_scale(spec, values):
    """Logit for parameters with a logit transform, natural scale otherwise."""
    return np.array([float(logit(v)) if t == "logit" else float(v) for t, v in zip(spec.transforms(), values)])


def replicate_rng(seed, b):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(b,)))


def run_replicate(config, b):
    """Simulate replicate ``b`` and fit it by IFM and MLE; returns a JSON-ready dict."""
    spec = config.true_spec()
    data = simulate(spec, config.sizes, replicate_rng(config.seed, b))
    out = {"b": int(b)}
    ifm = None
    for method in ("IFM", "MLE"):
        rec = {"estimate": None, "error": None, "boundary": False}
        try:
            if method == "IFM":
                ifm = fit_ifm(spec, data, compute_se=False)[0]
                fit = ifm
            else:
                fit = fit_mle(spec, data, init=ifm, compute_vcov=False)
            est = table_scale(fit.spec, fit.estimates)
            rec["estimate"] = [float(v) for v in est]
            rec["loglik"] = float(fit.loglik)
            rec["boundary"] = bool(np.any(np.abs(est[np.array(spec.transforms()) == "logit"]) > BOUNDARY_ETA))
        except (ConvergenceError, ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            rec["error"] = f"{type(e).__name__}: {e}"
        out[method] = rec
    return out


def _run_one(args):
    return run_replicate(*args)


def default_threads():
    env = os.environ.get("HIERCOP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def resolve_threads(threads=None):
    """Requested worker count, capped by ``HIERCOP_THREADS`` when it is set."""
    cap = default_threads()
    return cap if threads is None else max(1, min(int(threads), cap))


def run_scenario(config, threads=None, replicates=None):
    """Run all replicates (in a process pool when ``threads > 1``) and aggregate."""
    threads = resolve_threads(threads)
    todo = list(range(config.B)) if replicates is None else list(replicates)
    if threads == 1:
        reps = [run_replicate(config, b) for b in todo]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(_run_one, [(config, b) for b in todo], chunksize=max(1, len(todo) // (4 * threads))))
    return aggregate(config, reps)


@dataclass
class McReport:
    config: ScenarioConfig
    param_names: list
    truth: list
    summary: dict
    replicates: list

    def to_dict(self):
        return {
            "schema": 1,
            "config": self.config.to_dict(),
            "param_names": self.param_names,
            "truth": self.truth,
            "summary": self.summary,
            "table": self.table(),
            "replicates": self.replicates,
        }

    def table(self):
        """Rows ``MV`` and ``IFM`` of ``E_B(10 V_B)`` strings, one per parameter."""
        rows = {}
        for label, method in (("MV", "MLE"), ("IFM", "IFM")):
            s = self.summary[method]
            rows[label] = [
                f"{m:.2f}({v:.2f})" if m is not None else "NA" for m, v in zip(s["mean"], s["var10"])
            ]
        return {"columns": self.param_names, "rows": rows}


def aggregate(config, replicates):
    """E_B and 10 V_B per parameter and method over usable replicates."""
    spec = config.true_spec()
    names = spec.param_names
    truth = [float(v) for v in table_scale(spec, spec.natural())]
    summary = {}
    for method in ("MLE", "IFM"):
        recs = [r[method] for r in replicates]
        ok = [r["estimate"] for r in recs if r["estimate"] is not None and not r["boundary"]]
        n_fail = sum(r["error"] is not None for r in recs)
        n_boundary = sum(bool(r["boundary"]) for r in recs)
        n_used = len(ok)
        if n_used >= 2:
            est = np.array(ok)
            mean = est.mean(axis=0)
            var = est.var(axis=0, ddof=1)
            summary[method] = {
                "mean": [float(v) for v in mean],
                "var10": [float(10.0 * v) for v in var],
                "mc_se_mean": [float(math.sqrt(v / n_used)) for v in var],
                "mc_se_var10": [float(10.0 * v * math.sqrt(2.0 / (n_used - 1))) for v in var],
            }
        else:
            nan = [None] * len(names)
            summary[method] = {"mean": nan, "var10": nan, "mc_se_mean": nan, "mc_se_var10": nan}
        rate = (n_fail + n_boundary) / max(1, len(recs))
        summary[method].update(
            {"n_used": n_used, "n_failed": n_fail, "n_boundary": n_boundary, "flagged": rate > FAILURE_FLAG_RATE}
        )
    reps = sorted(replicates, key=lambda r: r["b"])
    return McReport(config, names, truth, summary, reps)


# -- synthetic stand-in for the school marks study ----------------------------------------
SCHOOL_SPEC = ModelSpec(
    mg.Beta(4.271, 2.359),
    mg.GB3(2.457, 2.470, 0.248),
    exch.NormalEx(0.063),
    biv.Survival(biv.Khoudraji(biv.Normal(0.795), 0.822, 0.959)),
    exch.NormalEx(0.161),
)
# reference standard errors, in the packing order of SCHOOL_SPEC.param_names
SCHOOL_SE = np.array([0.235, 0.124, 0.245, 0.254, 0.052, 0.026, 0.024, 0.046, 0.029, 0.040])
SCHOOL_M = 48
SCHOOL_N = 728
SCHOOL_SIZE_RANGE = (4, 40)


def school_sizes(rng, m=SCHOOL_M, total=SCHOOL_N, lo=SCHOOL_SIZE_RANGE[0], hi=SCHOOL_SIZE_RANGE[1]):
    """``m`` cluster sizes in ``[lo, hi]`` adding to ``total``, with both extremes present."""
    p = (total / m - lo) / (hi - lo)
    sizes = lo + rng.binomial(hi - lo, p, size=m)
    sizes[0], sizes[1] = lo, hi
    while sizes.sum() != total:
        i = int(rng.integers(2, m))
        step = 1 if sizes.sum() < total else -1
        if lo <= sizes[i] + step <= hi:
            sizes[i] += step
    return rng.permutation(sizes)


def synth_school_study(seed, marks=False):
    """Synthetic dataset with the design of the school marks study.

    48 clusters of 4 to 40 units (728 in total) drawn from ``SCHOOL_SPEC``. With
    ``marks=True`` both variables are rounded to integer marks ``M`` in 0..40, mapped
    by ``(M + 1/2) / 41`` and jittered uniformly within the mark cell to break ties.
    """
    rng = np.random.default_rng(seed)
    sizes = school_sizes(rng)
    data = simulate(SCHOOL_SPEC, sizes, rng, labels=tuple(f"S{i + 1:02d}" for i in range(sizes.size)))
    if not marks:
        return data

    def to_marks(z):
        M = np.clip(np.floor(z * 41.0), 0, 40)
        return (M + 0.5 + rng.uniform(-0.5, 0.5, size=z.size)) / 41.0

    return type(data)(to_marks(data.x), to_marks(data.y), data.sizes, data.labels)
