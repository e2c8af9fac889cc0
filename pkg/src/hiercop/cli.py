"""``hiercop`` command line: simulate, fit, predict, density, diagnose, mc.

Exit codes: 0 success, 2 usage or data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from hiercop import diagnostics as diag
from hiercop import io
from hiercop import prediction as pred
from hiercop._numeric import ConvergenceError
from hiercop.estimation import FittedModel, fit_ifm, fit_mle
from hiercop.mc import ScenarioConfig, run_scenario
from hiercop.model import NonFiniteLikelihood, pseudo_observations, simulate

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(ValueError):
    pass


def _parse_sizes(text):
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--sizes: not a comma-separated list of integers: {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise UsageError("--sizes: every cluster size must be a positive integer")
    return sizes


def _parse_grid(text, name):
    try:
        a, b, k = text.split(":")
        a, b, k = float(a), float(b), int(k)
    except ValueError:
        raise UsageError(f"{name}: expected a:b:k, got {text!r}") from None
    if k < 1 or not a <= b:
        raise UsageError(f"{name}: need a <= b and k >= 1")
    return np.linspace(a, b, k)


def _parse_probs(text):
    try:
        ps = [float(s) for s in text.split(",")]
    except ValueError:
        raise UsageError(f"--quantiles: cannot parse {text!r}") from None
    if any(not 0.0 < p < 1.0 for p in ps):
        raise UsageError("--quantiles: levels must lie in (0, 1)")
    return ps


def _context(fit, data, cluster):
    if cluster is None:
        return pred.PredictionContext.from_cluster(fit.spec)
    if cluster not in data.labels:
        raise UsageError(f"unknown cluster {cluster!r}")
    x, y = data.cluster(cluster)
    return pred.PredictionContext.from_cluster(fit.spec, x, y)


def cmd_simulate(args):
    spec = io.load_spec(args.spec)
    sizes = _parse_sizes(args.sizes)
    data = simulate(spec, sizes, np.random.default_rng(args.seed))
    io.write_dataset(data, args.out)


def cmd_fit(args):
    data = io.read_dataset(args.data)
    families = io.load_spec(args.families)
    out = {}
    try:
        ifm, trace = fit_ifm(families, data)
        out = {"ifm_trace": trace.to_dict()}
        if args.method == "ifm":
            fit = ifm
        else:
            fit = fit_mle(families, data, init=ifm)
            fit.convergence["ifm_loglik"] = ifm.loglik
    except ConvergenceError as e:
        out.update({"status": "failed", "stage": e.stage, "message": str(e), "trace": e.trace})
        if e.x is not None:
            out["last_iterate"] = [float(v) for v in np.ravel(e.x)]
        io.write_json(_jsonable(out), args.out)
        raise
    fit.seed = args.seed
    d = fit.to_dict()
    d.update(out)
    io.write_json(_jsonable(d), args.out)


def cmd_predict(args):
    fit = FittedModel.from_dict(io.read_json(args.fit))
    data = io.read_dataset(args.data)
    ctx = _context(fit, data, args.cluster)
    grid = _parse_grid(args.x_grid, "--x-grid")
    curve = pred.prediction_curve(ctx, grid, _parse_probs(args.quantiles), nodes=args.nodes)
    io.write_columns(curve, args.out)
    print(json.dumps({"cluster": args.cluster, "mu0": ctx.mu0, "sigma0": ctx.sigma0}))


def cmd_density(args):
    fit = FittedModel.from_dict(io.read_json(args.fit))
    data = io.read_dataset(args.data)
    ctx = _context(fit, data, args.cluster)
    ys = _parse_grid(args.y_grid, "--y-grid")
    io.write_columns({"y": ys, "density": pred.predictive_density(ctx, args.x, ys)}, args.out)


def cmd_diagnose(args):
    data = io.read_dataset(args.data)
    if args.fit:
        spec = FittedModel.from_dict(io.read_json(args.fit)).spec
        po = pseudo_observations(spec, data)
        u, v = po.u, po.v
    else:
        from scipy.stats import rankdata

        n = data.n_units
        u = rankdata(data.x) / (n + 1.0)
        v = rankdata(data.y) / (n + 1.0)
    report = {
        "schema": 1,
        "pooled_tau": diag.pooled_kendall_tau(u, v).to_dict(),
        "quadrant_tau": {k: (t.to_dict() if t else None) for k, t in diag.quadrant_kendall_tau(u, v).items()},
        "exchangeable_tau_x": diag.exchangeable_kendall_tau(data.x, data.sizes).to_dict(),
        "exchangeable_tau_y": diag.exchangeable_kendall_tau(data.y, data.sizes).to_dict(),
    }
    if args.fit:
        report["exchangeable_tau_w"] = diag.exchangeable_kendall_tau(po.w, data.sizes).to_dict()
    report["structure"] = diag.exchangeability_structure_check(data)
    io.write_json(_jsonable(report), args.out)


def cmd_mc(args):
    d = io.read_json(args.scenario)
    if args.B is not None:
        d["B"] = args.B
    cfg = ScenarioConfig.from_dict(d)
    report = run_scenario(cfg, threads=args.threads)
    io.write_json(_jsonable(report.to_dict()), args.out)
    for label, row in report.table()["rows"].items():
        print(label, " ".join(row))
    if any(report.summary[m]["flagged"] for m in ("MLE", "IFM")):
        print("warning: replicate failure rate above 5%", file=sys.stderr)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def build_parser():
    p = argparse.ArgumentParser(prog="hiercop", description="Copula regression for clustered data.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a dataset from a model spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--sizes", required=True, help="comma-separated cluster sizes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="fit a model by IFM or maximum likelihood")
    s.add_argument("--data", required=True)
    s.add_argument("--families", required=True)
    s.add_argument("--method", choices=("ifm", "mle"), default="mle")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="cluster-specific prediction curve")
    s.add_argument("--fit", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--cluster", default=None, help="cluster id; omit for a new cluster")
    s.add_argument("--x-grid", required=True, help="a:b:k")
    s.add_argument("--quantiles", default="0.025,0.5,0.975")
    s.add_argument("--nodes", type=int, default=pred.DEFAULT_NODES)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("density", help="predictive density on a y grid")
    s.add_argument("--fit", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--cluster", default=None)
    s.add_argument("--x", type=float, required=True)
    s.add_argument("--y-grid", required=True, help="a:b:k")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_density)

    s = sub.add_parser("diagnose", help="rank-based dependence diagnostics")
    s.add_argument("--data", required=True)
    s.add_argument("--fit", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("mc", help="run a Monte Carlo scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--B", type=int, default=None, help="override the replicate count")
    s.add_argument("--threads", type=int, default=None, help="defaults to HIERCOP_THREADS or the CPU count")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mc)
    return p


_GRID_FLAGS = ("--x-grid", "--y-grid", "--x")


def _attach_negative_values(argv):
    """Let grids such as ``--x-grid -2:2:5`` through argparse's option detection."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok in _GRID_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_attach_negative_values(argv))
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args.func(args)
    except (ConvergenceError, NonFiniteLikelihood, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"hiercop: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, OSError) as e:
        print(f"hiercop: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
