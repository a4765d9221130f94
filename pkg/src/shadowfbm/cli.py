"""
Command line front end.

Every subcommand writes its outputs plus ``<subcommand>.manifest.json`` into
the output directory (``--out``, else ``$FBM_SHADOW_OUT``, else the current
directory). Parameters resolve as flags > ``--config`` file > defaults;
a flag that overrides a different config value is reported on stderr and
in the manifest.

Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import io
from .arbitrage_diagnostics import (
    CpsConstructionError,
    build_cps,
    detect_obvious_arbitrage,
    ensemble_from_tree,
    twc_curve,
)
from .duality import dual_conjugacy_check
from .fbm import ModelSpec, TimeGrid, fbs_prices, sample_fbm_paths
from .fluctuation import mc_tail_curve, scaling_fit, tail_curve_from_counts
from ._barrier import SolverError
from .ledger import CostSpec
from .shadow import DEFAULT_TOLERANCES, extract_shadow, verify_shadow
from .tree import ScenarioTree, build_fbs_tree
from .tree_optimizer import maximize_utility
from .utility import UtilitySpec
from .wealth_bound import BoundParams, check_wealth_bound

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# name -> (type, default, help)
SAMPLING = {
    "hurst": (float, 0.5, "Hurst parameter"),
    "horizon": (float, 1.0, "time horizon"),
    "steps": (int, 1024, "number of grid steps"),
    "paths": (int, 1000, "number of paths"),
    "seed": (int, 0, "random seed"),
    "method": (str, "auto", "sampler: cholesky, circulant or auto"),
}
MODEL = {
    "mu": (float, 0.0, "drift of the log-price"),
    "sigma": (float, 0.5, "volatility"),
}
TREE = {
    "tree": (str, None, "tree JSON file (overrides the generated fBS tree)"),
    "depth": (int, 4, "depth of the generated fBS tree"),
    "hurst": (float, 0.5, "Hurst parameter of the generated tree"),
    "horizon": (float, 1.0, "horizon of the generated tree"),
    "seed": (int, 0, "seed stamped into the tree"),
}
PROBLEM = {
    "lambda": (float, 0.01, "proportional transaction cost"),
    "utility": (str, "log", "log or power"),
    "alpha": (float, None, "power utility exponent"),
    "x": (float, 1.0, "initial cash"),
    "tol": (float, 1e-8, "optimality tolerance"),
}
ENSEMBLE = {
    "ensemble": (str, None, "wide path CSV (t,path_0,...); otherwise paths are sampled"),
}

COMMANDS = {
    "simulate-fbm": ("sample fBm paths", {**SAMPLING, "steps": (int, 256, "number of grid steps")}),
    "fluctuations": (
        "tail curve of delta-fluctuation counts",
        {**SAMPLING, "delta": (float, 0.1, "fluctuation size"), "n-max": (int, 30, "largest n")},
    ),
    "tail-fit": (
        "fit the tail law to a tail curve",
        {
            **SAMPLING,
            "delta": (float, 0.1, "fluctuation size"),
            "n-max": (int, 30, "largest n"),
            "curve": (str, None, "tail CSV (n,p_hat,stderr) to fit instead of sampling"),
        },
    ),
    "bound-check": (
        "oracle terminal cash against the fluctuation bound",
        {
            **SAMPLING,
            **MODEL,
            "steps": (int, 63, "number of grid steps (at most 63)"),
            "sigma": (float, 0.2, "volatility"),
            "mu": (float, 0.05, "drift of the log-price"),
            "lambda": (float, 0.1, "proportional transaction cost"),
            "delta": (float, 0.02, "fluctuation size"),
            "x": (float, 1.0, "initial cash"),
            "levels": (int, 511, "holdings grid size of the oracle"),
        },
    ),
    "optimize-tree": ("utility maximisation on a scenario tree", {**TREE, **MODEL, **PROBLEM}),
    "shadow-verify": (
        "optimise, extract and verify a shadow price",
        {**TREE, **MODEL, **PROBLEM, "check-tol": (float, None, "one tolerance for every check")},
    ),
    "duality-gap": (
        "primal value against the dual bound over a y grid",
        {
            **TREE,
            **MODEL,
            **PROBLEM,
            "y-min": (float, 0.2, "smallest y"),
            "y-max": (float, 5.0, "largest y"),
            "y-count": (int, 25, "number of y values (geometric)"),
        },
    ),
    "twc-stats": (
        "two way crossing curve of an ensemble",
        {
            **SAMPLING,
            **ENSEMBLE,
            "steps": (int, 256, "number of grid steps"),
            "rule": (str, "fixed_time:0.5", "level_hit:<c> or fixed_time:<t>"),
            "eps": (str, "0,0.001,0.01,0.1", "comma separated epsilon grid"),
        },
    ),
    "cps-build": (
        "consistent price system on an ensemble",
        {
            **TREE,
            **MODEL,
            **ENSEMBLE,
            "mu-prime": (float, 0.1, "consistency level"),
            "gamma-policy": (str, "scan", "scan or none"),
        },
    ),
    "detect-oia": (
        "search for obvious (immediate) arbitrage",
        {
            **SAMPLING,
            **MODEL,
            **ENSEMBLE,
            "steps": (int, 256, "number of grid steps"),
            "alpha": (float, 0.1, "arbitrage size"),
            "min-support": (float, 0.01, "least probability of the sigma event"),
        },
    ),
}


def _parser():
    p = argparse.ArgumentParser(prog="shadowfbm", description="fBm fluctuations and shadow prices")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="subcommand")
    for name, (desc, opts) in COMMANDS.items():
        sp = sub.add_parser(name, help=desc, description=desc)
        for key, (typ, default, help_) in opts.items():
            shown = "" if default is None else f" (default {default})"
            sp.add_argument(f"--{key}", dest=key.replace("-", "_"), type=typ, default=argparse.SUPPRESS, help=help_ + shown)
        sp.add_argument("--config", default=None, help="key=value file; flags take precedence")
        sp.add_argument("--out", default=None, help=f"output directory (default ${io.ENV_OUT} or .)")
    return p


def read_config(path, opts):
    """Parse ``key=value`` lines, or the parameters of a run manifest.

    Unknown keys are usage errors.
    """
    values = {}
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        params = json.loads(text).get("parameters", {})
        unknown = set(params) - set(opts)
        if unknown:
            raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
        return {k: (None if v is None else opts[k][0](v)) for k, v in params.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in opts:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = opts[key][0](val)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def resolve(command, ns):
    """Merge defaults, config file and flags; returns ``(params, conflicts)``."""
    opts = COMMANDS[command][1]
    params = {k: v[1] for k, v in opts.items()}
    config = read_config(ns.config, opts) if ns.config else {}
    params.update(config)
    conflicts = []
    for key in opts:
        attr = key.replace("-", "_")
        if hasattr(ns, attr):
            val = getattr(ns, attr)
            if key in config and config[key] != val:
                conflicts.append({"key": key, "config": config[key], "flag": val, "used": "flag"})
            params[key] = val
    return params, conflicts


# ---------------------------------------------------------------------------
# helpers


def _grid(p):
    if p["steps"] < 1 or p["horizon"] <= 0:
        raise UsageError("steps must be >= 1 and horizon > 0")
    return TimeGrid.uniform(p["horizon"], p["steps"])


def _method(p, grid):
    m = p["method"]
    if m == "auto":
        return "circulant" if grid.n_steps >= 64 else "cholesky"
    if m not in ("cholesky", "circulant"):
        raise UsageError(f"unknown method {m!r}")
    return m


def _utility(p):
    try:
        return UtilitySpec.from_name(p["utility"], p["alpha"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _tree(p):
    if p.get("tree"):
        return ScenarioTree.load(p["tree"])
    return build_fbs_tree(ModelSpec(p["mu"], p["sigma"], p["hurst"], p["horizon"]), p["depth"], seed=p["seed"])


def _cost(p):
    lam = p["lambda"]
    return CostSpec(lam) if lam > 0 else 0.0


def _fbs_ensemble(p):
    grid = _grid(p)
    model = ModelSpec(p["mu"], p["sigma"], p["hurst"], p["horizon"])
    paths = sample_fbm_paths(grid, p["hurst"], p["paths"], p["seed"], _method(p, grid))
    return grid.points, fbs_prices(grid, paths, model)


def _ensemble(p, allow_tree=False):
    """``(times, paths, weights)`` from a CSV, a tree, or sampled fBS paths."""
    if p.get("ensemble"):
        t, x = io.read_paths_csv(p["ensemble"])
        return t, x, None
    if allow_tree:
        tree = _tree(p)
        x, w = ensemble_from_tree(tree)
        return np.arange(x.shape[1]) * (tree.meta.get("horizon", 1.0) / tree.depth), x, w
    t, x = _fbs_ensemble(p)
    return t, x, None


# ---------------------------------------------------------------------------
# subcommands; each returns (exit code, {name: writer}, summary)


def cmd_simulate_fbm(p, digest, out):
    grid = _grid(p)
    paths = sample_fbm_paths(grid, p["hurst"], p["paths"], p["seed"], _method(p, grid))
    f = io.write_paths_csv(os.path.join(out, "paths.csv"), grid.points, paths, digest)
    return EXIT_OK, [f], {"n_paths": p["paths"]}


def _curve(p):
    grid = _grid(p)
    return mc_tail_curve(p["hurst"], grid, p["delta"], p["n-max"], p["paths"], p["seed"], _method(p, grid))


def _write_curve(path, curve, digest):
    rows = np.column_stack([curve.n_values, curve.estimates, curve.stderr])
    return io.write_csv(path, ["n", "p_hat", "stderr"], rows, digest)


def cmd_fluctuations(p, digest, out):
    curve = _curve(p)
    f = _write_curve(os.path.join(out, "tail.csv"), curve, digest)
    return EXIT_OK, [f], {"mean_count": float(np.mean(curve.counts))}


def cmd_tail_fit(p, digest, out):
    files = []
    if p["curve"]:
        _, data = io.read_csv(p["curve"])
        n, phat = data[:, 0], data[:, 1]
        counts_hits = np.rint(phat * p["paths"]).astype(int)
        curve = tail_curve_from_counts(np.zeros(p["paths"], dtype=int), len(n), p["delta"], p["horizon"], p["hurst"], p["seed"])
        curve.n_values, curve.estimates, curve.hits = n.astype(int), phat, counts_hits
        curve.stderr = data[:, 2]
    else:
        curve = _curve(p)
        files.append(_write_curve(os.path.join(out, "tail_fit_curve.csv"), curve, digest))
    try:
        fit = scaling_fit(curve)
    except ValueError as exc:
        print(f"tail-fit: {exc}", file=sys.stderr)
        return EXIT_FAIL, files, {}
    report = {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "n_paths": curve.n_paths,
        "delta": curve.delta,
        "hurst": curve.hurst,
        "horizon": curve.horizon,
        "seed": curve.seed,
    }
    files.append(io.write_json(os.path.join(out, "tail_fit.json"), report, digest))
    return EXIT_OK, files, {"r_squared": fit.r_squared}


def cmd_bound_check(p, digest, out):
    try:
        params = BoundParams(p["lambda"], p["delta"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _, prices = _fbs_ensemble(p)
    rep = check_wealth_bound(prices, params, p["x"], p["levels"], seed=p["seed"])
    f = io.write_json(os.path.join(out, "bound_check.json"), rep.to_dict(), digest)
    code = EXIT_OK if rep.passed else EXIT_FAIL
    return code, [f], {"violations": len(rep.violations), "max_ratio": rep.max_ratio}


def _solve(p):
    tree = _tree(p)
    u = _utility(p)
    res = maximize_utility(tree, _cost(p), u, p["x"], p["tol"])
    return tree, u, res


def cmd_optimize_tree(p, digest, out):
    tree, u, res = _solve(p)
    files = [io.write_json(os.path.join(out, "tree.json"), tree.to_dict(), digest)]
    body = {"result": res.to_dict(), "tol": p["tol"], "seed": p["seed"]}
    files.append(io.write_json(os.path.join(out, "optimize.json"), body, digest))
    return EXIT_OK, files, {"value": res.value, "residual": res.residual}


def cmd_shadow_verify(p, digest, out):
    tree, u, res = _solve(p)
    rep = extract_shadow(tree, _cost(p), u, res)
    tol = p["check-tol"]
    rec = verify_shadow(tree, _cost(p), u, p["x"], res, rep, tol)
    body = {
        "result": res.to_dict(),
        "shadow": rep.to_dict(),
        "verification": rec.to_dict(),
        "tolerances": DEFAULT_TOLERANCES if tol is None else tol,
        "seed": p["seed"],
    }
    f = io.write_json(os.path.join(out, "shadow.json"), body, digest)
    return (EXIT_OK if rec.passed else EXIT_FAIL), [f], {"passed": rec.passed}


def cmd_duality_gap(p, digest, out):
    tree = _tree(p)
    u = _utility(p)
    if not 0 < p["y-min"] < p["y-max"] or p["y-count"] < 1:
        raise UsageError("need 0 < y-min < y-max and y-count >= 1")
    y = np.geomspace(p["y-min"], p["y-max"], p["y-count"])
    rec = dual_conjugacy_check(tree, _cost(p), u, p["x"], y, p["tol"])
    f = io.write_json(os.path.join(out, "duality.json"), rec.to_dict(), digest)
    ok = rec.gap >= -1e-8
    return (EXIT_OK if ok else EXIT_FAIL), [f], {"gap": rec.gap}


def cmd_twc_stats(p, digest, out):
    if p["ensemble"]:
        t, x = io.read_paths_csv(p["ensemble"])
    else:
        grid = _grid(p)
        t, x = grid.points, sample_fbm_paths(grid, p["hurst"], p["paths"], p["seed"], _method(p, grid))
    try:
        eps = [float(e) for e in p["eps"].split(",") if e.strip()]
        curve = twc_curve(x, p["rule"], eps, t)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    f = io.write_csv(os.path.join(out, "twc.csv"), ["eps", "fraction"], curve, digest)
    return EXIT_OK, [f], {"n_paths": int(x.shape[0])}


def cmd_cps_build(p, digest, out):
    _, x, w = _ensemble(p, allow_tree=True)
    try:
        res = build_cps(x, p["mu-prime"], w, p["gamma-policy"])
    except CpsConstructionError as exc:
        print(f"cps-build: {exc}", file=sys.stderr)
        return EXIT_FAIL, [], {"error": str(exc)}
    body = res.to_dict()
    body["max_residual"] = res.max_residual
    body["containment_at_stops"] = res.containment_at_stops(x)
    f = io.write_json(os.path.join(out, "cps.json"), body, digest)
    ok = res.max_residual <= 1e-12 and body["containment_at_stops"] == 0.0 and np.all(res.density > 0)
    return (EXIT_OK if ok else EXIT_FAIL), [f], {"max_residual": res.max_residual}


def cmd_detect_oia(p, digest, out):
    t, x, _ = _ensemble(p)
    rec = detect_obvious_arbitrage(x, p["alpha"], min_support=p["min-support"], times=t)
    f = io.write_json(os.path.join(out, "oia.json"), rec.to_dict(), digest)
    return EXIT_OK, [f], {"found": rec.found, "immediate": rec.immediate}


HANDLERS = {name: globals()["cmd_" + name.replace("-", "_")] for name in COMMANDS}


def run(argv=None):
    """Run one subcommand; returns the exit code."""
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        params, conflicts = resolve(ns.command, ns)
        for c in conflicts:
            print(f"{ns.command}: flag --{c['key']}={c['flag']} overrides config value {c['config']}", file=sys.stderr)
        out = io.output_dir(ns.out)
        manifest = {
            "subcommand": ns.command,
            "parameters": params,
            "seed": params.get("seed"),
            "tool_version": __version__,
        }
        digest = io.manifest_hash(manifest)
        start = time.perf_counter()
        code, files, summary = HANDLERS[ns.command](params, digest, out)
    except UsageError as exc:
        print(f"{ns.command}: {exc}\nusage: shadowfbm {ns.command} --help", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"{ns.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"{ns.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    manifest.update(
        {
            "sha256": digest,
            "outputs": [os.path.basename(f) for f in files],
            "conflicts": conflicts,
            "summary": summary,
            "exit_code": code,
            "wall_time": time.perf_counter() - start,
        }
    )
    io.write_json(os.path.join(out, f"{ns.command}.manifest.json"), manifest)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
