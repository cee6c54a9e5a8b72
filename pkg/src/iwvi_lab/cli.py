"""Command-line entry point: ``iwvi-lab <subcommand>``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import rng
from .asymptotics import confidence_interval, sandwich
from .config import grid_from_config, load_config, shipped_dataset_path
from .errors import IWVILabError
from .estimators import ESTIMATORS, INNER_MODES, run_estimator
from .experiments import (
    _jsonable,
    boxplot_data,
    build_id,
    coverage_experiment,
    phase_report_json,
    phase_sweep,
    run_grid,
    write_estimates_csv,
    write_rows_csv,
    write_table1_csv,
)
from .models import Xi, load_dataset, make_model
from .optimize import OptimizerConfig

DEFAULT_SEED = 2024


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _emit(payload, out):
    text = payload if isinstance(payload, str) else json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _context(args):
    cfg = load_config(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else cfg.get("master_seed", DEFAULT_SEED)
    return cfg, int(seed)


def _model_and_data(args, cfg):
    name = args.model or cfg.get("model", "gumbel")
    opts = dict(cfg.get("model_options") or {})
    model = make_model(name, **opts)
    path = args.data or cfg.get("data_file")
    if path is None:
        if name != "gumbel":
            raise SystemExit("--data is required for models other than gumbel")
        path = shipped_dataset_path()
    return model, model.check_dataset(load_dataset(path)), str(path)


def _optimizer(cfg):
    return OptimizerConfig(**(cfg.get("optimizer") or {}))


def cmd_estimate(args):
    cfg, seed = _context(args)
    model, x, path = _model_and_data(args, cfg)
    kwargs = {}
    if args.estimator == "iwvi" and args.inner:
        kwargs["inner"] = args.inner
    res = run_estimator(args.estimator, model, x, k=args.k, R=args.R, seed=rng.SeedSpec(seed).split("estimate"),
                        cfg=_optimizer(cfg), **kwargs)
    out = res.to_dict(trace=args.trace)
    out.update({"model": model.name, "data": path, "n": int(x.shape[0]), "master_seed": seed, "build": build_id()})
    _emit(out, args.out)


def _xi(model, theta, phi):
    theta = _floats(theta) if theta else [0.0] * model.theta_dim
    phi = _floats(phi) if phi else ([0.5] * (model.phi_dim // 2) + [0.0] * (model.phi_dim // 2) if model.phi_dim else [])
    return model.check_xi(Xi(theta, phi))


def cmd_diagnose(args):
    cfg, seed = _context(args)
    dcfg = cfg.get("diagnostics") or {}
    root = rng.SeedSpec(seed).split("diagnose")
    out = {"check": args.check, "master_seed": seed, "build": build_id()}
    if args.check == "lemmas":
        out["report"] = diag.run_lemma_suite(root, scale=args.scale)
        _emit(out, args.out)
        return
    model, x, path = _model_and_data(args, cfg)
    theta = args.theta or (",".join(map(str, np.atleast_1d(dcfg["theta"]))) if "theta" in dcfg else None)
    phi = args.phi or (",".join(map(str, np.atleast_1d(dcfg["phi"]))) if "phi" in dcfg else None)
    xi = _xi(model, theta, phi)
    k = args.k or dcfg.get("k", 10)
    R = args.R or dcfg.get("R", 10_000)
    draws = args.draws or dcfg.get("draw_count", 100_000)
    out.update({"model": model.name, "data": path})
    if args.check == "gap":
        out["report"] = diag.estimate_gap(model, x, xi, k, R, root).to_dict()
    elif args.check == "relvar":
        out["report"] = diag.estimate_relative_variance(model, x, xi, draws, root).to_dict()
    else:
        k_grid = _ints(args.k_grid) if args.k_grid else dcfg.get("k_grid", [10, 100, 1000])
        out["report"] = diag.gap_expansion_check(model, x, xi, k_grid, R, root, v_draws=draws)
    _emit(out, args.out)


def cmd_ci(args):
    cfg, seed = _context(args)
    model, x, path = _model_and_data(args, cfg)
    res = run_estimator(args.estimator, model, x, k=args.k, R=args.R, seed=rng.SeedSpec(seed).split("estimate"),
                        cfg=_optimizer(cfg))
    sw = sandwich(model, res.theta_hat, x)
    ci = confidence_interval(res.theta_hat, sw, args.level)
    _emit({"estimate": res.to_dict(), "sandwich": sw.to_dict(), "level": args.level, "interval": ci.tolist(),
           "model": model.name, "data": path, "master_seed": seed, "build": build_id()}, args.out)


def _grid(args, cfg, seed, **extra):
    over = {"master_seed": seed, "replications": args.replications, "R": args.R,
            "k_grid": tuple(_ints(args.k_grid)) if args.k_grid else None,
            "estimators": tuple(args.estimators.split(",")) if args.estimators else None,
            "model": args.model, "data_file": getattr(args, "data", None)}
    over.update(extra)
    return grid_from_config(cfg, **over)


def _progress(cell):
    print(f"  {cell.estimator:9s} k={cell.k!s:>5}  mse={cell.mse:.5f}  var={cell.variance_part:.5f}"
          f"  {'ok' if cell.valid else 'INVALID'}  {cell.wall_time:.1f}s", file=sys.stderr)


def cmd_table1(args):
    cfg, seed = _context(args)
    report = run_grid(_grid(args, cfg, seed, fresh_data_per_replication=True), progress=_progress)
    if args.csv:
        write_table1_csv(report, args.csv)
    _emit(report.to_json(args.timings), args.out)


def cmd_boxplots(args):
    cfg, seed = _context(args)
    grid = _grid(args, cfg, seed, fresh_data_per_replication=False)
    if args.k1_analytic:
        grid = replace(grid, k1_analytic=True)
    report = boxplot_data(grid)
    if args.csv:
        write_estimates_csv(report, args.csv)
    _emit(report.to_json(args.timings), args.out)


def cmd_coverage(args):
    cfg, seed = _context(args)
    report = coverage_experiment(_grid(args, cfg, seed, fresh_data_per_replication=True), args.level)
    if args.csv:
        write_rows_csv(report.extra["coverage"], args.csv)
    _emit(report.to_json(args.timings), args.out)


def cmd_phase(args):
    cfg, seed = _context(args)
    p = cfg.get("phase") or {}
    result = phase_sweep(
        args.model or cfg.get("model", "gumbel"),
        args.theta_star if args.theta_star is not None else cfg.get("theta_star", 1.0),
        _floats(args.beta_grid) if args.beta_grid else p.get("beta_grid", [0.0, 1.5]),
        _ints(args.n_grid) if args.n_grid else p.get("n_grid", [25, 50, 100, 200]),
        args.estimator or p.get("estimator", "iwvi"),
        args.reps or p.get("reps", 400),
        rng.SeedSpec(seed).split("phase"),
        R=args.R or p.get("R", 2000),
        k_floor=args.k_floor if args.k_floor is not None else p.get("k_floor", 10),
        cfg=_optimizer(cfg),
    )
    if args.csv:
        write_rows_csv(result["rows"], args.csv)
    _emit(phase_report_json(result, args.timings), args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iwvi-lab", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help=f"master seed (default: config or {DEFAULT_SEED})")
    common.add_argument("--out", help="write the JSON report here instead of stdout")
    common.add_argument("--model", choices=["gumbel", "gaussian_linear"])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", parents=[common], help="run one estimator on a dataset")
    e.add_argument("--estimator", choices=ESTIMATORS, default="iwvi")
    e.add_argument("--k", type=int, default=10)
    e.add_argument("--R", type=int, default=10_000)
    e.add_argument("--data", help="one observation per line (default: shipped synthetic data)")
    e.add_argument("--inner", choices=INNER_MODES)
    e.add_argument("--trace", action="store_true", help="include the optimizer trace")
    e.set_defaults(func=cmd_estimate)

    d = sub.add_parser("diagnose", parents=[common], help="gap, relative variance, gap expansion, lemma checks")
    d.add_argument("--check", choices=["gap", "relvar", "expansion", "lemmas"], required=True)
    d.add_argument("--k-grid")
    d.add_argument("--k", type=int)
    d.add_argument("--R", type=int)
    d.add_argument("--draws", type=int)
    d.add_argument("--theta", help="comma-separated theta")
    d.add_argument("--phi", help="comma-separated phi = (a..., b...)")
    d.add_argument("--data")
    d.add_argument("--scale", type=float, default=1.0, help="shrink lemma sample sizes")
    d.set_defaults(func=cmd_diagnose)

    c = sub.add_parser("ci", parents=[common], help="plug-in sandwich confidence interval")
    c.add_argument("--estimator", choices=ESTIMATORS, default="mle")
    c.add_argument("--k", type=int, default=10)
    c.add_argument("--R", type=int, default=10_000)
    c.add_argument("--level", type=float, default=0.95)
    c.add_argument("--data")
    c.set_defaults(func=cmd_ci)

    for name, func, help_ in (("table1", cmd_table1, "MSE / variance table over fresh datasets"),
                              ("boxplots", cmd_boxplots, "raw estimates with data held fixed"),
                              ("coverage", cmd_coverage, "coverage of plug-in intervals")):
        g = sub.add_parser(name, parents=[common], help=help_)
        g.add_argument("--replications", type=int)
        g.add_argument("--R", type=int)
        g.add_argument("--k-grid")
        g.add_argument("--estimators", help=f"comma-separated subset of {','.join(ESTIMATORS)}")
        g.add_argument("--csv")
        g.add_argument("--timings", action="store_true", help="add wall times (breaks bit-identical reruns)")
        if name == "boxplots":
            g.add_argument("--data")
            g.add_argument("--k1-analytic", action="store_true")
        if name == "coverage":
            g.add_argument("--level", type=float, default=0.95)
        g.set_defaults(func=func)

    ph = sub.add_parser("phase", parents=[common], help="k = ceil(n^beta) sweep")
    ph.add_argument("--beta-grid")
    ph.add_argument("--n-grid")
    ph.add_argument("--estimator", choices=ESTIMATORS)
    ph.add_argument("--reps", type=int)
    ph.add_argument("--R", type=int)
    ph.add_argument("--k-floor", type=int)
    ph.add_argument("--theta-star", type=float)
    ph.add_argument("--csv")
    ph.add_argument("--timings", action="store_true")
    ph.set_defaults(func=cmd_phase)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except IWVILabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
