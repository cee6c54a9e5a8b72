"""Replication harness: MSE tables, boxplot data, coverage and k-vs-n sweeps.

Seeds: replication r draws its data from root/rep:r/data and estimator e at
draw count k uses root/rep:r/<e>:k.  The IWVI inner expectation for the
Gumbel model is an MC approximation of a deterministic function; when the
data are fresh per replication one table per k (root/iwvi:k) is shared by
all replications, otherwise each replication gets its own (root/rep:r/iwvi:k)
so the boxplots show the spread caused by finite R.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, rng
from .asymptotics import confidence_interval, covers, sandwich
from .errors import IWVILabError
from .estimators import (
    ESTIMATORS,
    InnerExpectationTable,
    exact_mle,
    iwvi_estimate,
    msle_independent,
    msle_overlapping,
    table_range,
)
from .models import GumbelHeterogeneityModel, make_model
from .optimize import OptimizerConfig
from .quadrature import QuadratureRule


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        desc = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"iwvi-lab {__version__}" + (f"+g{desc}" if desc else "")


@dataclass
class ExperimentGrid:
    model: str = "gumbel"
    theta_star: float | list = 1.0
    n: int = 100
    k_grid: tuple = (10, 100, 2000)
    estimators: tuple = ("msle-ind", "msle-over", "iwvi")
    replications: int = 200
    R: int = 10_000
    master_seed: int = 2024
    fresh_data_per_replication: bool = True
    dataset: list | None = None
    level: float | None = None
    k1_analytic: bool = False
    model_options: dict = field(default_factory=dict)
    quadrature: dict | None = None
    optimizer: dict = field(default_factory=dict)
    table_step: float = 0.05

    def __post_init__(self):
        self.k_grid = tuple(int(k) for k in self.k_grid)
        self.estimators = tuple(self.estimators)
        self.validate()

    def validate(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.k_grid or any(b <= a for a, b in zip(self.k_grid, self.k_grid[1:])) or self.k_grid[0] < 1:
            raise ValueError("k_grid must be a nonempty strictly ascending list of positive integers")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ValueError(f"estimators must be a nonempty subset of {ESTIMATORS}; got {sorted(unknown)}")
        if self.n < 1 or self.R < 1:
            raise ValueError("n and R must be >= 1")
        if self.level is not None and not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")

    def build_model(self):
        opts = dict(self.model_options)
        if self.quadrature and self.model == "gumbel":
            opts["rule"] = QuadratureRule(**self.quadrature)
        return make_model(self.model, **opts)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(**self.optimizer)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_grid"] = list(self.k_grid)
        d["estimators"] = list(self.estimators)
        if self.dataset is not None:
            arr = np.asarray(self.dataset, dtype=float)
            d["dataset"] = {"n": int(arr.shape[0]), "sha256": hashlib.sha256(arr.tobytes()).hexdigest()}
        return d


@dataclass
class CellSummary:
    estimator: str
    k: int | None
    estimates: list
    errors: list
    mse: float
    variance_part: float
    bias_sq: float
    mean: list
    mse_se: float
    coverage: float | None = None
    covered: int | None = None
    coverage_evaluated: int | None = None
    wall_time: float = 0.0

    @property
    def valid(self) -> bool:
        return not self.errors

    @property
    def key(self):
        return (self.estimator, self.k)

    def to_dict(self, runtime=False) -> dict:
        d = asdict(self)
        d["valid"] = self.valid
        if not runtime:
            d.pop("wall_time")
        return d


def summarise(estimator, k, estimates, errors, theta_star, wall_time=0.0, covered=None) -> CellSummary:
    """MSE = bias^2 + variance over the successful replications."""
    ok = [np.atleast_1d(e) for e in estimates if e is not None]
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    if ok:
        arr = np.array(ok)
        sq = np.sum((arr - theta_star) ** 2, axis=1)
        mse = float(sq.mean())
        centre = arr.mean(0)
        variance = float(np.mean(np.sum((arr - centre) ** 2, axis=1)))
        mse_se = float(sq.std(ddof=1) / math.sqrt(len(sq))) if len(sq) > 1 else math.nan
        mean = centre.tolist()
    else:
        mse = variance = mse_se = math.nan
        mean = []
    cell = CellSummary(estimator, k, [None if e is None else np.atleast_1d(e).tolist() for e in estimates],
                       errors, mse, variance, mse - variance, mean, mse_se, wall_time=wall_time)
    if covered is not None:
        hits = [c for c in covered if c is not None]
        cell.covered = int(sum(hits))
        cell.coverage_evaluated = len(hits)
        cell.coverage = cell.covered / len(hits) if hits else math.nan
    return cell


@dataclass
class ExperimentReport:
    config: dict
    cells: list
    build: str
    runtime: dict = field(default_factory=dict)
    kind: str = "grid"
    extra: dict = field(default_factory=dict)

    def cell(self, estimator, k=None) -> CellSummary:
        for c in self.cells:
            if c.estimator == estimator and (c.k == k or estimator == "mle"):
                return c
        raise KeyError((estimator, k))

    def to_dict(self, runtime: bool = False) -> dict:
        out = {
            "kind": self.kind,
            "build": self.build,
            "master_seed": self.config.get("master_seed"),
            "config": self.config,
            "cells": [c.to_dict(runtime) for c in self.cells],
        }
        if self.extra:
            out["extra"] = self.extra
        if runtime:
            out["runtime"] = self.runtime
        return out

    def to_json(self, runtime: bool = False) -> str:
        return json.dumps(_jsonable(self.to_dict(runtime)), indent=2, sort_keys=True, allow_nan=True)

    def write_json(self, path, runtime: bool = False):
        Path(path).write_text(self.to_json(runtime) + "\n")

    def write_table1_csv(self, path):
        write_table1_csv(self, path)

    def write_estimates_csv(self, path):
        write_estimates_csv(self, path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, rng.SeedSpec):
        return obj.as_dict()
    return obj


def _num(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_table1_csv(report: ExperimentReport, path):
    """Rows = estimator x {mse, variance}; columns = k."""
    ks = report.config["k_grid"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["estimator", "quantity"] + [f"k={k}" for k in ks])
        for est in [e for e in ESTIMATORS if e in report.config["estimators"]]:
            cells = [report.cell(est, k) for k in ks]
            w.writerow([est, "mse"] + [_num(c.mse) for c in cells])
            w.writerow([est, "variance"] + [_num(c.variance_part) for c in cells])


def write_estimates_csv(report: ExperimentReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["estimator", "k", "replication", "coordinate", "estimate"])
        for c in report.cells:
            for r, est in enumerate(c.estimates):
                for j, v in enumerate(est if est is not None else [None]):
                    w.writerow([c.estimator, "" if c.k is None else c.k, r, j, _num(v)])


def write_rows_csv(rows: list, path):
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\r\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _num(v) if isinstance(v, float) else v for k, v in row.items()})


# running -------------------------------------------------------------------

def _table_for(cache, k, R, seed, lo, hi, step):
    key = (k, str(seed))
    if key not in cache:
        cache[key] = InnerExpectationTable(k, R, seed, lo, hi, step)
    return cache[key]


def estimate_one(name, model, x, k, R, seed, cfg, table=None, k1_analytic=False):
    """One estimate for the harness; returns the theta vector."""
    if name == "mle":
        return exact_mle(model, x, cfg).theta_hat
    if name == "msle-ind":
        return msle_independent(model, x, k, seed, cfg).theta_hat
    if name == "msle-over":
        return msle_overlapping(model, x, k, seed, cfg).theta_hat
    if name == "iwvi":
        if k1_analytic and k == 1 and isinstance(model, GumbelHeterogeneityModel):
            return iwvi_estimate(model, x, 1, 1, seed, cfg, inner="analytic").theta_hat
        return iwvi_estimate(model, x, k, R, seed, cfg, table=table).theta_hat
    raise ValueError(f"unknown estimator {name!r}")


def _datasets(grid: ExperimentGrid, model, root):
    if grid.fresh_data_per_replication:
        return [model.simulate(grid.theta_star, grid.n, root.split("rep", r).split("data")) for r in range(grid.replications)]
    x = np.asarray(grid.dataset, dtype=float) if grid.dataset is not None else model.simulate(
        grid.theta_star, grid.n, root.split("data"))
    x = model.check_dataset(x)
    return [x] * grid.replications


def run_grid(grid: ExperimentGrid, progress=None) -> ExperimentReport:
    """Run every (estimator, k, replication) cell; failures are recorded per cell."""
    grid.validate()
    model = grid.build_model()
    cfg = grid.optimizer_config()
    root = rng.SeedSpec(grid.master_seed)
    t_start = time.perf_counter()
    data = _datasets(grid, model, root)
    gumbel = isinstance(model, GumbelHeterogeneityModel)
    lo = min(table_range(x, model.theta_box)[0] for x in data)
    hi = max(table_range(x, model.theta_box)[1] for x in data)
    tables: dict = {}
    cells = []
    for name in [e for e in ESTIMATORS if e in grid.estimators]:
        for k in ([None] if name == "mle" else grid.k_grid):
            t0 = time.perf_counter()
            estimates, errors, covered = [], [], []
            for r, x in enumerate(data):
                seed = root.split("rep", r).split(name, k or 0)
                table = None
                if name == "iwvi" and gumbel and not (grid.k1_analytic and k == 1):
                    tseed = root.split("iwvi", k) if grid.fresh_data_per_replication else root.split("rep", r).split("iwvi", k)
                    table = _table_for(tables, k, grid.R, tseed, lo, hi, grid.table_step)
                try:
                    theta = estimate_one(name, model, x, k, grid.R, seed, cfg, table, grid.k1_analytic)
                except IWVILabError as exc:
                    estimates.append(None)
                    errors.append({"replication": r, "error": f"{type(exc).__name__}: {exc}"})
                    covered.append(None)
                    continue
                estimates.append(theta)
                if grid.level is not None:
                    try:
                        ci = confidence_interval(theta, sandwich(model, theta, x), grid.level)
                        covered.append(covers(ci, grid.theta_star))
                    except IWVILabError as exc:
                        errors.append({"replication": r, "error": f"sandwich {type(exc).__name__}: {exc}"})
                        covered.append(None)
            if not grid.fresh_data_per_replication and name == "iwvi":
                tables.clear()
            cells.append(summarise(name, k, estimates, errors, grid.theta_star, time.perf_counter() - t0,
                                   covered if grid.level is not None else None))
            if progress:
                progress(cells[-1])
    runtime = {"total_seconds": time.perf_counter() - t_start,
               "cells": {f"{c.estimator}@{c.k}": c.wall_time for c in cells}}
    return ExperimentReport(grid.to_dict(), cells, build_id(), runtime)


def tukey_summary(values) -> dict:
    v = np.sort(np.asarray(values, dtype=float))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return {"mean": float(v.mean()), "std_error": float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan,
            "q1": float(q1), "median": float(med), "q3": float(q3),
            "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
            "outliers": int(v.size - inside.size), "count": int(v.size)}


def boxplot_data(grid: ExperimentGrid) -> ExperimentReport:
    """Fixed data, latent draws varied: quartile summaries per cell plus the exact MLE."""
    if grid.fresh_data_per_replication:
        raise ValueError("boxplot_data needs fresh_data_per_replication = false")
    report = run_grid(grid)
    model = grid.build_model()
    x = _datasets(replace(grid, replications=1), model, rng.SeedSpec(grid.master_seed))[0]
    mle = exact_mle(model, x, grid.optimizer_config()).theta_hat
    summaries = []
    for c in report.cells:
        ok = [e[0] for e in c.estimates if e is not None]
        if ok:
            summaries.append({"estimator": c.estimator, "k": c.k, **tukey_summary(ok)})
    report.kind = "boxplots"
    report.extra = {"mle": mle.tolist(), "summaries": summaries}
    return report


def coverage_experiment(grid: ExperimentGrid, level: float = 0.95) -> ExperimentReport:
    """Fraction of replications whose plug-in interval contains theta*."""
    if not grid.fresh_data_per_replication:
        raise ValueError("coverage needs fresh_data_per_replication = true")
    report = run_grid(replace(grid, level=level))
    report.kind = "coverage"
    report.extra = {"coverage": [{"estimator": c.estimator, "k": c.k, "level": level, "coverage": c.coverage,
                                  "covered": c.covered, "evaluated": c.coverage_evaluated}
                                 for c in report.cells]}
    return report


def phase_k(n: int, beta: float, k_floor: int = 1) -> int:
    """k = max(k_floor, ceil(n^beta)); the floor keeps beta = 0 away from k = 1."""
    # round first so exact powers are not pushed up by floating error
    return max(int(k_floor), int(math.ceil(round(n**beta, 9))))


def phase_sweep(model, theta_star, beta_grid, n_grid, estimator: str, reps: int, seed, R: int = 10_000,
                k_floor: int = 1, cfg: OptimizerConfig | None = None, table_step: float = 0.05) -> dict:
    """Rows (beta, n, k, sqrt(n) * bias, n * var, mean plug-in sandwich) over the grid.

    Datasets are shared across beta (same seeds), so differences between rows
    at fixed n come only from k.
    """
    if isinstance(model, str):
        model = make_model(model)
    root = seed if isinstance(seed, rng.SeedSpec) else rng.SeedSpec(int(seed))
    if any(not 0 <= b <= 2 for b in beta_grid):
        raise ValueError("beta values must lie in [0, 2]")
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be ascending")
    theta_star_v = np.atleast_1d(np.asarray(theta_star, dtype=float))
    data = {n: [model.simulate(theta_star, n, root.split("n", n).split("rep", r)) for r in range(reps)] for n in n_grid}
    all_x = [x for xs in data.values() for x in xs]
    lo = min(table_range(x, model.theta_box)[0] for x in all_x)
    hi = max(table_range(x, model.theta_box)[1] for x in all_x)
    gumbel = isinstance(model, GumbelHeterogeneityModel)
    tables: dict = {}
    rows = []
    t_start = time.perf_counter()
    for beta in beta_grid:
        for n in n_grid:
            k = phase_k(n, beta, k_floor)
            table = None
            if estimator == "iwvi" and gumbel:
                table = _table_for(tables, k, R, root.split("iwvi", k), lo, hi, table_step)
            errs, covs, failures = [], [], 0
            for r, x in enumerate(data[n]):
                try:
                    theta = estimate_one(estimator, model, x, k, R, root.split("n", n).split("rep", r).split(estimator, k),
                                         cfg, table)
                    covs.append(np.diag(sandwich(model, theta, x).cov_hat))
                except IWVILabError:
                    failures += 1
                    continue
                errs.append(theta - theta_star_v)
            errs, covs = np.array(errs), np.array(covs)
            bias = errs.mean(0)
            rows.append({
                "beta": float(beta), "n": int(n), "k": int(k), "reps": len(errs), "failures": failures,
                "bias": float(bias[0]), "sqrt_n_bias": float(math.sqrt(n) * bias[0]),
                "n_var": float(n * errs[:, 0].var(ddof=1)), "sandwich_diag": float(covs[:, 0].mean()),
            })
            rows[-1]["var_ratio"] = rows[-1]["n_var"] / rows[-1]["sandwich_diag"]
    return {
        "kind": "phase",
        "build": build_id(),
        "config": {"model": model.name, "theta_star": theta_star_v.tolist(), "beta_grid": list(map(float, beta_grid)),
                   "n_grid": list(map(int, n_grid)), "estimator": estimator, "reps": reps, "R": R,
                   "k_floor": k_floor, "master_seed": root.master_seed, "seed_path": str(root)},
        "master_seed": root.master_seed,
        "rows": rows,
        "runtime_seconds": time.perf_counter() - t_start,
    }


def phase_report_json(result: dict, runtime: bool = False) -> str:
    out = {k: v for k, v in result.items() if runtime or k != "runtime_seconds"}
    return json.dumps(_jsonable(out), indent=2, sort_keys=True)
