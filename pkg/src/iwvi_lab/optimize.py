"""Deterministic box-constrained maximisation.

One-dimensional problems use a coarse scan of the box followed by golden
section search inside the brackets of the best few scanned local maxima.
Higher dimensions use Nelder-Mead (scipy) from the box centre plus
unscrambled Halton starts.  Objectives must be deterministic: callers freeze
any random draws before handing the closure over.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import BudgetExceeded, NonFiniteObjective

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
METHODS = ("auto", "golden_section", "nelder_mead")


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "auto"
    x_tol: float = 1e-8
    f_tol: float = 1e-10
    max_iter: int = 2000
    multistart_count: int = 5
    scan_points: int = 41

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not (self.x_tol > 0 and self.f_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1 or self.multistart_count < 1:
            raise ValueError("max_iter and multistart_count must be >= 1")
        if self.scan_points < 3:
            raise ValueError("scan_points must be >= 3")

    def to_dict(self):
        return asdict(self)


class MaximizeResult(NamedTuple):
    argmax: np.ndarray
    value: float
    trace: list


class _Tracked:
    """Wraps the objective: checks finiteness and keeps the best-so-far value."""

    def __init__(self, objective, vector: bool):
        self.objective = objective
        self.vector = vector
        self.best = -math.inf
        self.evals = 0

    def __call__(self, x):
        v = self.objective(np.asarray(x, dtype=float) if self.vector else float(x))
        v = float(v)
        self.evals += 1
        if not math.isfinite(v):
            raise NonFiniteObjective(f"objective returned {v} at {x}")
        self.best = max(self.best, v)
        return v


def _as_box(box) -> np.ndarray:
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.shape[1] != 2 or np.any(box[:, 0] >= box[:, 1]):
        raise ValueError("box must be a sequence of (lower, upper) pairs with lower < upper")
    return box


def golden_section(f, lo: float, hi: float, x_tol: float, max_iter: int, trace=None, start=0):
    """Maximise a unimodal ``f`` on [lo, hi]; returns (x, f(x), iterations)."""
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while b - a > x_tol:
        if it >= max_iter:
            raise BudgetExceeded(f"golden section: bracket {b - a:.3g} > x_tol after {max_iter} iterations")
        it += 1
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
        if trace is not None:
            trace.append({"start": start, "iteration": it, "x": [0.5 * (a + b)], "value": max(fc, fd), "best": f.best})
    x = 0.5 * (a + b)
    return x, f(x), it


def _maximize_1d(f: _Tracked, box, cfg: OptimizerConfig) -> MaximizeResult:
    lo, hi = box[0]
    xs = np.linspace(lo, hi, cfg.scan_points)
    fs = np.array([f(x) for x in xs])
    trace = [{"start": -1, "iteration": 0, "x": [float(xs[i])], "value": float(fs[i]), "best": None} for i in range(len(xs))]
    best_so_far = -math.inf
    for rec in trace:
        best_so_far = max(best_so_far, rec["value"])
        rec["best"] = best_so_far
    padded = np.concatenate([[-np.inf], fs, [-np.inf]])
    peaks = [i for i in range(len(xs)) if padded[i + 1] >= padded[i] and padded[i + 1] >= padded[i + 2]]
    # highest first; ties go to the smaller x
    peaks.sort(key=lambda i: (-fs[i], xs[i]))
    candidates = [(float(xs[i]), float(fs[i])) for i in peaks[: cfg.multistart_count]]
    for s, i in enumerate(peaks[: cfg.multistart_count]):
        a, b = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
        x, v, _ = golden_section(f, a, b, cfg.x_tol, cfg.max_iter, trace, start=s)
        candidates.append((x, v))
    x, v = min(candidates, key=lambda c: (-c[1], c[0]))
    return MaximizeResult(np.array([x]), v, trace)


def _simplex(x0, box, scale=0.1):
    width = box[:, 1] - box[:, 0]
    pts = [x0]
    for j in range(len(x0)):
        p = x0.copy()
        step = scale * width[j]
        p[j] = p[j] + step if p[j] + step <= box[j, 1] else p[j] - step
        pts.append(p)
    return np.array(pts)


def _recorder(trace, f, start):
    count = [0]

    def record(intermediate_result):
        count[0] += 1
        trace.append({"start": start, "iteration": count[0], "x": intermediate_result.x.tolist(),
                      "value": -float(intermediate_result.fun), "best": f.best})

    return record


def _maximize_nd(f: _Tracked, box, cfg: OptimizerConfig) -> MaximizeResult:
    dim = box.shape[0]
    centre = box.mean(1)
    starts = [centre]
    if cfg.multistart_count > 1:
        halton = qmc.Halton(d=dim, scramble=False).random(cfg.multistart_count)[1:]
        starts += list(qmc.scale(halton, box[:, 0], box[:, 1]))
    trace, results = [], []
    for s, x0 in enumerate(starts):
        record = _recorder(trace, f, s)
        res = minimize(
            lambda v: -f(v),
            x0,
            method="Nelder-Mead",
            bounds=box,
            callback=record,
            options={"xatol": cfg.x_tol, "fatol": cfg.f_tol, "maxiter": cfg.max_iter,
                     "maxfev": 50 * cfg.max_iter, "initial_simplex": _simplex(np.asarray(x0, float), box)},
        )
        results.append((np.clip(res.x, box[:, 0], box[:, 1]), -float(res.fun), res.status == 0))
    best = min(results, key=lambda r: (-r[1], tuple(r[0])))
    if not best[2]:
        raise BudgetExceeded(f"Nelder-Mead reached max_iter={cfg.max_iter} without meeting tolerances")
    return MaximizeResult(best[0], best[1], trace)


def maximize(objective: Callable, box, cfg: OptimizerConfig | None = None) -> MaximizeResult:
    """Maximise ``objective`` over the compact ``box``.

    ``objective`` takes a float in 1D and an array otherwise.  The returned
    trace lists every iteration with the best value seen so far, which is
    non-decreasing.
    """
    cfg = cfg or OptimizerConfig()
    box = _as_box(box)
    method = cfg.method
    if method == "auto":
        method = "golden_section" if box.shape[0] == 1 else "nelder_mead"
    if method == "golden_section":
        if box.shape[0] != 1:
            raise ValueError("golden_section is one-dimensional")
        return _maximize_1d(_Tracked(objective, vector=False), box, cfg)
    return _maximize_nd(_Tracked(objective, vector=True), box, cfg)
