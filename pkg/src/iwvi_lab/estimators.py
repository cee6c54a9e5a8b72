"""Exact MLE, MSLE (independent / overlapping draws) and IWVI.

Every stochastic objective is built from a frozen :class:`DrawPlan` so the
optimiser sees a deterministic function (common random numbers).  IWVI
replaces the expectation over importance samples by an average over ``R``
replicate sets of reparameterisation noise; because the noise law does not
depend on the parameters, the same frozen noise serves every xi.

For the Gumbel model the importance ratio depends on (theta, x) only through
u = x - theta.  With the replicate noise shared across observations the IWVI
objective is sum_i h(x_i - theta) for a single smooth function h, which
:class:`InnerExpectationTable` evaluates once on a grid and interpolates.
This is what makes k in the thousands with R = 10^4 affordable.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import rng
from .errors import EmptyDataset, IWVILabError
from .models import EULER_GAMMA, GumbelHeterogeneityModel, LatentVariableModel, Xi
from .optimize import OptimizerConfig, maximize
from .quadrature import LOG_SQRT_2PI

ESTIMATORS = ("mle", "msle-ind", "msle-over", "iwvi")
INNER_MODES = ("auto", "table", "direct", "analytic")
_CHUNK = 1 << 22  # elements per vectorised block


def logmeanexp(a, axis=-1):
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):  # all -inf along axis gives -inf, as it should
        out = np.log(np.mean(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


@dataclass(frozen=True)
class DrawPlan:
    """Frozen randomness behind one estimator call.

    ``variant`` is ``independent`` (noise of shape (n, k)), ``overlapping``
    (k draws shared by all observations) or ``nested`` (R replicate sets,
    each (n, k) or, with ``shared``, k draws shared across observations).
    Nested noise is regenerated block by block from ``seed`` rather than
    held in memory.
    """

    variant: str
    k: int
    seed: rng.SeedSpec
    n: int
    R: int = 1
    shared: bool = False
    noise: np.ndarray | None = field(default=None, repr=False)
    block: int = 256

    def __post_init__(self):
        if self.variant not in ("independent", "overlapping", "nested"):
            raise ValueError(f"unknown draw plan variant {self.variant!r}")
        if self.k < 1 or self.R < 1:
            raise ValueError("k and R must be >= 1")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.variant, self.k, self.n, self.R, self.shared, self.block, str(self.seed))).encode())
        if self.noise is not None:
            h.update(np.ascontiguousarray(self.noise).tobytes())
        return h.hexdigest()

    def nested_blocks(self, model: LatentVariableModel):
        """Yield noise blocks of shape (B, n or 1, k[, d]) covering all R replicates."""
        per = self.k * (1 if self.shared else self.n)
        B = max(1, min(self.block, _CHUNK // max(per, 1)))
        for b, start in enumerate(range(0, self.R, B)):
            size = min(B, self.R - start)
            shape = (size, 1, self.k) if self.shared else (size, self.n, self.k)
            yield model.sample_noise(self.seed.split("block", b), shape)


def independent_plan(model, n: int, k: int, seed: rng.SeedSpec) -> DrawPlan:
    return DrawPlan("independent", k, seed, n, noise=model.sample_noise(seed, (n, k)))


def overlapping_plan(model, n: int, k: int, seed: rng.SeedSpec) -> DrawPlan:
    return DrawPlan("overlapping", k, seed, n, noise=model.sample_noise(seed, (1, k)))


def nested_plan(n: int, k: int, R: int, seed: rng.SeedSpec, shared: bool = False) -> DrawPlan:
    return DrawPlan("nested", k, seed, n, R=R, shared=shared)


@dataclass
class EstimateResult:
    estimator: str
    xi_hat: Xi
    objective_value: float
    plan_fingerprint: str
    optimizer_trace: list
    wall_time: float
    k: int | None = None
    R: int | None = None

    @property
    def theta_hat(self) -> np.ndarray:
        return self.xi_hat.theta

    def to_dict(self, trace: bool = False) -> dict:
        out = {
            "estimator": self.estimator,
            "xi_hat": self.xi_hat.to_dict(),
            "objective_value": self.objective_value,
            "plan_fingerprint": self.plan_fingerprint,
            "k": self.k,
            "R": self.R,
            "wall_time": self.wall_time,
            "optimizer_iterations": len(self.optimizer_trace),
        }
        if trace:
            out["optimizer_trace"] = self.optimizer_trace
        return out

    def same_as(self, other: "EstimateResult") -> bool:
        """Equality of everything except wall time."""
        return (
            self.estimator == other.estimator
            and self.xi_hat == other.xi_hat
            and self.objective_value == other.objective_value
            and self.plan_fingerprint == other.plan_fingerprint
            and self.optimizer_trace == other.optimizer_trace
        )


def _dataset(model, dataset) -> np.ndarray:
    x = model.check_dataset(dataset)
    if x.shape[0] == 0:
        raise EmptyDataset("dataset has no observations")
    return x


def _run(estimator, model, objective, box, cfg, fingerprint, theta_only, k=None, R=None, fixed_phi=None):
    t0 = time.perf_counter()
    res = maximize(objective, box, cfg)
    if theta_only:
        xi = Xi(res.argmax, fixed_phi if fixed_phi is not None else np.zeros(model.phi_dim))
    else:
        xi = model.xi_from_vector(res.argmax)
    return EstimateResult(estimator, xi, res.value, fingerprint, res.trace, time.perf_counter() - t0, k, R)


def _default_phi(model, phi):
    if phi is not None:
        return np.asarray(phi, dtype=float).ravel()
    if model.phi_dim == 0:
        return np.zeros(0)
    # proposal N(x/2, s2): the posterior-mean slope with an uninformed intercept
    return np.concatenate([np.full(model.d, 0.5), np.zeros(model.d)])


def exact_mle(model: LatentVariableModel, dataset, cfg: OptimizerConfig | None = None) -> EstimateResult:
    """argmax_theta sum_i log p_theta(x_i) with the model's exact marginal."""
    x = _dataset(model, dataset)
    phi = np.zeros(model.phi_dim)

    def objective(theta):
        return float(np.sum(model.exact_log_marginal(Xi(theta, phi), x)))

    fp = hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()
    return _run("mle", model, objective, model.theta_box, cfg, fp, True, fixed_phi=phi)


def msle_objective(model, x, plan: DrawPlan, phi):
    """theta -> sum_i log(k^-1 sum_l w(theta, x_i, z_il)) with frozen latents."""
    xi0 = Xi(model.theta_box.mean(1), phi)
    xe = model.expand_obs(x)
    z = model.reparam_draw(xi0, xe, plan.noise)  # depends on phi only

    def objective(theta):
        xi = Xi(theta, phi)
        return float(np.sum(logmeanexp(model.log_importance_ratio(xi, xe, z), axis=1)))

    return objective


def msle_independent(model, dataset, k: int, seed: rng.SeedSpec, cfg: OptimizerConfig | None = None, phi=None):
    """MSLE with a fresh set of k draws per observation."""
    x = _dataset(model, dataset)
    plan = independent_plan(model, x.shape[0], k, seed)
    phi = _default_phi(model, phi)
    obj = msle_objective(model, x, plan, phi)
    return _run("msle-ind", model, obj, model.theta_box, cfg, plan.fingerprint(), True, k=k, fixed_phi=phi)


def msle_overlapping(model, dataset, k: int, seed: rng.SeedSpec, cfg: OptimizerConfig | None = None, phi=None):
    """MSLE with one set of k draws reused by every observation."""
    x = _dataset(model, dataset)
    plan = overlapping_plan(model, x.shape[0], k, seed)
    phi = _default_phi(model, phi)
    obj = msle_objective(model, x, plan, phi)
    return _run("msle-over", model, obj, model.theta_box, cfg, plan.fingerprint(), True, k=k, fixed_phi=phi)


def gumbel_inner_log_weights(u, eps):
    """log N(u; eps, 1) for a grid of u against noise ``eps`` (any shape)."""
    u = np.asarray(u, dtype=float)
    return -LOG_SQRT_2PI - 0.5 * (u[(...,) + (None,) * np.ndim(eps)] - eps) ** 2


def gumbel_k1_inner(u):
    """E log N(u; z, 1) for z standard Gumbel: mean gamma, variance pi^2/6."""
    u = np.asarray(u, dtype=float)
    return -LOG_SQRT_2PI - 0.5 * ((u - EULER_GAMMA) ** 2 + np.pi**2 / 6.0)


class InnerExpectationTable:
    """h(u) = R^-1 sum_r log(k^-1 sum_l N(u; eps_rl, 1)) for the Gumbel model.

    Values are computed exactly on a uniform grid over [u_lo, u_hi] and joined
    by a cubic spline.  Points outside the grid are evaluated directly from
    the (regenerated) frozen noise, which is exact but slow.
    """

    def __init__(self, k: int, R: int, seed: rng.SeedSpec, u_lo: float, u_hi: float, step: float = 0.05):
        if not u_lo < u_hi:
            raise ValueError("u_lo must be below u_hi")
        self.plan = nested_plan(1, k, R, seed, shared=True)
        self.k, self.R, self.step = k, R, step
        count = int(math.ceil((u_hi - u_lo) / step)) + 1
        self.grid = u_lo + step * np.arange(count)
        self.values = self.direct(self.grid)
        self.spline = CubicSpline(self.grid, self.values)

    @property
    def u_range(self):
        return float(self.grid[0]), float(self.grid[-1])

    def direct(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        total = np.zeros(u.shape)
        model = GumbelHeterogeneityModel()
        for eps in self.plan.nested_blocks(model):
            eps = eps[:, 0, :]  # (B, k)
            # linear in u: log N(u; e, 1) = -u^2/2 + u e - e^2/2 - log sqrt(2 pi)
            half_sq = -0.5 * eps * eps
            g_chunk = max(1, _CHUNK // eps.size)
            for s in range(0, u.size, g_chunk):
                uu = u[s : s + g_chunk]
                a = uu[:, None, None] * eps[None] + half_sq[None]
                total[s : s + g_chunk] += logmeanexp(a, axis=-1).sum(-1)
        return total / self.R - 0.5 * u * u - LOG_SQRT_2PI

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = self.spline(u)
        lo, hi = self.u_range
        outside = (u < lo) | (u > hi)
        if np.any(outside):
            out = np.array(out, copy=True)
            out[outside] = self.direct(u[outside])
        return out

    def fingerprint(self) -> str:
        return hashlib.sha256(
            (self.plan.fingerprint() + repr(self.u_range) + repr(self.step)).encode()
        ).hexdigest()


def table_range(x, theta_box, margin: float = 0.5):
    """u-range needed to evaluate sum_i h(x_i - theta) for every theta in the box."""
    x = np.asarray(x, dtype=float)
    lo, hi = np.asarray(theta_box, dtype=float).reshape(-1)[:2]
    return float(np.min(x) - hi - margin), float(np.max(x) - lo + margin)


def iwvi_direct_objective(model, x, plan: DrawPlan):
    """xi-vector -> sum_i R^-1 sum_r log(k^-1 sum_l w(xi, x_i, g_phi(x_i, eps)))."""
    xe = model.expand_obs(x)
    blocks = list(plan.nested_blocks(model))

    def objective(v):
        xi = model.xi_from_vector(v)
        total = 0.0
        for eps in blocks:
            total += float(np.sum(logmeanexp(model.log_ratio_from_noise(xi, xe, eps), axis=-1)))
        return total / plan.R

    return objective


def iwvi_estimate(
    model: LatentVariableModel,
    dataset,
    k: int,
    R: int,
    seed: rng.SeedSpec,
    cfg: OptimizerConfig | None = None,
    inner: str = "auto",
    table: InnerExpectationTable | None = None,
    shared: bool = False,
):
    """Maximise the Monte Carlo objective over xi = (theta, phi).

    ``inner`` selects how the expectation over importance samples is formed:
    ``analytic`` (Gumbel model, k = 1: exact), ``table`` (Gumbel model:
    shared-noise average interpolated from :class:`InnerExpectationTable`),
    ``direct`` (frozen noise evaluated at every xi; any model).  ``auto``
    picks ``table`` for the Gumbel model and ``direct`` otherwise.
    """
    if inner not in INNER_MODES:
        raise ValueError(f"inner must be one of {INNER_MODES}")
    if k < 1 or R < 1:
        raise ValueError("k and R must be >= 1")
    x = _dataset(model, dataset)
    gumbel = isinstance(model, GumbelHeterogeneityModel)
    if inner == "auto":
        inner = "table" if gumbel else "direct"
    if inner in ("analytic", "table") and not gumbel:
        raise IWVILabError(f"inner={inner!r} is only available for the Gumbel model")

    if inner == "analytic":
        if k != 1:
            raise IWVILabError("the analytic inner expectation is only available at k = 1")

        def objective(theta):
            return float(np.sum(gumbel_k1_inner(x - theta)))

        return _run("iwvi", model, objective, model.theta_box, cfg, "analytic-k1", True, k=k, R=None)

    if inner == "table":
        if table is None:
            table = InnerExpectationTable(k, R, seed, *table_range(x, model.theta_box))
        elif table.k != k or table.R != R:
            raise IWVILabError("supplied table was built for a different (k, R)")

        def objective(theta):
            return float(np.sum(table(x - theta)))

        return _run("iwvi", model, objective, model.theta_box, cfg, table.fingerprint(), True, k=k, R=R)

    plan = nested_plan(x.shape[0], k, R, seed, shared=shared)
    obj = iwvi_direct_objective(model, x, plan)
    theta_only = model.phi_dim == 0
    if theta_only:
        return _run("iwvi", model, lambda t: obj(np.atleast_1d(t)), model.theta_box, cfg,
                    plan.fingerprint(), True, k=k, R=R)
    return _run("iwvi", model, obj, model.box, cfg, plan.fingerprint(), False, k=k, R=R)


def iwvi_k1_closed_form(dataset) -> float:
    """IWVI estimate at k = 1 for the Gumbel model: mean(x) - Euler's gamma."""
    x = np.asarray(dataset, dtype=float).ravel()
    if x.size == 0:
        raise EmptyDataset("dataset has no observations")
    return float(np.mean(x) - EULER_GAMMA)


def run_estimator(name: str, model, dataset, k=None, R=None, seed=None, cfg=None, **kwargs) -> EstimateResult:
    """Dispatch by CLI name."""
    if name == "mle":
        return exact_mle(model, dataset, cfg)
    if k is None or seed is None:
        raise ValueError(f"{name} needs k and seed")
    if name == "msle-ind":
        return msle_independent(model, dataset, k, seed, cfg, **kwargs)
    if name == "msle-over":
        return msle_overlapping(model, dataset, k, seed, cfg, **kwargs)
    if name == "iwvi":
        return iwvi_estimate(model, dataset, k, R or 1, seed, cfg, **kwargs)
    raise ValueError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
