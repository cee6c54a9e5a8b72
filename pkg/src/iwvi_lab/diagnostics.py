"""Variational gap, relative importance-weight variance and lemma checks.

Notation: for an observation x and k proposal draws, S = k^-1 sum_l r_l with
r = p_theta(x, z) / (q_phi(z | x) p_theta(x)) the normalised ratio, so
E[S] = 1.  The per-observation gap is D = E[-log S] and the relative
variance is V = E[(r - 1)^2].  For large k, k * D -> V / 2.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import digamma

from . import rng
from .errors import MarginalUnavailable
from .estimators import logmeanexp, nested_plan
from .models import LatentVariableModel, Xi

_CHUNK = 1 << 22


def _require_marginal(model):
    if not callable(getattr(model, "exact_log_marginal", None)):
        raise MarginalUnavailable(f"{type(model).__name__} has no exact marginal; refusing to self-normalise")


@dataclass
class GapEstimate:
    xi: Xi
    k: int
    gap_per_obs: float
    k_times_gap: float
    mc_std_error: float
    R: int

    def to_dict(self):
        d = asdict(self)
        d["xi"] = self.xi.to_dict()
        return d


@dataclass
class RelVarEstimate:
    xi: Xi
    v_hat: float
    mc_std_error: float
    draw_count: int

    def to_dict(self):
        d = asdict(self)
        d["xi"] = self.xi.to_dict()
        return d


def estimate_gap(
    model: LatentVariableModel, dataset, xi: Xi, k: int, R: int, seed: rng.SeedSpec, control_variate: bool = True
) -> GapEstimate:
    """D = n^-1 sum_i log p(x_i) - n^-1 (IWVI objective at xi), with MC error over R replicates.

    With ``control_variate`` each replicate contributes (S - 1) - log S
    instead of -log S; the two have the same mean because E[S] = 1, and the
    former is O(1/k) in spread rather than O(1/sqrt k).
    """
    _require_marginal(model)
    model.check_xi(xi)
    x = model.check_dataset(dataset)
    n = x.shape[0]
    xe = model.expand_obs(x)
    log_p = np.asarray(model.exact_log_marginal(xi, x))[:, None]  # (n, 1)
    plan = nested_plan(n, k, R, seed)
    per_rep = []
    for eps in plan.nested_blocks(model):
        log_s = logmeanexp(model.log_ratio_from_noise(xi, xe, eps) - log_p, axis=-1)  # (B, n)
        vals = np.expm1(log_s) - log_s if control_variate else -log_s
        per_rep.append(vals.mean(-1))
    per_rep = np.concatenate(per_rep)
    gap = float(per_rep.mean())
    se = float(per_rep.std(ddof=1) / math.sqrt(R)) if R > 1 else math.inf
    return GapEstimate(xi, k, gap, k * gap, se, R)


def estimate_relative_variance(model, dataset, xi: Xi, draw_count: int, seed: rng.SeedSpec) -> RelVarEstimate:
    """n^-1 sum_i E[(r_i - 1)^2] from ``draw_count`` proposal draws per observation."""
    _require_marginal(model)
    model.check_xi(xi)
    x = model.check_dataset(dataset)
    n = x.shape[0]
    log_p = np.asarray(model.exact_log_marginal(xi, x))
    rows = max(1, _CHUNK // draw_count)
    means, variances = [], []
    for b, s in enumerate(range(0, n, rows)):
        xb = x[s : s + rows]
        eps = model.sample_noise(seed.split("obs-block", b), (xb.shape[0], draw_count))
        log_r = model.log_ratio_from_noise(xi, model.expand_obs(xb), eps) - log_p[s : s + rows, None]
        sq = np.expm1(log_r) ** 2
        means.append(sq.mean(-1))
        variances.append(sq.var(-1, ddof=1) if draw_count > 1 else np.full(xb.shape[0], np.inf))
    means, variances = np.concatenate(means), np.concatenate(variances)
    return RelVarEstimate(xi, float(means.mean()), float(math.sqrt(variances.sum() / draw_count) / n), draw_count)


def gap_expansion_check(model, dataset, xi: Xi, k_grid, R: int, seed: rng.SeedSpec, v_draws: int = 100_000):
    """Rows (k, k*gap, V/2, relative error) with V estimated by Monte Carlo."""
    rv = estimate_relative_variance(model, dataset, xi, v_draws, seed.split("relvar"))
    half_v = 0.5 * rv.v_hat
    rows = []
    for k in k_grid:
        g = estimate_gap(model, dataset, xi, int(k), R, seed.split("gap", int(k)))
        rel = abs(g.k_times_gap - half_v) / half_v if half_v > 0 else abs(g.k_times_gap)
        rows.append(
            {"k": int(k), "gap": g.gap_per_obs, "k_times_gap": g.k_times_gap, "k_times_gap_se": k * g.mc_std_error,
             "half_v": half_v, "half_v_se": 0.5 * rv.mc_std_error, "relative_error": rel}
        )
    shrinking = all(b["relative_error"] <= a["relative_error"] for a, b in zip(rows, rows[1:]))
    return {"xi": xi.to_dict(), "R": R, "v_draws": v_draws, "rows": rows, "relative_error_shrinks": shrinking}


def relative_variance_grid(model, dataset, theta, a_grid, b_grid, draw_count: int, seed: rng.SeedSpec):
    """Estimated V(theta, (a, b)) on a grid; the same noise is reused at every cell."""
    a_grid, b_grid = np.asarray(a_grid, float), np.asarray(b_grid, float)
    d = model.theta_dim
    values = np.empty((a_grid.size, b_grid.size))
    for i, a in enumerate(a_grid):
        for j, b in enumerate(b_grid):
            xi = Xi(np.full(d, theta) if np.ndim(theta) == 0 else theta, np.concatenate([np.full(d, a), np.full(d, b)]))
            values[i, j] = estimate_relative_variance(model, dataset, xi, draw_count, seed).v_hat
    i, j = np.unravel_index(np.argmin(values), values.shape)
    return {"a_grid": a_grid.tolist(), "b_grid": b_grid.tolist(), "v_hat": values.tolist(),
            "argmin": (float(a_grid[i]), float(b_grid[j]))}


# lemma checks ---------------------------------------------------------------

def _log1p_minus(t, order: int):
    """log(1 + t) minus its Taylor polynomial of the given order, accurate near t = 0."""
    t = np.asarray(t, dtype=float)
    direct = np.log1p(t) - t + (0.5 * t * t if order >= 2 else 0.0)
    small = np.abs(t) < 0.1
    series = np.zeros_like(t)
    ts = np.where(small, t, 0.0)
    for j in range(order + 1, 40):
        series += (-1) ** (j + 1) * ts**j / j
    return np.where(small, series, direct)


def check_log_bounds(sample_count: int, seed: rng.SeedSpec, log_range: float = 8.0) -> dict:
    """|log r - (r-1)| <= |(r-1) log r| and |log r - (r-1) + (r-1)^2/2| <= (r-1)^2 |log r|
    for r log-uniform on (e^-8, e^8).  Exact comparison, no tolerance."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    u = rng.sample_uniform(seed, sample_count)
    r = np.exp(log_range * (2.0 * u - 1.0))
    t = r - 1.0
    log_r = np.log1p(t)
    lhs1, rhs1 = np.abs(_log1p_minus(t, 1)), np.abs(t * log_r)
    lhs2, rhs2 = np.abs(_log1p_minus(t, 2)), t * t * np.abs(log_r)
    bad1, bad2 = np.flatnonzero(lhs1 > rhs1), np.flatnonzero(lhs2 > rhs2)
    return {
        "check": "log_bounds",
        "sample_count": sample_count,
        "violations_first": [float(r[i]) for i in bad1[:20]],
        "violations_second": [float(r[i]) for i in bad2[:20]],
        "violation_count": int(bad1.size + bad2.size),
        "passed": bool(bad1.size == 0 and bad2.size == 0),
    }


def _centered_draws(dist: str, gen: np.random.Generator, shape):
    if dist == "constant":
        return np.zeros(shape)
    if dist == "normal":
        return gen.standard_normal(shape)
    if dist == "lognormal":
        return np.exp(gen.standard_normal(shape)) - math.exp(0.5)
    raise ValueError(f"unknown distribution {dist!r}")


def check_mz_scaling(moment_s: float, k_grid, reps: int, seed: rng.SeedSpec, dist: str = "lognormal", cap: float = 3.0):
    """sqrt(k) * ||mean of k centred variates||_s should stay within a bounded band over k."""
    if moment_s < 2:
        raise ValueError("moment_s must be >= 2")
    rows = []
    for k in k_grid:
        gen = seed.split("k", int(k)).generator()
        total = np.zeros(reps)
        for s in range(0, int(k), max(1, _CHUNK // reps)):
            total += _centered_draws(dist, gen, (reps, min(int(k) - s, max(1, _CHUNK // reps)))).sum(1)
        dev = total / k
        norm = float(np.mean(np.abs(dev) ** moment_s) ** (1.0 / moment_s))
        rows.append({"k": int(k), "s_norm": norm, "scaled": math.sqrt(k) * norm})
    scaled = np.array([r["scaled"] for r in rows])
    ratio = 1.0 if np.all(scaled == 0) else float(scaled.max() / scaled.min()) if scaled.min() > 0 else math.inf
    return {"check": "mz_scaling", "dist": dist, "moment_s": moment_s, "reps": reps, "rows": rows,
            "ratio": ratio, "cap": cap, "passed": bool(ratio <= cap)}


AUTONORM_DISTS = ("zero", "unit_normal", "lognormal_mult")


def _autonorm_pairs(dist, gen, shape, sigma=0.5):
    if dist == "zero":
        return np.ones(shape), np.zeros(shape)
    if dist == "unit_normal":
        return np.ones(shape), gen.standard_normal(shape)
    if dist == "lognormal_mult":
        u = np.exp(sigma * gen.standard_normal(shape) - 0.5 * sigma * sigma)
        return u, u * gen.standard_normal(shape)
    raise ValueError(f"unknown distribution {dist!r}")


def _alpha_norm(v, alpha):
    return float(np.mean(np.abs(v) ** alpha) ** (1.0 / alpha))


def check_autonorm_bound(alpha: float, k_grid, reps: int, seed: rng.SeedSpec, dists=AUTONORM_DISTS, boot: int = 200):
    """||sum V / sum U||_alpha <= k^(1/alpha) ||V_1 / U_1||_alpha, within 3 combined bootstrap SEs."""
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    out = []
    for dist in dists:
        s = seed.split(dist)
        u1, v1 = _autonorm_pairs(dist, s.split("single").generator(), reps)
        r1 = v1 / u1
        base = _alpha_norm(r1, alpha)
        idx1 = s.split("boot-single").generator().integers(0, reps, size=(boot, reps))
        base_se = float(np.std([_alpha_norm(r1[i], alpha) for i in idx1], ddof=1))
        rows = []
        for k in k_grid:
            gen = s.split("k", int(k)).generator()
            u, v = _autonorm_pairs(dist, gen, (reps, int(k)))
            w = v.sum(1) / u.sum(1)
            norm = _alpha_norm(w, alpha)
            idx = s.split("boot", int(k)).generator().integers(0, reps, size=(boot, reps))
            se = float(np.std([_alpha_norm(w[i], alpha) for i in idx], ddof=1))
            bound = k ** (1.0 / alpha) * base
            # both sides are estimates, so the tolerance carries both bootstrap errors
            se = math.hypot(se, k ** (1.0 / alpha) * base_se)
            rows.append({"k": int(k), "w_norm": norm, "bound": bound, "boot_se": se, "holds": bool(norm <= bound + 3 * se)})
        out.append({"dist": dist, "rows": rows, "passed": all(r["holds"] for r in rows)})
    return {"check": "autonorm_bound", "alpha": alpha, "reps": reps, "by_dist": out,
            "passed": all(d["passed"] for d in out)}


LOG_MEAN_DISTS = ("constant", "exp", "lognormal")


def log_mean_oracle(dist: str, m: int):
    """Closed-form E[log of the mean of m draws] where known."""
    if dist == "constant":
        return 0.0
    if dist == "exp":
        return float(digamma(m) - math.log(m))
    return None


def _sample_means(dist, gen, reps, m, sigma=1.0):
    if dist == "constant":
        return np.ones(reps)
    if dist == "exp":
        # the mean of m unit exponentials is Gamma(m, 1/m)
        return gen.standard_gamma(m, size=reps) / m
    if dist == "lognormal":
        total = np.zeros(reps)
        step = max(1, _CHUNK // reps)
        for s in range(0, m, step):
            total += np.exp(sigma * gen.standard_normal((reps, min(step, m - s))) - 0.5 * sigma * sigma).sum(1)
        return total / m
    raise ValueError(f"unknown distribution {dist!r}")


def check_log_mean_convergence(dist: str, m_grid, reps: int, seed: rng.SeedSpec, abs_tol: float = 1e-3):
    """E[log(m^-1 sum U)] -> 0 for positive U with mean 1.

    Estimated with the control variate log(mean) - (mean - 1), which has the
    same expectation because the sample mean is unbiased for 1.
    """
    rows = []
    for m in m_grid:
        gen = seed.split("m", int(m)).generator()
        vals, done = [], 0
        while done < reps:
            size = min(reps - done, _CHUNK)
            u = _sample_means(dist, gen, size, int(m))
            vals.append(np.log(u) - (u - 1.0))
            done += size
        vals = np.concatenate(vals)
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else math.inf
        rows.append({"m": int(m), "estimate": est, "std_error": se, "oracle": log_mean_oracle(dist, int(m))})
    mags = [abs(r["estimate"]) for r in rows]
    decreasing = all(b <= a + 3 * r["std_error"] for a, b, r in zip(mags, mags[1:], rows[1:]))
    last = rows[-1]
    final_ok = abs(last["estimate"]) <= max(3 * last["std_error"], abs_tol)
    return {"check": "log_mean_convergence", "dist": dist, "reps": reps, "rows": rows,
            "decreasing": bool(decreasing), "final_small": bool(final_ok), "passed": bool(decreasing and final_ok)}


def three_sig_match(value: float, reference: float) -> bool:
    """True when value agrees with reference to three significant digits."""
    if reference == 0:
        return value == 0
    unit = 10.0 ** (math.floor(math.log10(abs(reference))) - 2)
    return abs(value - reference) <= 0.5 * unit


def run_lemma_suite(seed: rng.SeedSpec, scale: float = 1.0) -> dict:
    """All four lemma checks at default sizes (``scale`` shrinks them for smoke runs)."""
    n = lambda v: max(10, int(v * scale))  # noqa: E731
    reports = {
        "log_bounds": check_log_bounds(n(1_000_000), seed.split("log-bounds")),
        "mz_scaling": check_mz_scaling(4, [10, 100, 1000], n(2000), seed.split("mz")),
        "autonorm": check_autonorm_bound(2.0, [1, 10, 100, 1000], n(2000), seed.split("autonorm")),
        "log_mean": {d: check_log_mean_convergence(d, [1, 10, 100, 1000], n(20000), seed.split("log-mean", i))
                     for i, d in enumerate(LOG_MEAN_DISTS)},
    }
    reports["passed"] = bool(
        reports["log_bounds"]["passed"] and reports["mz_scaling"]["passed"] and reports["autonorm"]["passed"]
        and all(r["passed"] for r in reports["log_mean"].values())
    )
    return reports
