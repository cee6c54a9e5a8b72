"""Plug-in sandwich covariance J2^-1 J1 J2^-1 and Wald intervals.

Scores and Hessians of log p_theta(x) are central finite differences of the
model's exact log-marginal, one code path for every model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import BoundaryTooClose, SingularJ2
from .models import Xi

COND_CAP = 1e12


def default_step(theta) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return 1e-5 * np.maximum(1.0, np.abs(theta))


def _logp(model, theta, x):
    return np.asarray(model.exact_log_marginal(Xi(theta, np.zeros(model.phi_dim)), x), dtype=float)


def _observations(model, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if getattr(model, "x_dim", 1) > 1 and x.ndim == 1:
        x = x[None]
    return model.check_dataset(x)


def score_and_hessian(model, theta, x, fd_step=None):
    """Per-observation score (n, d) and Hessian (n, d, d) by central differences.

    ``x`` may be a single observation or a dataset.  Raises BoundaryTooClose
    unless theta sits at least 2 * step inside the model's theta box.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = theta.size
    h = default_step(theta) if fd_step is None else np.broadcast_to(np.asarray(fd_step, dtype=float), (d,)).copy()
    box = model.theta_box
    if np.any(theta - 2 * h < box[:, 0]) or np.any(theta + 2 * h > box[:, 1]):
        raise BoundaryTooClose(f"theta={theta.tolist()} is within 2*step of the box {box.tolist()}")
    xs = _observations(model, x)
    f0 = _logp(model, theta, xs)
    n = f0.shape[0]
    e = np.eye(d)
    fp = [_logp(model, theta + h[j] * e[j], xs) for j in range(d)]
    fm = [_logp(model, theta - h[j] * e[j], xs) for j in range(d)]
    score = np.stack([(fp[j] - fm[j]) / (2 * h[j]) for j in range(d)], axis=-1)
    hess = np.empty((n, d, d))
    for j in range(d):
        hess[:, j, j] = (fp[j] - 2 * f0 + fm[j]) / h[j] ** 2
        for l in range(j + 1, d):
            pp = _logp(model, theta + h[j] * e[j] + h[l] * e[l], xs)
            pm = _logp(model, theta + h[j] * e[j] - h[l] * e[l], xs)
            mp = _logp(model, theta - h[j] * e[j] + h[l] * e[l], xs)
            mm = _logp(model, theta - h[j] * e[j] - h[l] * e[l], xs)
            hess[:, j, l] = hess[:, l, j] = (pp - pm - mp + mm) / (4 * h[j] * h[l])
    return score, hess


def richardson_score(model, theta, x, h=1e-2, levels=4):
    """Score by Richardson extrapolation of central differences (test oracle)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    xs = _observations(model, x)
    out = []
    for j in range(theta.size):
        e = np.eye(theta.size)[j]
        table = []
        for i in range(levels):
            hi = h / 2**i
            row = [(_logp(model, theta + hi * e, xs) - _logp(model, theta - hi * e, xs)) / (2 * hi)]
            for m in range(1, i + 1):
                row.append(row[m - 1] + (row[m - 1] - table[i - 1][m - 1]) / (4**m - 1))
            table.append(row)
        out.append(table[-1][-1])
    return np.stack(out, axis=-1)


@dataclass
class SandwichEstimate:
    j1_hat: np.ndarray
    j2_hat: np.ndarray
    cov_hat: np.ndarray
    condition_number_j2: float
    n: int

    def to_dict(self):
        return {
            "j1_hat": self.j1_hat.tolist(),
            "j2_hat": self.j2_hat.tolist(),
            "cov_hat": self.cov_hat.tolist(),
            "condition_number_j2": self.condition_number_j2,
            "n": self.n,
        }


def sandwich(model, theta_hat, dataset, fd_step=None, cond_cap: float = COND_CAP) -> SandwichEstimate:
    """J1 = mean score score^T, J2 = mean Hessian, cov = J2^-1 J1 J2^-1."""
    x = model.check_dataset(dataset)
    score, hess = score_and_hessian(model, theta_hat, x, fd_step)
    n = score.shape[0]
    j1 = score.T @ score / n
    j2 = hess.mean(0)
    j2 = 0.5 * (j2 + j2.T)
    cond = float(np.linalg.cond(j2))
    if not np.isfinite(cond) or cond > cond_cap:
        raise SingularJ2(f"condition number of J2 is {cond:.3g} (cap {cond_cap:.3g})")
    inv = np.linalg.inv(j2)
    cov = inv @ j1 @ inv
    return SandwichEstimate(j1, j2, 0.5 * (cov + cov.T), cond, n)


def confidence_interval(theta_hat, sw: SandwichEstimate, level: float = 0.95, n: int | None = None) -> np.ndarray:
    """Rows (lower, upper) of theta_hat_j +- z * sqrt(cov_jj / n)."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    n = sw.n if n is None else n
    z = norm.ppf(0.5 * (1 + level))
    half = z * np.sqrt(np.maximum(np.diag(sw.cov_hat), 0.0) / n)
    return np.column_stack([theta_hat - half, theta_hat + half])


def covers(interval: np.ndarray, theta_star) -> bool:
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    return bool(np.all((interval[:, 0] <= theta_star) & (theta_star <= interval[:, 1])))
