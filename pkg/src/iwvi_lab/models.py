"""Latent-variable models with importance proposals.

Two concrete models:

* :class:`GumbelHeterogeneityModel` -- x | z ~ N(theta + z, 1) with z standard
  Gumbel.  The proposal is the prior itself, so there is no variational
  parameter (phi has length 0) and the reparameterisation is the identity.
* :class:`GaussianLinearModel` -- z ~ N(theta, I), x | z ~ N(z, I), proposal
  q_phi(z | x) = N(diag(a) x + b, s2 I) with phi = (a, b) and s2 = 2/3 by
  default.  Everything is Gaussian so marginal, posterior and the relative
  variance of the importance ratio have closed forms.

Array conventions: Gumbel observations and latents are scalars, so datasets
are shape ``(n,)``.  Gaussian-linear ones carry a trailing axis of length
``d``; densities sum over it.  All methods broadcast over leading axes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import DimensionMismatch
from .quadrature import DEFAULT_RULE, LOG_SQRT_2PI, QuadratureRule, log_marginal_gumbel

EULER_GAMMA = float(np.euler_gamma)


def _vec(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float)).ravel()


@dataclass(frozen=True, eq=False)
class Xi:
    """Joint parameter: model part ``theta`` and variational part ``phi``."""

    theta: np.ndarray
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "theta", _vec(self.theta))
        object.__setattr__(self, "phi", _vec(self.phi))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.phi])

    def __eq__(self, other):
        if not isinstance(other, Xi):
            return NotImplemented
        return np.array_equal(self.theta, other.theta) and np.array_equal(self.phi, other.phi)

    def __hash__(self):
        return hash((self.theta.tobytes(), self.phi.tobytes()))

    def to_dict(self) -> dict:
        return {"theta": self.theta.tolist(), "phi": self.phi.tolist()}

    def __repr__(self):
        return f"Xi(theta={self.theta.tolist()}, phi={self.phi.tolist()})"


@dataclass(frozen=True)
class OracleBundle:
    """Closed-form facts about a model, keyed by name (see each model's docs)."""

    model: str
    facts: dict


def _log_normal(v, mean, var):
    return -LOG_SQRT_2PI - 0.5 * np.log(var) - 0.5 * (v - mean) ** 2 / var


class LatentVariableModel:
    """Shared plumbing.  Subclasses provide the densities."""

    name = "base"
    theta_dim: int
    phi_dim: int

    @property
    def box(self) -> np.ndarray:
        """Stacked (lower, upper) bounds for the optimisable vector (theta, phi)."""
        return np.vstack([self.theta_box, self.phi_box]) if self.phi_dim else self.theta_box

    def xi_from_vector(self, v) -> Xi:
        v = _vec(v)
        if v.size != self.theta_dim + self.phi_dim:
            raise DimensionMismatch(f"expected {self.theta_dim + self.phi_dim} parameters, got {v.size}")
        return Xi(v[: self.theta_dim], v[self.theta_dim :])

    def check_xi(self, xi: Xi) -> Xi:
        if xi.theta.size != self.theta_dim or xi.phi.size != self.phi_dim:
            raise DimensionMismatch(
                f"{self.name} expects theta of size {self.theta_dim} and phi of size "
                f"{self.phi_dim}, got {xi.theta.size} and {xi.phi.size}"
            )
        return xi

    def in_box(self, xi: Xi) -> bool:
        v, box = xi.vector, self.box
        return bool(np.all(v >= box[:, 0]) and np.all(v <= box[:, 1]))

    def log_joint(self, xi: Xi, x, z):
        return self.log_prior(xi, z) + self.log_conditional(xi, x, z)

    def log_importance_ratio(self, xi: Xi, x, z):
        """log p_theta(x, z) - log q_phi(z | x)."""
        return self.log_joint(xi, x, z) - self.log_proposal(xi, x, z)

    def log_ratio_from_noise(self, xi: Xi, x, eps):
        return self.log_importance_ratio(xi, x, self.reparam_draw(xi, x, eps))

    def expand_obs(self, x):
        """Insert a draw axis after the observation axis."""
        raise NotImplementedError


class GumbelHeterogeneityModel(LatentVariableModel):
    """x_i | z_i ~ N(theta + z_i, 1), z_i standard Gumbel; proposal = prior."""

    name = "gumbel"
    theta_dim = 1
    phi_dim = 0
    x_dim = z_dim = 1

    def __init__(self, theta_box=(-10.0, 10.0), rule: QuadratureRule = DEFAULT_RULE):
        lo, hi = map(float, theta_box)
        if not lo < hi:
            raise ValueError("theta_box must satisfy lower < upper")
        self.theta_box = np.array([[lo, hi]])
        self.phi_box = np.zeros((0, 2))
        self.rule = rule

    def __repr__(self):
        return f"GumbelHeterogeneityModel(theta_box={tuple(self.theta_box[0])}, rule={self.rule})"

    def _theta(self, xi: Xi) -> float:
        return float(self.check_xi(xi).theta[0])

    @staticmethod
    def log_gumbel_density(z):
        z = np.asarray(z, dtype=float)
        return -z - np.exp(-z)

    def log_prior(self, xi, z):
        self.check_xi(xi)
        return self.log_gumbel_density(z)

    def log_conditional(self, xi, x, z):
        return _log_normal(np.asarray(x, dtype=float), self._theta(xi) + np.asarray(z, dtype=float), 1.0)

    def log_proposal(self, xi, x, z):
        self.check_xi(xi)
        return self.log_gumbel_density(z)

    def log_noise_density(self, eps):
        return self.log_gumbel_density(eps)

    def sample_noise(self, stream: rng.SeedSpec, shape):
        return rng.sample_gumbel(stream, shape)

    def reparam_draw(self, xi, x, eps):
        self.check_xi(xi)
        return np.asarray(eps, dtype=float)

    def reparam_log_jacobian(self, xi, x, eps):
        return np.zeros(np.shape(eps))

    def expand_obs(self, x):
        return np.asarray(x, dtype=float)[:, None]

    def check_dataset(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2 and x.shape[1] == 1:
            x = x[:, 0]
        if x.ndim != 1:
            raise DimensionMismatch(f"Gumbel datasets are 1-D, got shape {x.shape}")
        return x

    def exact_log_marginal(self, xi, x):
        return log_marginal_gumbel(self._theta(xi), x, self.rule)

    def simulate(self, theta, n: int, stream: rng.SeedSpec) -> np.ndarray:
        theta = float(_vec(theta)[0])
        z = rng.sample_gumbel(stream.split("latent"), n)
        return theta + z + rng.sample_standard_normal(stream.split("noise"), n)

    def oracle_reference(self) -> OracleBundle:
        """Facts: ``mean_x(theta)`` = theta + gamma; ``elbo_k1_maximizer(x)`` =
        mean(x) - gamma; ``latent_mean`` = gamma; ``latent_var`` = pi^2 / 6."""
        return OracleBundle(
            self.name,
            {
                "euler_gamma": EULER_GAMMA,
                "latent_mean": EULER_GAMMA,
                "latent_var": np.pi**2 / 6.0,
                "mean_x": lambda theta: float(theta) + EULER_GAMMA,
                "elbo_k1_maximizer": lambda x: float(np.mean(x)) - EULER_GAMMA,
            },
        )


class GaussianLinearModel(LatentVariableModel):
    """z ~ N(theta, I_d), x | z ~ N(z, I_d), q_phi(z | x) = N(a*x + b, s2 I_d)."""

    name = "gaussian_linear"

    def __init__(self, d: int = 1, theta_box=(-10.0, 10.0), phi_box=(-5.0, 5.0), proposal_var=2.0 / 3.0):
        if d < 1:
            raise ValueError("d must be >= 1")
        if proposal_var <= 0:
            raise ValueError("proposal_var must be positive")
        self.d = int(d)
        self.theta_dim = self.d
        self.phi_dim = 2 * self.d
        self.x_dim = self.z_dim = self.d
        self.proposal_var = float(proposal_var)
        self.theta_box = np.tile(np.asarray(theta_box, dtype=float), (self.d, 1))
        self.phi_box = np.tile(np.asarray(phi_box, dtype=float), (2 * self.d, 1))

    def __repr__(self):
        return f"GaussianLinearModel(d={self.d}, proposal_var={self.proposal_var:g})"

    def _split_phi(self, xi: Xi):
        self.check_xi(xi)
        return xi.phi[: self.d], xi.phi[self.d :]

    def _vec_arg(self, v, what):
        v = np.asarray(v, dtype=float)
        if v.ndim == 0 or v.shape[-1] != self.d:
            raise DimensionMismatch(f"{what} must have trailing dimension {self.d}, got shape {v.shape}")
        return v

    def log_prior(self, xi, z):
        self.check_xi(xi)
        return _log_normal(self._vec_arg(z, "z"), xi.theta, 1.0).sum(-1)

    def log_conditional(self, xi, x, z):
        self.check_xi(xi)
        return _log_normal(self._vec_arg(x, "x"), self._vec_arg(z, "z"), 1.0).sum(-1)

    def proposal_mean(self, xi, x):
        a, b = self._split_phi(xi)
        return a * self._vec_arg(x, "x") + b

    def log_proposal(self, xi, x, z):
        return _log_normal(self._vec_arg(z, "z"), self.proposal_mean(xi, x), self.proposal_var).sum(-1)

    def log_noise_density(self, eps):
        return _log_normal(self._vec_arg(eps, "eps"), 0.0, 1.0).sum(-1)

    def sample_noise(self, stream: rng.SeedSpec, shape):
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        return rng.sample_standard_normal(stream, shape + (self.d,))

    def reparam_draw(self, xi, x, eps):
        return self.proposal_mean(xi, x) + np.sqrt(self.proposal_var) * self._vec_arg(eps, "eps")

    def reparam_log_jacobian(self, xi, x, eps):
        """log |det d g_phi / d eps|; g_phi is affine in eps."""
        return np.full(np.shape(eps)[:-1], 0.5 * self.d * np.log(self.proposal_var))

    def expand_obs(self, x):
        return self._vec_arg(x, "x")[:, None, :]

    def check_dataset(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and self.d == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] != self.d:
            raise DimensionMismatch(f"expected dataset of shape (n, {self.d}), got {x.shape}")
        return x

    def exact_log_marginal(self, xi, x):
        self.check_xi(xi)
        return _log_normal(self._vec_arg(x, "x"), xi.theta, 2.0).sum(-1)

    def posterior_moments(self, xi, x):
        self.check_xi(xi)
        return 0.5 * (xi.theta + self._vec_arg(x, "x")), 0.5

    def relative_variance_exact(self, xi, x):
        """E_q[(r - 1)^2] per observation, r = posterior / proposal.

        Closed form of int N(z; m1, s1)^2 / N(z; m2, s2) dz - 1 per coordinate;
        infinite when the proposal is too narrow (2/s1 <= 1/s2).
        """
        m1, s1 = self.posterior_moments(xi, x)
        m2, s2 = self.proposal_mean(xi, x), self.proposal_var
        prec = 2.0 / s1 - 1.0 / s2
        if prec <= 0:
            return np.full(np.shape(m1)[:-1], np.inf)
        # per-coordinate log of the chi-square integral
        log_int = (
            0.5 * np.log(s2)
            - np.log(s1)
            - 0.5 * np.log(prec)
            + (m1 - m2) ** 2 / (2.0 * s2 - s1)
        )
        return np.expm1(log_int.sum(-1))

    def simulate(self, theta, n: int, stream: rng.SeedSpec) -> np.ndarray:
        theta = _vec(theta)
        if theta.size != self.d:
            raise DimensionMismatch(f"theta must have size {self.d}")
        z = theta + rng.sample_standard_normal(stream.split("latent"), (n, self.d))
        return z + rng.sample_standard_normal(stream.split("noise"), (n, self.d))

    def oracle_reference(self) -> OracleBundle:
        """Facts: ``marginal(theta)`` -> (mean, var) of N(theta, 2I);
        ``posterior(theta, x)`` -> (mean, var) = ((theta + x)/2, 1/2);
        ``optimal_phi(theta)`` -> (a*, b*) = (1/2, theta/2), the minimiser of
        the relative variance; ``mle(x)`` = sample mean."""
        return OracleBundle(
            self.name,
            {
                "marginal": lambda theta: (_vec(theta), 2.0),
                "posterior": lambda theta, x: (0.5 * (_vec(theta) + np.asarray(x, dtype=float)), 0.5),
                "optimal_phi": lambda theta: (np.full(self.d, 0.5), 0.5 * _vec(theta)),
                "mle": lambda x: np.asarray(x, dtype=float).reshape(-1, self.d).mean(0),
            },
        )


MODELS = {"gumbel": GumbelHeterogeneityModel, "gaussian_linear": GaussianLinearModel}


def make_model(name: str, **kwargs) -> LatentVariableModel:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**kwargs)


def load_dataset(path) -> np.ndarray:
    """Numeric text file, one observation per row (extra columns for d > 1)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # empty file is reported below
        data = np.loadtxt(Path(path), dtype=float, ndmin=1, comments="#")
    if data.size == 0:
        from .errors import EmptyDataset

        raise EmptyDataset(f"{path} contains no observations")
    return data


def save_dataset(path, x) -> None:
    np.savetxt(Path(path), np.asarray(x, dtype=float), fmt="%.17g")
