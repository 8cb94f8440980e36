"""Domain types and the logistic latent-space predictor with edge covariates.

Edges are stored in lower-triangle order: edge ``e`` joins nodes
``rows[e] > cols[e]`` with ``(rows, cols) = np.tril_indices(V, -1)``, so the
sequence is (1,0), (2,0), (2,1), (3,0), ...  Responses use NaN for missing.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .kernel import DEFAULT_JITTER, build_kernel, gp_draw
from .polyagamma import pg_mean


def edge_index(V: int):
    """Return ``(rows, cols)`` of the lower-triangle edge ordering."""
    return np.tril_indices(V, -1)


def n_edges(V: int) -> int:
    return V * (V - 1) // 2


def edge_id(i: int, j: int) -> int:
    """Position of the unordered pair {i, j} in the lower-triangle order."""
    if i == j:
        raise ValueError(f"self-edge ({i}, {i}) is undefined")
    hi, lo = (i, j) if i > j else (j, i)
    return hi * (hi - 1) // 2 + lo


def _as_labels(labels, n: int, prefix: str) -> tuple:
    if labels is None:
        return tuple(f"{prefix}{k}" for k in range(n))
    labels = tuple(str(x) for x in labels)
    if len(labels) != n:
        raise ValueError(f"expected {n} {prefix} labels, got {len(labels)}")
    if len(set(labels)) != n:
        raise ValueError(f"duplicate {prefix} labels")
    return labels


@dataclass(frozen=True)
class DynamicNetwork:
    """Binary undirected network observed on ``N`` time points.

    ``y`` has shape ``(V(V-1)/2, N)`` with entries 0, 1 or NaN (missing).
    """

    y: np.ndarray
    node_labels: tuple = None
    periods: tuple = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim != 2:
            raise ValueError("y must be 2-D (edges, time)")
        E, N = y.shape
        V = int(round((1 + np.sqrt(1 + 8 * E)) / 2))
        if n_edges(V) != E or V < 2:
            raise ValueError(f"{E} rows is not a valid edge count for V >= 2")
        if N < 1:
            raise ValueError("need at least one time point")
        obs = y[~np.isnan(y)]
        if not np.all((obs == 0) | (obs == 1)):
            raise ValueError("responses must be 0, 1 or missing")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "node_labels", _as_labels(self.node_labels, V, "node"))
        object.__setattr__(self, "periods", _as_labels(self.periods, N, "t"))

    @property
    def V(self) -> int:
        return len(self.node_labels)

    @property
    def N(self) -> int:
        return self.y.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.y)

    def get(self, i: int, j: int, t: int) -> float:
        self._check_nodes(i, j)
        return float(self.y[edge_id(i, j), t])

    def _check_nodes(self, i, j):
        for k in (i, j):
            if not 0 <= k < self.V:
                raise IndexError(f"node index {k} out of range for V={self.V}")
        if i == j:
            raise ValueError(f"self-edge ({i}, {i}) is undefined")

    def missing_rate(self) -> float:
        return float(np.isnan(self.y).mean())

    def with_y(self, y) -> "DynamicNetwork":
        return DynamicNetwork(y, self.node_labels, self.periods)

    def __eq__(self, other):
        if not isinstance(other, DynamicNetwork):
            return NotImplemented
        return (
            self.node_labels == other.node_labels
            and self.periods == other.periods
            and np.array_equal(self.y, other.y, equal_nan=True)
        )


@dataclass(frozen=True)
class EdgeCovariates:
    """Edge predictors ``z`` with shape ``(P, V(V-1)/2, N)``."""

    z: np.ndarray
    predictor_labels: tuple = None
    node_labels: tuple = None
    periods: tuple = None

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        if z.ndim != 3:
            raise ValueError("z must be 3-D (predictors, edges, time)")
        if not np.all(np.isfinite(z)):
            raise ValueError("covariates must be finite")
        P, E, N = z.shape
        V = int(round((1 + np.sqrt(1 + 8 * E)) / 2))
        if n_edges(V) != E or V < 2:
            raise ValueError(f"{E} edge rows is not a valid edge count")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "predictor_labels", _as_labels(self.predictor_labels, P, "z"))
        object.__setattr__(self, "node_labels", _as_labels(self.node_labels, V, "node"))
        object.__setattr__(self, "periods", _as_labels(self.periods, N, "t"))

    @classmethod
    def empty(cls, net: DynamicNetwork) -> "EdgeCovariates":
        return cls(np.zeros((0, n_edges(net.V), net.N)), (), net.node_labels, net.periods)

    @property
    def P(self) -> int:
        return self.z.shape[0]

    @property
    def V(self) -> int:
        return len(self.node_labels)

    @property
    def N(self) -> int:
        return self.z.shape[2]

    def check_matches(self, net: DynamicNetwork):
        if (self.V, self.N) != (net.V, net.N):
            raise ValueError(
                f"covariates have V={self.V}, N={self.N}; network has V={net.V}, N={net.N}"
            )

    def __eq__(self, other):
        if not isinstance(other, EdgeCovariates):
            return NotImplemented
        return (
            self.predictor_labels == other.predictor_labels
            and self.node_labels == other.node_labels
            and self.periods == other.periods
            and np.array_equal(self.z, other.z)
        )


@dataclass(frozen=True)
class ModelConfig:
    """Sampler settings. ``kappa_beta`` may be a scalar shared by all predictors."""

    H: int = 15
    kappa_mu: float = 0.02
    kappa_x: float = 0.01
    kappa_beta: object = 0.01
    a1: float = 2.0
    a2: float = 2.0
    n_iter: int = 5000
    n_burn: int = 1000
    jitter: float = DEFAULT_JITTER
    seed: Optional[int] = None
    time_grid: Optional[tuple] = None

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("H must be at least 1")
        if not self.n_iter > self.n_burn >= 0:
            raise ValueError("need n_iter > n_burn >= 0")
        kb = np.atleast_1d(np.asarray(self.kappa_beta, dtype=float))
        if not (self.kappa_mu > 0 and self.kappa_x > 0 and np.all(kb > 0)):
            raise ValueError("all length-scale parameters must be positive")
        if not (self.a1 > 0 and self.a2 > 0):
            raise ValueError("shrinkage shapes a1, a2 must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        if self.time_grid is not None:
            grid = tuple(float(t) for t in self.time_grid)
            if len(grid) > 1 and np.any(np.diff(grid) <= 0):
                raise ValueError("time_grid must be strictly increasing")
            object.__setattr__(self, "time_grid", grid)
        if np.ndim(self.kappa_beta):
            object.__setattr__(self, "kappa_beta", tuple(float(k) for k in kb))

    def grid(self, N: int) -> np.ndarray:
        if self.time_grid is None:
            return np.arange(1.0, N + 1.0)
        if len(self.time_grid) != N:
            raise ValueError(f"time_grid has {len(self.time_grid)} points, data has {N}")
        return np.asarray(self.time_grid)

    def kappa_for(self, p: int) -> float:
        if isinstance(self.kappa_beta, tuple):
            return self.kappa_beta[p]
        return float(self.kappa_beta)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ModelState:
    """Mutable sampler state; owned by a single chain."""

    mu: np.ndarray  # (N,)
    X: np.ndarray  # (V, H, N)
    beta: np.ndarray  # (P, N)
    theta: np.ndarray  # (H,)
    tau: np.ndarray  # (H,)
    omega: np.ndarray  # (E, N)

    def __post_init__(self):
        N = self.mu.shape[0]
        V, H, NX = self.X.shape
        if NX != N or self.beta.shape[1:] != (N,) or self.omega.shape != (n_edges(V), N):
            raise ValueError("inconsistent state dimensions")
        if self.theta.shape != (H,) or self.tau.shape != (H,):
            raise ValueError("theta and tau must have length H")

    @property
    def V(self) -> int:
        return self.X.shape[0]

    @property
    def H(self) -> int:
        return self.X.shape[1]

    @property
    def N(self) -> int:
        return self.mu.shape[0]

    @property
    def P(self) -> int:
        return self.beta.shape[0]

    def copy(self) -> "ModelState":
        return ModelState(*(np.array(getattr(self, f.name)) for f in dataclasses.fields(self)))

    def check(self, config: ModelConfig = None, covs: EdgeCovariates = None):
        if config is not None and self.H != config.H:
            raise ValueError(f"state has H={self.H}, config has H={config.H}")
        if covs is not None and (self.V, self.N, self.P) != (covs.V, covs.N, covs.P):
            raise ValueError(
                f"state (V={self.V}, N={self.N}, P={self.P}) does not match covariates "
                f"(V={covs.V}, N={covs.N}, P={covs.P})"
            )


@dataclass
class PosteriorSamples:
    """Retained post-burn-in draws.

    ``pi`` is single precision with shape ``(D, E, N)``; ``mu`` is ``(D, N)``,
    ``beta`` ``(D, P, N)``, ``tau`` ``(D, H)`` and ``x_energy`` ``(D, H)``
    holds ``sum_i sum_t x_ih(t)^2`` per draw.
    """

    pi: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    tau: np.ndarray
    x_energy: np.ndarray
    loglik: np.ndarray
    node_labels: tuple
    predictor_labels: tuple
    periods: tuple
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.mu.shape[0]

    def pi_mean(self) -> np.ndarray:
        return self.pi.mean(axis=0, dtype=np.float64)


# --- predictor / likelihood -------------------------------------------------


def predictor(state: ModelState, covs: EdgeCovariates, i: int, j: int, t: int) -> float:
    """``mu(t) + z_ij,t . beta(t) + x_i(t) . x_j(t)`` summed in fixed order."""
    V = state.V
    for k in (i, j):
        if not 0 <= k < V:
            raise IndexError(f"node index {k} out of range for V={V}")
    if i == j:
        raise ValueError(f"self-edge ({i}, {i}) is undefined")
    if not 0 <= t < state.N:
        raise IndexError(f"time index {t} out of range for N={state.N}")
    e = edge_id(i, j)
    s = float(state.mu[t])
    for p in range(state.P):
        s += float(covs.z[p, e, t]) * float(state.beta[p, t])
    for h in range(state.H):
        s += float(state.X[i, h, t]) * float(state.X[j, h, t])
    return s


def covariate_effect(state: ModelState, covs: EdgeCovariates) -> np.ndarray:
    out = np.zeros(covs.z.shape[1:])
    for p in range(state.P):
        out += covs.z[p] * state.beta[p][None, :]
    return out


def latent_similarity(X: np.ndarray) -> np.ndarray:
    """``x_i(t) . x_j(t)`` for every lower-triangle edge, shape ``(E, N)``."""
    rows, cols = edge_index(X.shape[0])
    out = np.zeros((rows.size, X.shape[2]))
    for h in range(X.shape[1]):
        out += X[rows, h, :] * X[cols, h, :]
    return out


def linear_predictor(state: ModelState, covs: EdgeCovariates) -> np.ndarray:
    """Vectorized predictor for all edges and times, shape ``(E, N)``."""
    return state.mu[None, :] + covariate_effect(state, covs) + latent_similarity(state.X)


def link_probability(s):
    """Logistic link; numerically safe for large ``|s|``."""
    s_arr = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s_arr)):
        raise ValueError("predictor must be finite")
    out = expit(s_arr)
    return out if out.ndim else float(out)


def _log_bernoulli(y, s):
    # log pi = -log(1 + e^{-s}); log(1 - pi) = -log(1 + e^{s})
    return np.where(y == 1, -np.logaddexp(0.0, -s), -np.logaddexp(0.0, s))


def log_likelihood(net: DynamicNetwork, covs: EdgeCovariates, state: ModelState) -> float:
    covs.check_matches(net)
    state.check(covs=covs)
    s = linear_predictor(state, covs)
    obs = net.observed
    if not obs.any():
        return 0.0
    return float(np.sum(_log_bernoulli(net.y[obs], s[obs])))


def simulate(config: ModelConfig, covs: EdgeCovariates, state: ModelState, rng=None) -> DynamicNetwork:
    """Draw ``y_ij,t ~ Bernoulli(pi_ij(t))`` independently for every edge-time."""
    state.check(config, covs)
    rng = np.random.default_rng(rng)
    pi = link_probability(linear_predictor(state, covs))
    y = (rng.random(pi.shape) < pi).astype(float)
    return DynamicNetwork(y, covs.node_labels, covs.periods)


# --- states -------------------------------------------------------------------


def _kernels(config: ModelConfig, N: int, P: int):
    grid = config.grid(N)
    k_mu = build_kernel(grid, config.kappa_mu, config.jitter)
    k_x = build_kernel(grid, config.kappa_x, config.jitter)
    k_beta = [build_kernel(grid, config.kappa_for(p), config.jitter) for p in range(P)]
    return k_mu, k_x, k_beta


def cumulative_tau(theta: np.ndarray) -> np.ndarray:
    return np.cumprod(theta)


def init_omega(state: ModelState, covs: EdgeCovariates) -> np.ndarray:
    """PG(1, s) mean at the current predictor."""
    return pg_mean(linear_predictor(state, covs))


def draw_state_from_prior(config: ModelConfig, covs: EdgeCovariates, rng=None, kernels=None) -> ModelState:
    """Draw ``mu``, ``beta``, shrinkage and latent curves from their priors.

    ``omega`` is set deterministically to the PG(1, s) mean at the drawn state.
    """
    rng = np.random.default_rng(rng)
    V, P, N, H = covs.V, covs.P, covs.N, config.H
    k_mu, k_x, k_beta = kernels if kernels is not None else _kernels(config, N, P)
    mu = gp_draw(k_mu, 1.0, rng)
    beta = np.array([gp_draw(k, 1.0, rng) for k in k_beta]).reshape(P, N)
    theta = np.empty(H)
    theta[0] = rng.gamma(config.a1, 1.0)
    theta[1:] = rng.gamma(config.a2, 1.0, size=H - 1)
    tau = cumulative_tau(theta)
    X = np.empty((V, H, N))
    for h in range(H):
        X[:, h, :] = gp_draw(k_x, 1.0 / tau[h], rng, size=V)
    state = ModelState(mu, X, beta, theta, tau, np.zeros((n_edges(V), N)))
    state.omega = init_omega(state, covs)
    return state


def initial_state(config: ModelConfig, covs: EdgeCovariates, rng=None) -> ModelState:
    """Near-origin starting point for fitting (mu = beta = 0, small latent noise)."""
    rng = np.random.default_rng(rng)
    V, P, N, H = covs.V, covs.P, covs.N, config.H
    X = rng.normal(0.0, 0.1, size=(V, H, N))
    theta = np.full(H, float(config.a2))
    theta[0] = config.a1
    state = ModelState(np.zeros(N), X, np.zeros((P, N)), theta, cumulative_tau(theta), np.zeros((n_edges(V), N)))
    state.omega = init_omega(state, covs)
    return state


def zero_covariates(V: int, N: int, P: int = 0, node_labels: Sequence = None) -> EdgeCovariates:
    return EdgeCovariates(np.zeros((P, n_edges(V), N)), None, node_labels, None)
