"""Smooth known-truth states for simulation studies and test fixtures."""

from __future__ import annotations

import numpy as np

from .model import EdgeCovariates, ModelConfig, ModelState, cumulative_tau, init_omega, n_edges


def smooth_truth(V: int, N: int, P: int = 2, n_active: int = 2, H: int = None, z_rate: float = 0.3,
                 latent_scale: float = 1.2, rng=None):
    """Return ``(covs, state)`` with smooth trajectories and ``n_active`` latent factors.

    Latent curves beyond ``n_active`` are identically zero; ``H`` defaults to
    ``n_active``. Covariates are iid binary with rate ``z_rate``.
    """
    rng = np.random.default_rng(rng)
    H = n_active if H is None else H
    if H < n_active:
        raise ValueError("H must be at least n_active")
    t = np.arange(1.0, N + 1.0)
    phase = 2.0 * np.pi * t / N

    mu = 0.4 * np.sin(phase) - 0.2
    beta = np.zeros((P, N))
    for p in range(P):
        sign = 1.0 if p % 2 == 0 else -1.0
        beta[p] = sign * (0.8 + 0.4 * np.cos(phase + p))

    X = np.zeros((V, H, N))
    level = rng.standard_normal((V, n_active))
    level = latent_scale * (level - level.mean(axis=0)) / level.std(axis=0)
    shift = rng.uniform(0.0, 2.0 * np.pi, size=(V, n_active))
    for h in range(n_active):
        X[:, h, :] = level[:, h, None] + 0.4 * np.sin(phase[None, :] / 2.0 + shift[:, h, None])

    z = (rng.random((P, n_edges(V), N)) < z_rate).astype(float)
    covs = EdgeCovariates(z)
    theta = np.ones(H)
    state = ModelState(mu, X, beta, theta, cumulative_tau(theta), np.zeros((n_edges(V), N)))
    state.omega = init_omega(state, covs)
    return covs, state


def truth_config(H: int, **overrides) -> ModelConfig:
    return ModelConfig(H=H, **overrides)
