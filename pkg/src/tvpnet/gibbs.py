"""Polya-gamma Gibbs sampler for the dynamic latent-space network model.

One sweep updates, in order: the PG auxiliaries ``omega``, the baseline
``mu``, the latent curves ``X`` (one node at a time, all H x N coordinates
jointly), each coefficient curve ``beta_p``, and the multiplicative-gamma
shrinkage increments ``theta``.

Gaussian blocks are drawn in whitened coordinates.  With prior covariance
``L L^T`` and likelihood precision ``A`` the conditional covariance
``(A + (L L^T)^{-1})^{-1}`` equals ``L (L^T A L + I)^{-1} L^T``; the
bracketed matrix has eigenvalues >= 1, so no kernel inverse is ever formed.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import __version__
from .artifacts import load_npz, save_npz
from .kernel import KernelMatrix, build_kernel
from .model import (
    DynamicNetwork,
    EdgeCovariates,
    ModelConfig,
    ModelState,
    PosteriorSamples,
    covariate_effect,
    cumulative_tau,
    edge_index,
    initial_state,
    latent_similarity,
    linear_predictor,
    link_probability,
)
from .polyagamma import pg_draw

log = logging.getLogger(__name__)

UPDATE_ORDER = ("omega", "mu", "latent", "beta", "shrinkage")
CHECKPOINT_VERSION = 1

_PI_LO = np.finfo(np.float32).tiny
_PI_HI = np.nextafter(np.float32(1.0), np.float32(0.0))


class SamplerError(RuntimeError):
    """A sweep failed; carries the sweep index and an optional state snapshot path."""

    def __init__(self, message, sweep=None, snapshot=None):
        self.sweep = sweep
        self.snapshot = snapshot
        detail = f" at sweep {sweep}" if sweep is not None else ""
        if snapshot:
            detail += f" (state snapshot: {snapshot})"
        super().__init__(f"{message}{detail}")


@dataclass(frozen=True)
class SamplerPlan:
    config: ModelConfig
    k_mu: KernelMatrix
    k_x: KernelMatrix
    k_beta: tuple
    thinning: int = 1
    order: tuple = UPDATE_ORDER

    @classmethod
    def build(cls, config: ModelConfig, N: int, P: int, thinning: int = 1) -> "SamplerPlan":
        if thinning < 1:
            raise ValueError("thinning must be a positive integer")
        grid = config.grid(N)
        k_mu = build_kernel(grid, config.kappa_mu, config.jitter)
        k_x = build_kernel(grid, config.kappa_x, config.jitter)
        k_beta = tuple(build_kernel(grid, config.kappa_for(p), config.jitter) for p in range(P))
        return cls(config, k_mu, k_x, k_beta, thinning)

    @property
    def kernels(self):
        return self.k_mu, self.k_x, list(self.k_beta)


# --- Gaussian conditionals in whitened form ------------------------------------


def _whitened_system(L, A, lin):
    """Return ``(R, b)`` with ``R R^T = L^T A L + I`` and ``b = L^T lin``."""
    M = L.T @ A @ L
    M[np.diag_indices_from(M)] += 1.0
    R = linalg.cholesky(M, lower=True, check_finite=False)
    return R, L.T @ lin


def _diag_system(L, d, lin):
    M = L.T @ (d[:, None] * L)
    M[np.diag_indices_from(M)] += 1.0
    R = linalg.cholesky(M, lower=True, check_finite=False)
    return R, L.T @ lin


def _gaussian_draw(L, R, b, rng):
    m = linalg.solve_triangular(R, b, lower=True, check_finite=False)
    u = linalg.solve_triangular(
        R, m + rng.standard_normal(m.shape[0]), lower=True, trans="T", check_finite=False
    )
    return L @ u


def _gaussian_moments(L, R, b):
    Rinv_Lt = linalg.solve_triangular(R, L.T, lower=True, check_finite=False)
    cov = Rinv_Lt.T @ Rinv_Lt
    mean = Rinv_Lt.T @ linalg.solve_triangular(R, b, lower=True, check_finite=False)
    return mean, cov


def _working_response(net: DynamicNetwork, state: ModelState):
    """``(y - 1/2)`` and ``omega`` with missing edge-times zeroed."""
    obs = net.observed
    kappa = np.where(obs, net.y - 0.5, 0.0)
    w = np.where(obs, state.omega, 0.0)
    return kappa, w


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")


# --- omega ----------------------------------------------------------------------


def update_omega(state: ModelState, net: DynamicNetwork, covs: EdgeCovariates, rng) -> ModelState:
    """``omega_ij,t ~ PG(1, s_ij(t))`` at observed edge-times; missing ones untouched."""
    s = linear_predictor(state, covs)
    obs = net.observed
    state.omega[obs] = pg_draw(s[obs], rng)
    return state


# --- mu ---------------------------------------------------------------------------


def _mu_system(state, net, covs, plan):
    kappa, w = _working_response(net, state)
    rest = covariate_effect(state, covs) + latent_similarity(state.X)
    d = w.sum(axis=0)
    lin = (kappa - w * rest).sum(axis=0)
    L = plan.k_mu.chol
    return (L, *_diag_system(L, d, lin))


def mu_conditional(state, net, covs, plan):
    """Mean and covariance of ``mu | rest`` (for testing and inspection)."""
    return _gaussian_moments(*_mu_system(state, net, covs, plan))


def update_mu(state: ModelState, net: DynamicNetwork, covs: EdgeCovariates, plan: SamplerPlan, rng) -> ModelState:
    L, R, b = _mu_system(state, net, covs, plan)
    state.mu = _gaussian_draw(L, R, b, rng)
    return state


# --- beta -------------------------------------------------------------------------


def _beta_system(state, net, covs, plan, p):
    kappa, w = _working_response(net, state)
    zp = covs.z[p]
    # nu: predictor with the p-th covariate term held out
    nu = state.mu[None, :] + covariate_effect(state, covs) - zp * state.beta[p][None, :]
    nu = nu + latent_similarity(state.X)
    d = (zp * zp * w).sum(axis=0)
    lin = (zp * (kappa - w * nu)).sum(axis=0)
    L = plan.k_beta[p].chol
    return (L, *_diag_system(L, d, lin))


def beta_conditional(state, net, covs, plan, p: int):
    """Mean and covariance of ``beta_p | rest``."""
    return _gaussian_moments(*_beta_system(state, net, covs, plan, p))


def update_beta(state: ModelState, net: DynamicNetwork, covs: EdgeCovariates, plan: SamplerPlan, rng) -> ModelState:
    for p in range(state.P):
        L, R, b = _beta_system(state, net, covs, plan, p)
        state.beta[p] = _gaussian_draw(L, R, b, rng)
    return state


# --- latent coordinates -----------------------------------------------------------


def _incident_edges(V):
    rows, cols = edge_index(V)
    out = []
    for i in range(V):
        e = np.flatnonzero((rows == i) | (cols == i))
        other = np.where(rows[e] == i, cols[e], rows[e])
        out.append((e, other))
    return out


def _latent_system(state, net, covs, plan, i, incident=None, resid=None, w=None):
    """Whitened system for the stacked vector ``x_i`` indexed ``h * N + t``."""
    if resid is None:
        kappa, w = _working_response(net, state)
        resid = kappa - w * (state.mu[None, :] + covariate_effect(state, covs))
    e, other = (incident or _incident_edges(state.V))[i]
    H, N = state.H, state.N
    Xo = state.X[other]  # (m, H, N)
    we = w[e]
    G = np.einsum("mt,mht,mgt->hgt", we, Xo, Xo)
    lin = np.einsum("mt,mht->ht", resid[e], Xo)
    L = plan.k_x.chol
    sc = 1.0 / np.sqrt(state.tau)
    # (L_h^T G_hg L_g)[a, b] = sc_h sc_g sum_t L[t, a] G[h, g, t] L[t, b]
    blocks = L.T @ (G[:, :, :, None] * L[None, None, :, :])
    blocks *= (sc[:, None] * sc[None, :])[:, :, None, None]
    M = blocks.transpose(0, 2, 1, 3).reshape(H * N, H * N)
    M[np.diag_indices_from(M)] += 1.0
    R = linalg.cholesky(M, lower=True, check_finite=False)
    b = ((lin @ L) * sc[:, None]).ravel()
    return R, b, L, sc


def latent_conditional(state, net, covs, plan, i: int):
    """Mean and covariance of the stacked ``x_i`` (length ``H * N``)."""
    R, b, L, sc = _latent_system(state, net, covs, plan, i)
    H = state.H
    Lbd = linalg.block_diag(*[sc[h] * L for h in range(H)])
    return _gaussian_moments(Lbd, R, b)


def update_latent(state: ModelState, net: DynamicNetwork, covs: EdgeCovariates, plan: SamplerPlan, rng,
                  incident=None, units=None) -> ModelState:
    """Update each node's latent curves in turn, conditioning on the others.

    ``units`` restricts the pass to a subset of nodes (default: all, in order).
    """
    incident = incident or _incident_edges(state.V)
    kappa, w = _working_response(net, state)
    resid = kappa - w * (state.mu[None, :] + covariate_effect(state, covs))
    H, N = state.H, state.N
    for i in range(state.V) if units is None else units:
        R, b, L, sc = _latent_system(state, net, covs, plan, i, incident, resid, w)
        m = linalg.solve_triangular(R, b, lower=True, check_finite=False)
        u = linalg.solve_triangular(R, m + rng.standard_normal(H * N), lower=True, trans="T", check_finite=False)
        state.X[i] = sc[:, None] * (u.reshape(H, N) @ L.T)
    return state


# --- shrinkage --------------------------------------------------------------------


def latent_quadratic_forms(X: np.ndarray, k_x: KernelMatrix) -> np.ndarray:
    """``sum_i x_ih^T K_x^{-1} x_ih`` for each h."""
    V, H, N = X.shape
    W = k_x.whiten(X.transpose(2, 0, 1).reshape(N, V * H))
    return (W * W).sum(axis=0).reshape(V, H).sum(axis=0)


def shrinkage_rates(theta, quad, l: int) -> float:
    """Gamma rate for ``theta_l`` given the other increments."""
    theta_minus = np.array(theta, dtype=float)
    theta_minus[l] = 1.0
    tau_minus = np.cumprod(theta_minus)
    return 1.0 + 0.5 * float(np.sum(tau_minus[l:] * quad[l:]))


def update_shrinkage(state: ModelState, config: ModelConfig, plan: SamplerPlan, rng) -> ModelState:
    V, H, N = state.X.shape
    quad = latent_quadratic_forms(state.X, plan.k_x)
    if not np.all(np.isfinite(quad)):
        raise FloatingPointError("non-finite latent quadratic form in shrinkage update")
    for l in range(H):
        a = config.a1 if l == 0 else config.a2
        shape = a + 0.5 * V * N * (H - l)
        rate = shrinkage_rates(state.theta, quad, l)
        state.theta[l] = rng.gamma(shape, 1.0 / rate)
        state.tau = cumulative_tau(state.theta)
    return state


# --- sweeps and chains --------------------------------------------------------------


def gibbs_sweep(state, net, covs, plan, rng, incident=None):
    update_omega(state, net, covs, rng)
    update_mu(state, net, covs, plan, rng)
    update_latent(state, net, covs, plan, rng, incident)
    update_beta(state, net, covs, plan, rng)
    update_shrinkage(state, plan.config, plan, rng)
    return state


def _state_arrays(state: ModelState) -> dict:
    return {
        "state_mu": state.mu,
        "state_X": state.X,
        "state_beta": state.beta,
        "state_theta": state.theta,
        "state_tau": state.tau,
        "state_omega": state.omega,
    }


def _config_meta(config: ModelConfig) -> dict:
    return json.loads(json.dumps(config.to_dict()))


def write_checkpoint(path, state, sweep, rng, retained: dict, config: ModelConfig, thinning: int = 1):
    """Dump state, RNG state, next sweep index and draws retained so far."""
    arrays = dict(_state_arrays(state))
    arrays.update({f"draws_{k}": v for k, v in retained.items()})
    meta = {
        "format": "tvpnet-checkpoint",
        "version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "next_sweep": int(sweep),
        "thinning": int(thinning),
        "rng": rng.bit_generator.state,
        "config": _config_meta(config),
    }
    save_npz(path, arrays, meta)


def read_checkpoint(path):
    arrays, meta = load_npz(path)
    if not meta or meta.get("format") != "tvpnet-checkpoint":
        raise ValueError(f"{path} is not a sampler checkpoint")
    state = ModelState(
        arrays["state_mu"], arrays["state_X"], arrays["state_beta"],
        arrays["state_theta"], arrays["state_tau"], arrays["state_omega"],
    )
    retained = {k[len("draws_"):]: v for k, v in arrays.items() if k.startswith("draws_")}
    rng = np.random.Generator(getattr(np.random, meta["rng"]["bit_generator"])())
    rng.bit_generator.state = meta["rng"]
    return state, meta, retained, rng


def _allocate(D, n_iter, E, N, P, H):
    return {
        "pi": np.zeros((D, E, N), dtype=np.float32),
        "mu": np.zeros((D, N)),
        "beta": np.zeros((D, P, N)),
        "tau": np.zeros((D, H)),
        "x_energy": np.zeros((D, H)),
        "loglik": np.zeros(n_iter),
    }


def _retained_slot(sweep, n_burn, thinning):
    k = sweep - n_burn
    if k < 0 or k % thinning:
        return None
    return k // thinning


def run_sampler(
    net: DynamicNetwork,
    covs: EdgeCovariates,
    config: ModelConfig,
    rng=None,
    *,
    thinning: int = 1,
    init: ModelState = None,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    resume: bool = False,
    stop_after: int = None,
    progress=None,
) -> PosteriorSamples:
    """Run ``config.n_iter`` sweeps and keep draws after ``config.n_burn``.

    ``rng`` may be a Generator or seed; when omitted ``config.seed`` is used.
    With ``checkpoint_path`` the chain state is dumped every
    ``checkpoint_every`` sweeps and at exit; ``resume=True`` continues from an
    existing checkpoint. ``stop_after`` halts after that many total sweeps
    and returns ``None`` (simulates an interruption).
    """
    covs.check_matches(net)
    plan = SamplerPlan.build(config, net.N, covs.P, thinning)
    if rng is None:
        rng = config.seed
    rng = np.random.default_rng(rng)
    E, N, P, H, V = net.y.shape[0], net.N, covs.P, config.H, net.V
    D = len(range(config.n_burn, config.n_iter, thinning))

    start = 0
    if resume and checkpoint_path is not None and os.path.exists(checkpoint_path):
        state, meta, retained, rng = read_checkpoint(checkpoint_path)
        if meta["config"] != _config_meta(config) or meta["thinning"] != thinning:
            raise ValueError("checkpoint was written with a different configuration")
        start = meta["next_sweep"]
        log.info("resuming from %s at sweep %d", checkpoint_path, start)
    else:
        state = init.copy() if init is not None else initial_state(config, covs, rng)
        retained = _allocate(D, config.n_iter, E, N, P, H)
    state.check(config, covs)

    incident = _incident_edges(V)
    obs = net.observed
    y_obs = net.y[obs]
    sweep = start
    try:
        for sweep in range(start, config.n_iter):
            if stop_after is not None and sweep >= stop_after:
                if checkpoint_path is not None:
                    write_checkpoint(checkpoint_path, state, sweep, rng, retained, config, thinning)
                return None
            gibbs_sweep(state, net, covs, plan, rng, incident)
            s = linear_predictor(state, covs)
            _check_finite("linear predictor", s)
            so = s[obs]
            ll = float(np.sum(np.where(y_obs == 1, -np.logaddexp(0.0, -so), -np.logaddexp(0.0, so))))
            retained["loglik"][sweep] = ll
            slot = _retained_slot(sweep, config.n_burn, thinning)
            if slot is not None:
                pi = link_probability(s).astype(np.float32)
                retained["pi"][slot] = np.clip(pi, _PI_LO, _PI_HI)
                retained["mu"][slot] = state.mu
                retained["beta"][slot] = state.beta
                retained["tau"][slot] = state.tau
                retained["x_energy"][slot] = np.einsum("iht,iht->h", state.X, state.X)
            if progress is not None:
                progress(sweep + 1, config.n_iter, ll)
            if (sweep + 1) % max(1, config.n_iter // 10) == 0:
                log.info("sweep %d/%d  loglik %.3f", sweep + 1, config.n_iter, ll)
            if checkpoint_path is not None and checkpoint_every and (sweep + 1) % checkpoint_every == 0:
                write_checkpoint(checkpoint_path, state, sweep + 1, rng, retained, config, thinning)
    except (linalg.LinAlgError, FloatingPointError, RuntimeError, ValueError) as exc:
        snapshot = None
        if checkpoint_path is not None:
            snapshot = os.fspath(checkpoint_path) + ".failed"
            try:
                write_checkpoint(snapshot, state, sweep, rng, retained, config, thinning)
            except OSError:
                snapshot = None
        raise SamplerError(f"{type(exc).__name__}: {exc}", sweep=sweep, snapshot=snapshot) from exc

    if checkpoint_path is not None:
        write_checkpoint(checkpoint_path, state, config.n_iter, rng, retained, config, thinning)

    return PosteriorSamples(
        pi=retained["pi"],
        mu=retained["mu"],
        beta=retained["beta"],
        tau=retained["tau"],
        x_energy=retained["x_energy"],
        loglik=retained["loglik"],
        node_labels=net.node_labels,
        predictor_labels=covs.predictor_labels,
        periods=net.periods,
        meta={"config": _config_meta(config), "thinning": thinning, "update_order": list(UPDATE_ORDER)},
    )
