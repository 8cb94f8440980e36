import numpy as np
import pytest
from scipy.stats import multivariate_normal

from conftest import scalar_case
from tvpnet.gibbs import (
    SamplerError,
    SamplerPlan,
    beta_conditional,
    gibbs_sweep,
    latent_conditional,
    latent_quadratic_forms,
    mu_conditional,
    read_checkpoint,
    run_sampler,
    update_beta,
    update_latent,
    update_mu,
    update_omega,
    update_shrinkage,
)
from tvpnet.model import DynamicNetwork, EdgeCovariates, ModelConfig, initial_state, linear_predictor, simulate
from tvpnet.synthetic import smooth_truth

JIT = 1e-6  # default jitter shifts the unit prior variance by this much


def _plan(cfg, N=1, P=1):
    return SamplerPlan.build(cfg, N, P)


def test_scalar_conditional_moments():
    net, covs, state, cfg = scalar_case()
    plan = _plan(cfg)
    state.X[0, 0, 0] = 0.0  # zero latent remainder for mu and beta
    for m, c in (beta_conditional(state, net, covs, plan, 0), mu_conditional(state, net, covs, plan)):
        assert m[0] == pytest.approx(0.4, abs=1e-5)
        assert c[0, 0] == pytest.approx(0.8, abs=1e-5)
    state.X[0, 0, 0] = 1.0
    covs0 = EdgeCovariates(np.zeros((1, 1, 1)))
    m, c = latent_conditional(state, net, covs0, plan, 1)
    assert (m[0], c[0, 0]) == (pytest.approx(0.4, abs=1e-5), pytest.approx(0.8, abs=1e-5))


def test_scalar_draws_monte_carlo(rng):
    net, covs, state, cfg = scalar_case(xj=0.0)
    plan = _plan(cfg)
    n = 20_000
    d = np.empty(n)
    for k in range(n):
        update_beta(state, net, covs, plan, rng)
        d[k] = state.beta[0, 0]
        state.beta[0, 0] = 0.0
    assert abs(d.mean() - 0.4) < 3 * np.sqrt(0.8 / n)
    assert abs(d.var() - 0.8) < 3 * 0.8 * np.sqrt(2.0 / n)


def test_latent_zero_design_is_prior():
    net, covs, state, cfg = scalar_case(xj=0.0)
    state.tau[:] = 2.5
    m, c = latent_conditional(state, net, covs, _plan(cfg), 1)
    assert m[0] == pytest.approx(0.0)
    assert c[0, 0] == pytest.approx((1 + JIT) / 2.5)


def test_mu_flip_negates_mean():
    y = np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
    covs = EdgeCovariates(np.zeros((1, 3, 3)))
    cfg = ModelConfig(H=1, n_iter=2, n_burn=0)
    state = initial_state(cfg, covs, np.random.default_rng(0))
    state.X[:] = 0.0
    plan = _plan(cfg, 3)
    m1, _ = mu_conditional(state, DynamicNetwork(y), covs, plan)
    m0, _ = mu_conditional(state, DynamicNetwork(1 - y), covs, plan)
    np.testing.assert_allclose(m1, -m0, atol=1e-12)


def test_beta_unused_predictor_keeps_prior():
    covs = EdgeCovariates(np.zeros((1, 3, 4)))
    cfg = ModelConfig(H=1, n_iter=2, n_burn=0)
    net = DynamicNetwork(np.ones((3, 4)))
    state = initial_state(cfg, covs, np.random.default_rng(0))
    plan = _plan(cfg, 4)
    m, c = beta_conditional(state, net, covs, plan, 0)
    np.testing.assert_allclose(m, 0.0, atol=1e-12)
    K = plan.k_beta[0]
    np.testing.assert_allclose(c, K.K + K.jitter_used * np.eye(4), atol=1e-10)


def test_more_omega_means_less_variance():
    net, covs, state, cfg = scalar_case(xj=0.0)
    plan = _plan(cfg)
    _, c1 = beta_conditional(state, net, covs, plan, 0)
    state.omega[:] *= 2
    _, c2 = beta_conditional(state, net, covs, plan, 0)
    assert c2[0, 0] < c1[0, 0]


def test_omega_missing_untouched_and_zero_mean(rng):
    y = np.array([[1.0, np.nan]])
    net = DynamicNetwork(y)
    covs = EdgeCovariates(np.zeros((1, 1, 2)))
    _, _, state, _ = scalar_case()
    state = type(state)(np.zeros(2), np.zeros((2, 1, 2)), np.zeros((1, 2)), np.ones(1), np.ones(1),
                        np.array([[0.3, 0.123]]))
    draws = []
    for _ in range(20_000):
        update_omega(state, net, covs, rng)
        assert state.omega[0, 1] == 0.123
        draws.append(state.omega[0, 0])
    d = np.array(draws)
    assert abs(d.mean() - 0.25) < 3 * d.std() / np.sqrt(d.size)


def test_shrinkage_zero_latent(rng):
    cfg = ModelConfig(H=2, n_iter=2, n_burn=0, a1=3.0)
    covs = EdgeCovariates(np.zeros((1, 3, 2)))
    state = initial_state(cfg, covs, rng)
    state.X[:] = 0.0
    plan = _plan(cfg, 2)
    d = []
    for _ in range(20_000):
        update_shrinkage(state, cfg, plan, rng)
        d.append(state.theta[0])
    shape = 3.0 + 3 * 2 * 2 / 2
    assert abs(np.mean(d) - shape) < 3 * np.sqrt(shape / len(d))
    np.testing.assert_array_equal(state.tau, np.cumprod(state.theta))


def test_shrinkage_grid_integration_oracle(rng):
    # H=1: compare draws with the conditional density evaluated on a grid
    cfg = ModelConfig(H=1, n_iter=2, n_burn=0, kappa_x=1.0)
    V, N = 3, 4
    covs = EdgeCovariates(np.zeros((1, 3, N)))
    plan = _plan(cfg, N)
    state = initial_state(cfg, covs, rng)
    state.X = rng.standard_normal((V, 1, N)) * 0.7
    Kj = plan.k_x.K + plan.k_x.jitter_used * np.eye(N)

    grid = np.linspace(1e-3, 8.0, 4000)
    logd = (cfg.a1 - 1) * np.log(grid) - grid
    for i in range(V):
        logd += np.array([multivariate_normal.logpdf(state.X[i, 0], cov=Kj / g) for g in grid])
    dens = np.exp(logd - logd.max())
    dens /= np.trapezoid(dens, grid)
    mean = np.trapezoid(grid * dens, grid)
    var = np.trapezoid((grid - mean) ** 2 * dens, grid)

    draws = np.empty(50_000)
    for k in range(draws.size):
        update_shrinkage(state, cfg, plan, rng)
        draws[k] = state.theta[0]
    assert abs(draws.mean() - mean) < 3 * np.sqrt(var / draws.size)
    assert draws.var() == pytest.approx(var, rel=0.03)
    quad = latent_quadratic_forms(state.X, plan.k_x)[0]
    expect = sum(x @ np.linalg.solve(Kj, x) for x in state.X[:, 0])
    assert quad == pytest.approx(expect, rel=1e-8)


def test_tau_products_after_update(rng):
    cfg = ModelConfig(H=4, n_iter=2, n_burn=0)
    covs = EdgeCovariates(np.zeros((1, 6, 3)))
    state = initial_state(cfg, covs, rng)
    update_shrinkage(state, cfg, _plan(cfg, 3), rng)
    assert state.tau[2] == state.theta[0] * state.theta[1] * state.theta[2]


def _small_problem(seed=0, V=5, N=6):
    rng = np.random.default_rng(seed)
    covs, truth = smooth_truth(V, N, P=1, n_active=1, rng=rng)
    net = simulate(ModelConfig(H=1), covs, truth, rng)
    return net, covs


def test_sweep_keeps_predictor_symmetric(rng):
    net, covs = _small_problem()
    cfg = ModelConfig(H=2, n_iter=2, n_burn=0)
    state = initial_state(cfg, covs, rng)
    gibbs_sweep(state, net, covs, _plan(cfg, net.N, covs.P), rng)
    from tvpnet.model import predictor
    for i, j in ((1, 0), (4, 2)):
        assert predictor(state, covs, i, j, 3) == predictor(state, covs, j, i, 3)
    assert np.all(np.isfinite(linear_predictor(state, covs)))


def test_retained_count_and_determinism():
    net, covs = _small_problem()
    cfg = ModelConfig(H=2, n_iter=10, n_burn=5, seed=11)
    a = run_sampler(net, covs, cfg)
    b = run_sampler(net, covs, cfg)
    assert a.n_draws == 5 and a.pi.shape == (5, 10, 6) and a.pi.dtype == np.float32
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.pi, b.pi)
    assert 0 < a.pi.min() and a.pi.max() < 1
    assert a.loglik.shape == (10,)
    thin = run_sampler(net, covs, cfg, thinning=2)
    assert thin.n_draws == 3


def test_resume_matches_uninterrupted(tmp_path):
    net, covs = _small_problem()
    cfg = ModelConfig(H=2, n_iter=12, n_burn=4, seed=5)
    full = run_sampler(net, covs, cfg)
    ck = tmp_path / "ck.npz"
    assert run_sampler(net, covs, cfg, checkpoint_path=ck, stop_after=7, checkpoint_every=3) is None
    state, meta, _, _ = read_checkpoint(ck)
    assert meta["next_sweep"] == 7
    resumed = run_sampler(net, covs, cfg, checkpoint_path=ck, resume=True)
    for name in ("pi", "mu", "beta", "tau", "x_energy", "loglik"):
        assert np.array_equal(getattr(full, name), getattr(resumed, name)), name
    with pytest.raises(ValueError):
        run_sampler(net, covs, cfg.replace(H=3), checkpoint_path=ck, resume=True)


def test_failure_writes_snapshot(tmp_path, monkeypatch):
    from tvpnet import gibbs

    net, covs = _small_problem()
    cfg = ModelConfig(H=1, n_iter=5, n_burn=0, seed=1)

    def broken(state, *a, **kw):
        state.mu[:] = np.nan
        return state

    monkeypatch.setattr(gibbs, "update_mu", broken)
    with pytest.raises(SamplerError) as info:
        run_sampler(net, covs, cfg, checkpoint_path=tmp_path / "ck.npz")
    assert info.value.sweep == 0
    assert info.value.snapshot.endswith(".failed")


def test_missing_entries_get_no_likelihood(rng):
    # with every response missing the mu update is a prior draw
    net = DynamicNetwork(np.full((3, 4), np.nan))
    covs = EdgeCovariates(np.zeros((0, 3, 4)))
    cfg = ModelConfig(H=1, n_iter=2, n_burn=0)
    state = initial_state(cfg, covs, rng)
    plan = _plan(cfg, 4, 0)
    m, c = mu_conditional(state, net, covs, plan)
    np.testing.assert_allclose(m, 0.0, atol=1e-12)
    np.testing.assert_allclose(c, plan.k_mu.K + plan.k_mu.jitter_used * np.eye(4), atol=1e-10)
    update_mu(state, net, covs, plan, rng)
    update_latent(state, net, covs, plan, rng)
