import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asediff import (ConfigurationError, ContractError, LossConfig, eps_to_score,
                     gaussian_oracle_eps, kl_vlb_term, linear_beta_schedule, loss_simple,
                     mu_theta, perturb, posterior_q, score_to_eps)
from asediff.diffusion import GaussianOracle, model_log_variance, recover_eps

from golden import (ALPHA_BAR_1000, KL_1D_T300, ORACLE_EPS, PERTURB_500, POSTERIOR_T4_MU,
                    POSTERIOR_T4_VAR)


# -- schedule ---------------------------------------------------------------

def test_linear_endpoints_exact(ns):
    assert ns.beta[0] == 1e-4
    assert ns.beta[-1] == 0.02
    assert ns.T == 1000


def test_single_step_schedule():
    s = linear_beta_schedule(1, 0.1, 0.1)
    assert s.alpha_bar_at(1) == pytest.approx(0.9, abs=1e-15)
    assert s.beta_tilde_at(1) == 0.0


def test_alpha_bar_1000_golden(ns):
    assert ns.alpha_bar_at(1000) == pytest.approx(ALPHA_BAR_1000, rel=1e-10)


def test_schedule_invariants(ns):
    ab = ns.alpha_bar
    assert np.all(np.diff(ab) < 0)
    assert np.all((ab > 0) & (ab <= 1))
    assert ns.beta_tilde[0] == 0.0
    assert np.all(ns.beta_tilde <= ns.beta)
    prev = np.concatenate([[1.0], ab[:-1]])
    np.testing.assert_allclose(ns.alpha * prev, ab, rtol=1e-14)
    np.testing.assert_allclose(ns.sigma, np.sqrt(ns.beta_tilde))
    assert ns.alpha_bar_at(0) == 1.0


def test_schedule_tables_are_float64_and_read_only(ns):
    assert ns.alpha_bar.dtype == np.float64
    with pytest.raises(ValueError):
        ns.alpha_bar[0] = 0.5


def test_sigma_beta_flag():
    s = linear_beta_schedule(sigma_kind="beta")
    np.testing.assert_allclose(s.sigma, np.sqrt(s.beta))


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02),
                                  (10, 1e-4, 1.0)])
def test_bad_schedule_rejected(args):
    with pytest.raises(ConfigurationError):
        linear_beta_schedule(*args)


def test_out_of_range_step(ns):
    with pytest.raises(ContractError):
        ns.alpha_bar_at(1001)
    with pytest.raises(ContractError):
        ns.beta_at(0)


# -- perturbation and conversions -----------------------------------------------

def test_perturb_special_cases(ns, rng):
    x0 = rng.standard_normal((5, 3))
    eps = rng.standard_normal((5, 3))
    np.testing.assert_allclose(perturb(x0, 200, np.zeros_like(x0), ns),
                               np.sqrt(ns.alpha_bar_at(200)) * x0)
    np.testing.assert_allclose(perturb(np.zeros_like(x0), 200, eps, ns),
                               np.sqrt(1 - ns.alpha_bar_at(200)) * eps)


def test_perturb_golden(ns):
    out = perturb(np.array([[1.0, 1.0]]), 500, np.array([[1.0, -1.0]]), ns)
    np.testing.assert_allclose(out[0], PERTURB_500, rtol=1e-12)


def test_perturb_shape_mismatch(ns):
    with pytest.raises(ContractError):
        perturb(np.zeros((2, 2)), 5, np.zeros((2, 3)), ns)


def test_perturb_moments(ns):
    # empirical mean/variance within 3 standard errors at n = 1e5
    rng = np.random.default_rng(7)
    n, t = 100_000, 400
    x0 = np.full((n, 1), 0.8)
    x = perturb(x0, t, rng.standard_normal((n, 1)), ns)
    ab = ns.alpha_bar_at(t)
    se = np.sqrt((1 - ab) / n)
    assert abs(x.mean() - np.sqrt(ab) * 0.8) < 3 * se
    var_se = (1 - ab) * np.sqrt(2 / (n - 1))
    assert abs(x.var(ddof=1) - (1 - ab)) < 3 * var_se


def test_eps_to_score_values():
    s = linear_beta_schedule(1, 0.25, 0.25)      # alpha_bar_1 = 0.75
    np.testing.assert_allclose(eps_to_score(np.array([1.0, -2.0]), 1, s), [-2.0, 4.0])
    assert np.all(eps_to_score(np.zeros(3), 1, s) == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 1000), st.lists(st.floats(-50, 50), min_size=1, max_size=6))
def test_score_round_trip(t, vals):
    ns = linear_beta_schedule()
    e = np.array(vals)
    back = score_to_eps(eps_to_score(e, t, ns), t, ns)
    np.testing.assert_allclose(back, e, rtol=1e-6, atol=1e-12)


def test_score_guard_at_alpha_bar_one():
    s = linear_beta_schedule(3, 0.1, 0.2)
    with pytest.raises(ContractError):
        eps_to_score(np.ones(2), 0, s)


# -- posterior and model mean -----------------------------------------------

def test_posterior_at_t1_is_x0(ns, rng):
    x0 = rng.standard_normal((4, 2))
    x_t = perturb(x0, 1, rng.standard_normal((4, 2)), ns)
    mu, var = posterior_q(x_t, x0, 1, ns)
    np.testing.assert_array_equal(mu, x0)
    assert var == 0.0


def test_recovered_noise_matches(ns, rng):
    x0 = rng.standard_normal((6, 2))
    eps = rng.standard_normal((6, 2))
    t = rng.integers(1, 1001, 6)
    np.testing.assert_allclose(recover_eps(perturb(x0, t, eps, ns), x0, t, ns), eps,
                               rtol=1e-7, atol=1e-9)


def test_posterior_golden_tiny(ns4):
    mu, var = posterior_q(np.array([[-0.3, 0.5]]), np.array([[0.7, -1.2]]), 2, ns4)
    np.testing.assert_allclose(mu[0], POSTERIOR_T4_MU, rtol=1e-12)
    assert var == pytest.approx(POSTERIOR_T4_VAR, rel=1e-12)


def test_mu_theta_zero_eps(ns, rng):
    x = rng.standard_normal((3, 2))
    np.testing.assert_allclose(mu_theta(x, np.zeros_like(x), 77, ns), x / np.sqrt(ns.alpha_at(77)))


def test_mu_theta_with_true_noise_is_posterior_mean(ns, rng):
    x0 = rng.standard_normal((8, 2))
    eps = rng.standard_normal((8, 2))
    t = rng.integers(2, 1001, 8)
    x_t = perturb(x0, t, eps, ns)
    mu_q, _ = posterior_q(x_t, x0, t, ns)
    np.testing.assert_allclose(mu_theta(x_t, eps, t, ns), mu_q, rtol=1e-8, atol=1e-10)


# -- losses -----------------------------------------------------------------

def _batch(rng, n=64, d=2):
    return rng.standard_normal((n, d)), rng.integers(1, 1001, n), rng.standard_normal((n, d))


def test_loss_zero_for_exact_predictor(ns, rng):
    x0, t, eps = _batch(rng)
    assert loss_simple((x0, t, eps), lambda x_t, tt: recover_eps(x_t, x0, tt, ns), ns) \
        == pytest.approx(0.0, abs=1e-18)


def test_loss_linear_in_lambda(ns, rng):
    x0, t, eps = _batch(rng)
    pred = lambda x_t, tt: 0.5 * x_t
    base = loss_simple((x0, t, eps), pred, ns)
    mask = t > 500
    boosted = loss_simple((x0, t, eps), pred, ns, LossConfig(lambda_fn=lambda tt: np.where(tt > 500, 2.0, 1.0)))
    x_t = perturb(x0, t, eps, ns)
    per = np.sum((eps - 0.5 * x_t) ** 2, axis=1)
    assert boosted == pytest.approx(base + per[mask].sum() / len(t), rel=1e-12)


def test_loss_fixed_batch_recomputed(ns):
    rng = np.random.default_rng(2024)
    x0, t, eps = _batch(rng, 16, 3)
    pred = lambda x_t, tt: np.tanh(x_t) * (tt[:, None] / 1000.0)
    got = loss_simple((x0, t, eps), pred, ns, LossConfig(lambda_fn=lambda tt: 1.0 + tt / 1000.0))
    # plain loop recomputation
    total = 0.0
    for i in range(16):
        ab = ns.alpha_bar[t[i] - 1]
        xt = [np.sqrt(ab) * x0[i, j] + np.sqrt(1 - ab) * eps[i, j] for j in range(3)]
        err = sum((eps[i, j] - np.tanh(xt[j]) * t[i] / 1000.0) ** 2 for j in range(3))
        total += (1.0 + t[i] / 1000.0) * err
    assert got == pytest.approx(total / 16, rel=1e-12)


def test_lambda_must_be_positive(ns, rng):
    with pytest.raises(ConfigurationError):
        loss_simple(_batch(rng), lambda x, t: x, ns, LossConfig(lambda_fn=lambda t: np.zeros(t.shape)))


def test_oracle_is_locally_optimal(ns):
    # 1-D Gaussian data: perturbing the optimal predictor never lowers the loss
    rng = np.random.default_rng(3)
    n = 20000
    x0 = 0.3 + 0.7 * rng.standard_normal((n, 1))
    t = rng.integers(1, 1001, n)
    eps = rng.standard_normal((n, 1))
    oracle = lambda x_t, tt: gaussian_oracle_eps(x_t, tt, np.array([0.3]), 0.7, ns)
    best = loss_simple((x0, t, eps), oracle, ns)
    for delta in (0.05, -0.05, 0.2):
        assert loss_simple((x0, t, eps), lambda x_t, tt: oracle(x_t, tt) + delta, ns) > best
    assert loss_simple((x0, t, eps), lambda x_t, tt: 1.05 * oracle(x_t, tt), ns) > best


# -- hybrid KL --------------------------------------------------------------

def test_kl_zero_when_model_matches(ns, rng):
    x0 = rng.standard_normal((5, 2))
    eps = rng.standard_normal((5, 2))
    t = np.array([2, 10, 300, 700, 1000])
    x_t = perturb(x0, t, eps, ns)
    kl = kl_vlb_term(x0, x_t, t, eps, np.zeros((5, 2)), ns)
    np.testing.assert_allclose(kl, 0.0, atol=1e-9)


def test_kl_variance_endpoints(ns):
    t = np.array([50, 600])
    v1 = np.exp(model_log_variance(np.ones((2, 1)), t, ns))[:, 0]
    v0 = np.exp(model_log_variance(np.zeros((2, 1)), t, ns))[:, 0]
    np.testing.assert_allclose(v1, ns.beta_at(t), rtol=1e-12)
    np.testing.assert_allclose(v0, ns.beta_tilde_at(t), rtol=1e-12)


def test_kl_golden_1d(ns):
    kl = kl_vlb_term(np.array([[0.4]]), np.array([[0.1]]), 300, np.array([[0.25]]),
                     np.array([[0.3]]), ns)
    assert float(kl[0]) == pytest.approx(KL_1D_T300, rel=1e-8)


def test_kl_t1_excluded_and_nonnegative(ns, rng):
    x0 = rng.standard_normal((50, 2))
    t = rng.integers(1, 1001, 50)
    t[:5] = 1
    x_t = perturb(x0, t, rng.standard_normal((50, 2)), ns)
    kl = kl_vlb_term(x0, x_t, t, rng.standard_normal((50, 2)), rng.uniform(size=(50, 2)), ns)
    assert np.all(np.isfinite(kl))
    assert np.all(kl[:5] == 0.0)
    assert np.all(kl >= -1e-12)


def test_kl_rejects_v_out_of_range(ns):
    with pytest.raises(ContractError):
        kl_vlb_term(np.zeros((1, 1)), np.zeros((1, 1)), 5, np.zeros((1, 1)), np.full((1, 1), 1.5), ns)


# -- Gaussian oracle ----------------------------------------------------------

def test_oracle_zero_at_marginal_mean(ns):
    m = np.array([0.5, -1.0])
    ab = ns.alpha_bar_at(300)
    np.testing.assert_allclose(gaussian_oracle_eps(np.sqrt(ab) * m[None], 300, m, 1.3, ns), 0.0,
                               atol=1e-15)


def test_oracle_point_mass_inverts_perturb(ns, rng):
    m = np.array([0.2, 0.4])
    eps = rng.standard_normal((4, 2))
    x_t = perturb(np.tile(m, (4, 1)), 250, eps, ns)
    np.testing.assert_allclose(gaussian_oracle_eps(x_t, 250, m, 0.0, ns), eps, rtol=1e-9)


def test_oracle_golden():
    s = linear_beta_schedule(1, 0.5, 0.5)      # alpha_bar_1 = 0.5
    got = gaussian_oracle_eps(np.array([[1.0]]), 1, np.zeros(1), 2.0, s)
    assert float(got[0, 0]) == pytest.approx(ORACLE_EPS, rel=1e-13)


def test_oracle_object_surface(ns):
    o = GaussianOracle(np.zeros(2), 1.0, ns)
    assert o.in_dim == 2
    assert o.flop_count(None) == 0
    assert o.predict(np.ones((3, 2)), 10).shape == (3, 2)
