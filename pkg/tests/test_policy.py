import numpy as np
import pytest
from scipy import integrate

from esfinetune import envs, nn, policy
from esfinetune.nn import MlpArchitecture
from esfinetune.policy import NoiseInjectionConfig, Policy, PolicyKind


def constant_policy(mu, log_std, scale=2.0):
    """Gaussian policy whose outputs ignore the input: all weights zero, biases set."""
    arch = MlpArchitecture(3, (), 2)
    params = np.zeros(arch.n_params)
    params[-2:] = [mu, log_std]
    return Policy(arch, params, scale)


def test_log_prob_integrates_to_one():
    for mu, log_std in [(0.0, 0.0), (0.8, -0.7), (-1.5, 0.5)]:
        # density of a in (-1, 1) via u = atanh(a)
        def density(a):
            u = np.arctanh(a)
            return np.exp(policy.squashed_log_prob(np.array([u]), mu, log_std))

        mass, _ = integrate.quad(density, -1, 1, limit=200)
        assert mass == pytest.approx(1.0, abs=1e-3)


def test_entropy_matches_quadrature():
    mu, log_std = 0.4, -0.3
    pol = constant_policy(mu, log_std, scale=1.0)
    rng = np.random.default_rng(0)
    logps = np.array([policy.sample_action(pol, np.zeros(3), rng)[1] for _ in range(20_000)])

    def integrand(a):
        u = np.arctanh(a)
        lp = policy.squashed_log_prob(np.array([u]), mu, log_std)
        return -np.exp(lp) * lp

    entropy, _ = integrate.quad(integrand, -1 + 1e-12, 1 - 1e-12, limit=200)
    assert -logps.mean() == pytest.approx(entropy, rel=0.02)


def test_log1m_tanh_sq_is_stable():
    u = np.array([-30.0, -3.0, 0.0, 2.0, 30.0])
    ref = np.log(1.0 - np.tanh(u[1:4]) ** 2)
    got = policy.log1m_tanh_sq(u)
    assert np.allclose(got[1:4], ref, rtol=1e-12)
    assert np.all(np.isfinite(got))
    assert got[0] == pytest.approx(np.log(4.0) - 60.0)


def test_sample_collapses_to_greedy():
    pol = constant_policy(0.7, policy.LOG_STD_MIN)
    a, _ = policy.sample_action(pol, np.zeros(3), 0)
    assert a == pytest.approx(policy.greedy_action(pol, np.zeros(3)), abs=1e-6)
    pol = constant_policy(0.7, -50.0)  # below the clamp
    assert policy.policy_variance(pol, np.zeros((1, 3))) == pytest.approx(np.exp(-40.0), rel=1e-12)


def test_sample_is_seeded_and_bounded():
    pol = constant_policy(0.0, 1.5, scale=3.0)
    a1, lp1 = policy.sample_action(pol, np.zeros(3), 42)
    a2, lp2 = policy.sample_action(pol, np.zeros(3), 42)
    assert np.array_equal(a1, a2) and lp1 == lp2
    rng = np.random.default_rng(0)
    acts = np.array([policy.sample_action(pol, np.zeros(3), rng)[0] for _ in range(2000)])
    assert np.all(np.abs(acts) <= 3.0)


def test_greedy_zero_params_and_saturation():
    arch = MlpArchitecture(3, (4,), 2)
    pol = Policy(arch, np.zeros(arch.n_params), 2.5)
    assert np.array_equal(policy.greedy_action(pol, np.ones(3)), [0.0])
    sat = constant_policy(40.0, 0.0, scale=2.5)
    assert policy.greedy_action(sat, np.zeros(3))[0] == pytest.approx(2.5, abs=1e-9)


def test_noise_injection_closed_form():
    got = policy.inject_noise(np.array([0.0]), NoiseInjectionConfig(0.5), 0.5)
    assert got[0] == pytest.approx(np.tanh(0.5), abs=1e-15)
    assert np.tanh(0.5) == pytest.approx(0.4621, abs=1e-4)


def test_zero_sigma_roundtrip():
    scale = 3.0
    rng = np.random.default_rng(0)
    for mu in np.linspace(-5, 5, 41):
        pol = constant_policy(mu, 0.0, scale=scale)
        obs = rng.normal(size=3)
        greedy = policy.greedy_action(pol, obs)
        noisy = policy.noisy_greedy_action(pol, obs, NoiseInjectionConfig(0.0), seed=1)
        assert abs(noisy[0] - greedy[0]) <= 1e-9 * scale


def test_noise_variance_matches_sigma():
    sigma = 0.3
    pol = constant_policy(0.25, 0.0, scale=1.0)
    rng = np.random.default_rng(123)
    n = 100_000
    acts = np.array([policy.noisy_greedy_action(pol, np.zeros(3), NoiseInjectionConfig(sigma), rng)[0] for _ in range(n)])
    eta = np.arctanh(acts) - 0.25
    assert eta.var() == pytest.approx(sigma**2, rel=0.02)


def test_noisy_actions_stay_bounded_near_saturation():
    pol = constant_policy(12.0, 0.0, scale=2.5)
    rng = np.random.default_rng(0)
    acts = [policy.noisy_greedy_action(pol, np.zeros(3), NoiseInjectionConfig(1.0), rng)[0] for _ in range(1000)]
    assert np.all(np.isfinite(acts)) and np.all(np.abs(acts) <= 2.5)


def test_measure_variance_constant_log_std():
    env = envs.make_env("pendubot", horizon_s=0.5)
    arch = MlpArchitecture(env.obs_dim, (), 2)
    params = np.zeros(arch.n_params)
    params[-1] = np.log(0.3)
    pol = Policy(arch, params, env.action_scale)
    assert policy.measure_action_variance(pol, env) == pytest.approx(0.09, abs=1e-9)


def test_deterministic_policy_has_no_variance():
    arch = MlpArchitecture(3, (4,), 1)
    pol = Policy(arch, nn.init_params(arch, 0), 1.0, PolicyKind.DETERMINISTIC)
    assert pol.action_dim == 1
    assert policy.policy_variance(pol, np.zeros((2, 3))) == pytest.approx(np.exp(-40.0))


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        NoiseInjectionConfig(-0.1)
