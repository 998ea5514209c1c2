"""Tanh-squashed Gaussian and deterministic actors, plus the noise-injection
procedure used while evaluating candidates during evolutionary fine-tuning.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from esfinetune import nn

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)


class PolicyKind(str, enum.Enum):
    GAUSSIAN = "gaussian"  # SAC actor: outputs mean and log_std
    DETERMINISTIC = "deterministic"  # TD3/DDPG actor: outputs pre-tanh action


@dataclass
class Policy:
    arch: nn.MlpArchitecture
    params: np.ndarray
    action_scale: float
    kind: PolicyKind = PolicyKind.GAUSSIAN

    def __post_init__(self):
        self.kind = PolicyKind(self.kind)
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (self.arch.n_params,):
            raise nn.ConfigError("parameter vector does not match architecture")

    @property
    def action_dim(self) -> int:
        if self.kind is PolicyKind.GAUSSIAN:
            return self.arch.output_dim // 2
        return self.arch.output_dim

    def with_params(self, params) -> Policy:
        return Policy(self.arch, np.array(params, dtype=float), self.action_scale, self.kind)

    def mean_log_std(self, obs, params=None):
        out = nn.predict(self.arch, self.params if params is None else params, obs)
        return split_gaussian(out, self.action_dim, self.kind)


@dataclass(frozen=True)
class NoiseInjectionConfig:
    sigma: float = 0.0
    atanh_clip: float = 1e-6

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def split_gaussian(out, action_dim, kind=PolicyKind.GAUSSIAN):
    """Return ``(mean, clamped log_std)``; deterministic actors get ``log_std = LOG_STD_MIN``."""
    if kind is PolicyKind.DETERMINISTIC:
        return out, np.full_like(out, LOG_STD_MIN)
    mu = out[..., :action_dim]
    log_std = np.clip(out[..., action_dim:], LOG_STD_MIN, LOG_STD_MAX)
    return mu, log_std


def log1m_tanh_sq(u):
    """``log(1 - tanh(u)**2)`` without cancellation for large ``|u|``."""
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def squashed_log_prob(u, mu, log_std):
    """Log density of ``tanh(u)`` when ``u ~ N(mu, exp(log_std)^2)``, summed over action dims."""
    z = (u - mu) / np.exp(log_std)
    gauss = -0.5 * z * z - log_std - 0.5 * LOG_2PI
    return np.sum(gauss - log1m_tanh_sq(u), axis=-1)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_action(policy: Policy, obs, seed) -> tuple[np.ndarray, float]:
    """Reparameterised sample ``scale * tanh(mu + sigma * eps)`` and its log-density.

    The log-density is that of the pre-scale action in ``(-1, 1)``.
    """
    mu, log_std = policy.mean_log_std(obs)
    eps = _rng(seed).standard_normal(np.shape(mu))
    u = mu + np.exp(log_std) * eps
    return policy.action_scale * np.tanh(u), squashed_log_prob(u, mu, log_std)


def greedy_action(policy: Policy, obs) -> np.ndarray:
    mu, _ = policy.mean_log_std(obs)
    return policy.action_scale * np.tanh(mu)


def inject_noise(pre_scale_action, noise: NoiseInjectionConfig, eta):
    """``tanh(atanh(clip(a)) + eta)`` for pre-scale actions in ``[-1, 1]``."""
    eps = noise.atanh_clip
    a = np.clip(pre_scale_action, -1.0 + eps, 1.0 - eps)
    return np.tanh(np.arctanh(a) + eta)


def noisy_greedy_action(policy: Policy, obs, noise: NoiseInjectionConfig, seed) -> np.ndarray:
    """Greedy action perturbed in pre-squash space by ``N(0, sigma^2)``."""
    greedy = greedy_action(policy, obs)
    eta = noise.sigma * _rng(seed).standard_normal(np.shape(greedy))
    return policy.action_scale * inject_noise(greedy / policy.action_scale, noise, eta)


def policy_variance(policy: Policy, observations) -> float:
    """Mean over observations of the mean diagonal pre-squash variance."""
    _, log_std = policy.mean_log_std(np.atleast_2d(observations))
    return float(np.mean(np.exp(2.0 * log_std)))


def measure_action_variance(policy: Policy, env, seed=0) -> float:
    """Average policy variance along one greedy rollout of ``env``."""
    from esfinetune.envs import rollout

    traj = rollout(env, policy, mode="greedy", seed=seed)
    return policy_variance(policy, traj.observations)
