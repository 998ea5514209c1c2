"""Off-policy actor-critic learners (SAC, TD3, DDPG) on the in-house MLPs.

Every learner keeps its networks as flat parameter vectors and updates them
with hand-written gradients: critic regression onto bootstrapped targets,
then an actor step that backpropagates ``dQ/da`` through the actor.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from esfinetune import nn
from esfinetune.policy import LOG_STD_MAX, LOG_STD_MIN, Policy, PolicyKind, squashed_log_prob
from esfinetune.rl.buffer import Batch, ReplayBuffer
from esfinetune.rl.optim import Adam


class Algorithm(str, enum.Enum):
    SAC = "sac"
    TD3 = "td3"
    DDPG = "ddpg"


class TrainingError(RuntimeError):
    """A loss became non-finite; ``diagnostics`` holds the offending values."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    lr: float = 1e-3
    tau_polyak: float = 0.005
    batch_size: int = 256
    warmup_steps: int = 1000
    train_freq: int = 1
    alpha: float = 0.2  # initial value when auto-tuned
    auto_alpha: bool = True
    target_entropy: float | None = None  # defaults to -action_dim
    buffer_capacity: int = 1_000_000
    actor_hidden: tuple = (64, 64)
    critic_hidden: tuple = (128, 128)

    def __post_init__(self):
        object.__setattr__(self, "actor_hidden", tuple(self.actor_hidden))
        object.__setattr__(self, "critic_hidden", tuple(self.critic_hidden))
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau_polyak <= 1:
            raise ValueError("tau_polyak must lie in (0, 1]")
        if self.lr < 0 or self.alpha < 0:
            raise ValueError("lr and alpha must be >= 0")
        if self.batch_size < 1 or self.train_freq < 1 or self.warmup_steps < 0:
            raise ValueError("batch_size and train_freq must be >= 1")


@dataclass(frozen=True)
class Td3Config:
    policy_delay: int = 2
    target_noise_std: float = 0.2
    target_noise_clip: float = 0.5
    exploration_noise_std: float = 0.1

    def __post_init__(self):
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.target_noise_clip <= 0 or self.target_noise_std < 0 or self.exploration_noise_std < 0:
            raise ValueError("noise settings must be non-negative, clip positive")


@dataclass
class Critic:
    arch: nn.MlpArchitecture
    params: np.ndarray
    target: np.ndarray
    opt: Adam

    @classmethod
    def create(cls, obs_dim, action_dim, hidden, lr, seed):
        arch = nn.MlpArchitecture(obs_dim + action_dim, hidden, 1)
        params = nn.init_params(arch, seed)
        return cls(arch, params, params.copy(), Adam(arch.n_params, lr))

    def value(self, obs, actions, target=False):
        x = np.concatenate([obs, actions], axis=1)
        return nn.predict(self.arch, self.target if target else self.params, x)[:, 0]

    def forward(self, obs, actions):
        out, tape = nn.forward(self.arch, self.params, np.concatenate([obs, actions], axis=1))
        return out[:, 0], tape

    def regress(self, obs, actions, y) -> float:
        """One Adam step on ``mean((Q - y)^2)``; returns the pre-step loss."""
        q, tape = self.forward(obs, actions)
        err = q - y
        grad, _ = nn.backward(tape, (2.0 / len(y)) * err[:, None])
        self.opt.step(self.params, grad)
        return float(np.mean(err * err))

    def polyak(self, tau):
        self.target += tau * (self.params - self.target)


def polyak_update(target: np.ndarray, online: np.ndarray, tau: float) -> None:
    target += tau * (online - target)


def _check_finite(diag: dict):
    if not all(math.isfinite(v) for v in diag.values()):
        raise TrainingError("non-finite loss during update", diag)


@dataclass
class SacAgent:
    actor: Policy
    actor_opt: Adam
    critics: list
    cfg: SacConfig
    log_alpha: float
    alpha_opt: Adam
    target_entropy: float
    updates: int = field(default=0)

    @classmethod
    def create(cls, obs_dim, action_dim, action_scale, cfg: SacConfig, rng: np.random.Generator):
        arch = nn.MlpArchitecture(obs_dim, cfg.actor_hidden, 2 * action_dim)
        actor = Policy(arch, nn.init_params(arch, rng.integers(2**63)), action_scale, PolicyKind.GAUSSIAN)
        critics = [Critic.create(obs_dim, action_dim, cfg.critic_hidden, cfg.lr, rng.integers(2**63)) for _ in range(2)]
        h_target = -float(action_dim) if cfg.target_entropy is None else cfg.target_entropy
        return cls(actor, Adam(arch.n_params, cfg.lr), critics, cfg, math.log(cfg.alpha), Adam(1, cfg.lr), h_target)

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def explore(self, obs, rng) -> np.ndarray:
        out = nn.predict(self.actor.arch, self.actor.params, obs)
        k = self.actor.action_dim
        mu, log_std = out[:k], np.clip(out[k:], LOG_STD_MIN, LOG_STD_MAX)
        return np.tanh(mu + np.exp(log_std) * rng.standard_normal(k))

    def _sample(self, out, eps):
        k = self.actor.action_dim
        mu, raw = out[:, :k], out[:, k:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        u = mu + std * eps
        return mu, raw, log_std, std, u, np.tanh(u), squashed_log_prob(u, mu, log_std)

    def critic_targets(self, batch: Batch, rng) -> np.ndarray:
        out = nn.predict(self.actor.arch, self.actor.params, batch.next_obs)
        eps = rng.standard_normal((len(batch), self.actor.action_dim))
        *_, a_next, logp_next = self._sample(out, eps)
        q_next = np.minimum(
            self.critics[0].value(batch.next_obs, a_next, target=True),
            self.critics[1].value(batch.next_obs, a_next, target=True),
        )
        return batch.rewards + self.cfg.gamma * (1.0 - batch.dones) * (q_next - self.alpha * logp_next)

    def update(self, buffer_or_batch, rng: np.random.Generator) -> dict:
        batch = _as_batch(buffer_or_batch, self.cfg.batch_size, rng)
        n = len(batch)
        y = self.critic_targets(batch, rng)
        critic_loss = 0.5 * sum(c.regress(batch.obs, batch.actions, y) for c in self.critics)

        out, tape = nn.forward(self.actor.arch, self.actor.params, batch.obs)
        eps = rng.standard_normal((n, self.actor.action_dim))
        mu, raw, log_std, std, u, a, logp = self._sample(out, eps)
        dq_da, qmin = _min_q_action_grad(self.critics, batch.obs, a)
        alpha = self.alpha
        actor_loss = float(np.mean(alpha * logp - qmin))
        # dL/du for L = mean(alpha * logp - Qmin(s, tanh(u)))
        g_u = (-dq_da * (1.0 - a * a) + alpha * 2.0 * a) / n
        g_mu = g_u
        in_range = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
        g_log_std = (g_u * std * eps - alpha / n) * in_range
        grad, _ = nn.backward(tape, np.concatenate([g_mu, g_log_std], axis=1))
        self.actor_opt.step(self.actor.params, grad)

        entropy = float(-np.mean(logp))
        if self.cfg.auto_alpha:
            la = np.array([self.log_alpha])
            self.alpha_opt.step(la, np.array([-np.mean(logp + self.target_entropy)]))
            self.log_alpha = float(la[0])
        for c in self.critics:
            c.polyak(self.cfg.tau_polyak)
        self.updates += 1
        diag = {"critic_loss": critic_loss, "actor_loss": actor_loss, "entropy": entropy, "alpha": alpha}
        _check_finite(diag)
        return diag


def _as_batch(source, batch_size, rng) -> Batch:
    if isinstance(source, ReplayBuffer):
        if len(source) < batch_size:
            raise ValueError("buffer holds fewer transitions than batch_size")
        return source.sample(batch_size, rng)
    return source


def _min_q_action_grad(critics, obs, actions):
    """Gradient of ``min_j Q_j(s, a)`` w.r.t. ``a`` (per row) and the min itself."""
    qs, tapes = zip(*(c.forward(obs, actions) for c in critics))
    if len(critics) == 1:
        choose = [np.ones_like(qs[0])]
    else:
        first = qs[0] <= qs[1]
        choose = [first.astype(float), (~first).astype(float)]
    act_dim = actions.shape[1]
    grad = np.zeros_like(actions)
    for c_mask, tape in zip(choose, tapes):
        _, g_in = nn.backward(tape, c_mask[:, None])
        grad += g_in[:, -act_dim:]
    return grad, np.minimum.reduce(qs)


def deterministic_actor_grad(actor: Policy, critic: Critic, obs) -> tuple[np.ndarray, float]:
    """Gradient of ``J = mean_s Q(s, tanh(actor(s)))`` w.r.t. actor parameters, and ``J``."""
    out, tape = nn.forward(actor.arch, actor.params, obs)
    a = np.tanh(out)
    q, qtape = critic.forward(obs, a)
    _, g_in = nn.backward(qtape, np.ones((len(q), 1)) / len(q))
    g_out = g_in[:, -a.shape[1] :] * (1.0 - a * a)
    grad, _ = nn.backward(tape, g_out)
    return grad, float(np.mean(q))


@dataclass
class DeterministicAgent:
    """TD3 (twin critics, delayed and smoothed) or DDPG (one critic)."""

    actor: Policy
    actor_target: np.ndarray
    actor_opt: Adam
    critics: list
    cfg: SacConfig
    td3: Td3Config
    algorithm: Algorithm
    updates: int = field(default=0)

    @classmethod
    def create(cls, obs_dim, action_dim, action_scale, cfg, td3, algorithm, rng):
        algorithm = Algorithm(algorithm)
        arch = nn.MlpArchitecture(obs_dim, cfg.actor_hidden, action_dim)
        actor = Policy(arch, nn.init_params(arch, rng.integers(2**63)), action_scale, PolicyKind.DETERMINISTIC)
        n_critics = 2 if algorithm is Algorithm.TD3 else 1
        critics = [Critic.create(obs_dim, action_dim, cfg.critic_hidden, cfg.lr, rng.integers(2**63)) for _ in range(n_critics)]
        return cls(actor, actor.params.copy(), Adam(arch.n_params, cfg.lr), critics, cfg, td3, algorithm)

    def explore(self, obs, rng) -> np.ndarray:
        a = np.tanh(nn.predict(self.actor.arch, self.actor.params, obs))
        return np.clip(a + self.td3.exploration_noise_std * rng.standard_normal(a.shape), -1.0, 1.0)

    def critic_targets(self, batch: Batch, rng) -> np.ndarray:
        a_next = np.tanh(nn.predict(self.actor.arch, self.actor_target, batch.next_obs))
        if self.algorithm is Algorithm.TD3:
            noise = self.td3.target_noise_std * rng.standard_normal(a_next.shape)
            noise = np.clip(noise, -self.td3.target_noise_clip, self.td3.target_noise_clip)
            a_next = np.clip(a_next + noise, -1.0, 1.0)
        q_next = np.minimum.reduce([c.value(batch.next_obs, a_next, target=True) for c in self.critics])
        return batch.rewards + self.cfg.gamma * (1.0 - batch.dones) * q_next

    def update(self, buffer_or_batch, rng: np.random.Generator) -> dict:
        batch = _as_batch(buffer_or_batch, self.cfg.batch_size, rng)
        y = self.critic_targets(batch, rng)
        critic_loss = sum(c.regress(batch.obs, batch.actions, y) for c in self.critics) / len(self.critics)
        self.updates += 1
        diag = {"critic_loss": critic_loss}
        delay = self.td3.policy_delay if self.algorithm is Algorithm.TD3 else 1
        if self.updates % delay == 0:
            grad, q = deterministic_actor_grad(self.actor, self.critics[0], batch.obs)
            self.actor_opt.step(self.actor.params, -grad)
            polyak_update(self.actor_target, self.actor.params, self.cfg.tau_polyak)
            for c in self.critics:
                c.polyak(self.cfg.tau_polyak)
            diag["actor_loss"] = -q
        _check_finite(diag)
        return diag


def make_agent(algorithm, obs_dim, action_dim, action_scale, cfg: SacConfig, td3: Td3Config, rng):
    algorithm = Algorithm(algorithm)
    if algorithm is Algorithm.SAC:
        return SacAgent.create(obs_dim, action_dim, action_scale, cfg, rng)
    return DeterministicAgent.create(obs_dim, action_dim, action_scale, cfg, td3, algorithm, rng)
