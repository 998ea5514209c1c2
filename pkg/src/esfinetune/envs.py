"""Episodic control tasks and (batched) policy rollouts.

A single code path simulates ``B`` closed loops in lockstep: each row has its
own policy parameters (or shares one vector), its own physical parameters
(or shares one set) and its own random stream, so row ``i`` produces the same
trajectory whatever else is in the batch composition used by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from esfinetune import nn, physics, scoring
from esfinetune.physics import CartpoleParams, DoublePendulumParams, IntegratorConfig
from esfinetune.policy import NoiseInjectionConfig, Policy, PolicyKind, inject_noise, split_gaussian

SYSTEMS = ("cartpole", "acrobot", "pendubot")
VELOCITY_OBS_SCALE = 0.1


@dataclass(frozen=True)
class Env:
    """Fixed-horizon swing-up task starting from the hanging rest pose."""

    system: str
    params: CartpoleParams | DoublePendulumParams
    dt: float
    horizon_s: float
    weights: scoring.DoublePendulumRewardWeights | None = None
    internal_dt: float = 0.002
    reset_noise: float = 0.0

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")

    @property
    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig.for_control_period(self.dt, self.internal_dt)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_s / self.dt))

    @property
    def obs_dim(self) -> int:
        return 5 if self.system == "cartpole" else 6

    @property
    def action_dim(self) -> int:
        return 1

    @property
    def action_scale(self) -> float:
        return float(self.params.control_limit)

    def with_dt(self, dt: float) -> Env:
        return replace(self, dt=dt)

    def initial_state(self, rng=None) -> np.ndarray:
        state = np.zeros(4)
        if self.reset_noise and rng is not None:
            state = state + rng.uniform(-self.reset_noise, self.reset_noise, size=4)
        return state

    def observe(self, state) -> np.ndarray:
        s = np.asarray(state, dtype=float)
        if self.system == "cartpole":
            return np.stack(
                [s[..., 0], np.cos(s[..., 1]), np.sin(s[..., 1]), s[..., 2], VELOCITY_OBS_SCALE * s[..., 3]],
                axis=-1,
            )
        return np.stack(
            [
                np.cos(s[..., 0]),
                np.sin(s[..., 0]),
                np.cos(s[..., 1]),
                np.sin(s[..., 1]),
                VELOCITY_OBS_SCALE * s[..., 2],
                VELOCITY_OBS_SCALE * s[..., 3],
            ],
            axis=-1,
        )

    def reward(self, next_state, action, prev_action, params=None):
        """Surrogate reward for landing in ``next_state``; actions are pre-scale."""
        params = self.params if params is None else params
        if self.system == "cartpole":
            return scoring.cartpole_reward(next_state, params)
        return scoring.double_pendulum_reward(next_state, action, prev_action, self.weights, params)


@dataclass
class Trajectory:
    """One rollout: ``N+1`` state samples and ``N`` actions/rewards."""

    times: np.ndarray
    states: np.ndarray
    actions: np.ndarray  # physical units, shape (N, action_dim)
    rewards: np.ndarray
    observations: np.ndarray  # what the policy saw, shape (N, obs_dim)
    diverged: bool = False
    params: object = field(default=None, repr=False)

    @property
    def torques(self) -> np.ndarray:
        return self.actions[:, 0]

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))


def stack_params(param_list):
    """Merge parameter objects of one type into one whose float fields are ``(B,)`` arrays."""
    first = param_list[0]
    merged = {}
    for f in fields(first):
        values = [getattr(p, f.name) for p in param_list]
        if f.name in ("u_max", "tau_max", "actuation"):
            if any(v != values[0] for v in values):
                raise ValueError(f"{f.name} must be shared across a batch")
            merged[f.name] = values[0]
        else:
            merged[f.name] = np.array(values, dtype=float)
    return type(first)(**merged)


def _policy_layers(arch: nn.MlpArchitecture, params: np.ndarray):
    """Per-row ``(W, b)`` arrays for a ``(B, P)`` parameter matrix."""
    layers = []
    offset = 0
    sizes = arch.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = params[:, offset : offset + fan_in * fan_out].reshape(-1, fan_out, fan_in)
        offset += fan_in * fan_out
        layers.append((w, params[:, offset : offset + fan_out]))
        offset += fan_out
    return layers


def _batched_forward(arch, layers, obs):
    h = obs
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        h = np.matmul(w, h[..., None])[..., 0] + b
        if k < last:
            h = np.maximum(h, 0.0) if arch.hidden_activation is nn.Activation.RELU else np.tanh(h)
    return h


def batch_rollout(
    env: Env,
    policy: Policy,
    param_matrix=None,
    *,
    mode: str = "greedy",
    noise: NoiseInjectionConfig = NoiseInjectionConfig(),
    seeds=(0,),
    phys=None,
    action_noise=0.0,
    measurement_noise=0.0,
) -> list[Trajectory]:
    """Roll out ``B = len(seeds)`` closed loops in lockstep.

    Parameters
    ----------
    param_matrix
        ``(B, P)`` policy parameters, or ``None`` to use ``policy.params`` for
        every row.
    mode
        ``"greedy"``, ``"noisy"`` (noise injection with ``noise.sigma``) or
        ``"stochastic"`` (sample the Gaussian policy).
    phys
        Optional batched physical parameters (see :func:`stack_params`).
    action_noise, measurement_noise
        Per-row standard deviations (scalars broadcast) of additive torque
        noise, as a fraction of the actuator limit, and of additive state
        measurement noise.
    """
    if mode not in ("greedy", "noisy", "stochastic"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    seeds = list(seeds)
    n_rows = len(seeds)
    if param_matrix is None:
        param_matrix = np.broadcast_to(policy.params, (n_rows, policy.params.size))
    param_matrix = np.asarray(param_matrix, dtype=float)
    if param_matrix.shape != (n_rows, policy.arch.n_params):
        raise nn.ConfigError("parameter matrix does not match batch and architecture")
    phys = env.params if phys is None else phys
    integ = env.integrator
    steps = env.n_steps
    scale = env.action_scale
    act_dim = policy.action_dim

    rngs = [np.random.default_rng(s) for s in seeds]
    starts = np.stack([env.initial_state(r) for r in rngs])
    policy_noise = np.stack([r.standard_normal((steps, act_dim)) for r in rngs])
    torque_noise = np.stack([r.standard_normal((steps, act_dim)) for r in rngs])
    meas_noise = np.stack([r.standard_normal((steps, 4)) for r in rngs])
    action_sd = np.broadcast_to(np.asarray(action_noise, dtype=float), (n_rows,))[:, None] * scale
    meas_sd = np.broadcast_to(np.asarray(measurement_noise, dtype=float), (n_rows,))[:, None]

    layers = _policy_layers(policy.arch, param_matrix)
    states = np.empty((n_rows, steps + 1, 4))
    actions = np.empty((n_rows, steps, act_dim))
    rewards = np.empty((n_rows, steps))
    observations = np.empty((n_rows, steps, env.obs_dim))
    alive = np.ones(n_rows, dtype=bool)
    state = starts
    states[:, 0] = state
    prev = np.zeros((n_rows, act_dim))

    for k in range(steps):
        obs = env.observe(state + meas_sd * meas_noise[:, k])
        observations[:, k] = obs
        mu, log_std = split_gaussian(_batched_forward(policy.arch, layers, obs), act_dim, policy.kind)
        if mode == "stochastic" and policy.kind is PolicyKind.GAUSSIAN:
            a = np.tanh(mu + np.exp(log_std) * policy_noise[:, k])
        elif mode == "noisy":
            a = inject_noise(np.tanh(mu), noise, noise.sigma * policy_noise[:, k])
        else:
            a = np.tanh(mu)
        torque = np.clip(scale * a + action_sd * torque_noise[:, k], -scale, scale)
        nxt = physics.integrate(state, torque[:, 0], phys, integ)
        bad = ~np.all(np.abs(nxt) <= integ.bound, axis=1)
        if np.any(bad):
            alive &= ~bad
            nxt = np.where(bad[:, None], state, nxt)
        rewards[:, k] = env.reward(nxt, a[:, 0], prev[:, 0], phys)
        actions[:, k] = torque
        states[:, k + 1] = nxt
        prev = a
        state = nxt

    times = np.arange(steps + 1) * env.dt
    out = []
    for i in range(n_rows):
        out.append(
            Trajectory(
                times=times,
                states=states[i],
                actions=actions[i],
                rewards=rewards[i],
                observations=observations[i],
                diverged=not alive[i],
                params=_row_params(phys, i),
            )
        )
    return out


def _row_params(phys, i):
    changes = {}
    for f in fields(phys):
        v = getattr(phys, f.name)
        if isinstance(v, np.ndarray) and v.ndim == 1:
            changes[f.name] = float(v[i])
    return replace(phys, **changes) if changes else phys


def rollout(env: Env, policy: Policy, mode: str = "greedy", noise=NoiseInjectionConfig(), seed=0, **kwargs) -> Trajectory:
    """A single rollout; identical to row 0 of :func:`batch_rollout`."""
    return batch_rollout(env, policy, mode=mode, noise=noise, seeds=[seed], **kwargs)[0]


def swing_up_time(traj: Trajectory, params: CartpoleParams | None = None):
    return scoring.swing_up_time(traj.times, traj.states, traj.params if params is None else params)


def score_trajectory(traj: Trajectory, cfg: scoring.ScoringConfig = scoring.ScoringConfig(), params=None):
    """Criteria, success flag and performance score of a double-pendulum rollout."""
    params = traj.params if params is None else params
    criteria, c_succ = scoring.extract_criteria(traj.times, traj.states, traj.torques, params, cfg)
    if traj.diverged:
        c_succ = 0
    return criteria, c_succ, scoring.performance_score(criteria, c_succ)


def make_env(system: str, *, dt=None, horizon_s=None, params=None, weights=None, **kwargs) -> Env:
    """Default task for ``system``: the reference horizon and control period."""
    if system == "cartpole":
        return Env(
            system,
            params or CartpoleParams(),
            dt=0.01 if dt is None else dt,
            horizon_s=3.0 if horizon_s is None else horizon_s,
            **kwargs,
        )
    params = params or DoublePendulumParams(actuation=physics.Actuation(system))
    weights = weights or scoring.DoublePendulumRewardWeights.for_system(system)
    return Env(
        system,
        params,
        dt=0.01 if dt is None else dt,
        horizon_s=10.0 if horizon_s is None else horizon_s,
        weights=weights,
        **kwargs,
    )
