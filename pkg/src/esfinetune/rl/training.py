from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from esfinetune import physics
from esfinetune.envs import Env, rollout, score_trajectory, swing_up_time
from esfinetune.policy import Policy
from esfinetune.rl.agents import Algorithm, SacConfig, Td3Config, TrainingError, make_agent
from esfinetune.rl.buffer import ReplayBuffer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    sac: SacConfig = field(default_factory=SacConfig)
    td3: Td3Config = field(default_factory=Td3Config)
    eval_every: int = 1
    eval_dt: float | None = None  # control period of evaluation rollouts
    keep: str = "final"  # "final" or "best": which snapshot train() returns
    # chance that a training episode starts from a random pose instead of the
    # hanging rest pose, with every angle drawn uniformly; evaluation always
    # starts at rest
    random_start_prob: float = 0.0

    def __post_init__(self):
        if self.keep not in ("final", "best"):
            raise ValueError("keep must be 'final' or 'best'")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")
        if not 0.0 <= self.random_start_prob <= 1.0:
            raise ValueError("random_start_prob must lie in [0, 1]")


@dataclass
class TrainResult:
    policy: Policy
    log: list
    final_policy: Policy
    best_episode: int | None = None


def evaluate(env: Env, policy: Policy, eval_dt=None, scoring_cfg=None) -> dict:
    """Greedy evaluation metric: swing-up time (cart-pole) or performance score."""
    eval_env = env if eval_dt is None else env.with_dt(eval_dt)
    traj = rollout(eval_env, policy, mode="greedy")
    if env.system == "cartpole":
        t_s = None if traj.diverged else swing_up_time(traj)
        # lower is better; a failed swing-up ranks below every success
        key = -(t_s if t_s is not None else eval_env.horizon_s + 1.0)
        return {"t_s": t_s, "eval_key": key}
    kwargs = {} if scoring_cfg is None else {"cfg": scoring_cfg}
    _, c_succ, score = score_trajectory(traj, **kwargs)
    return {"score": score, "c_succ": c_succ, "eval_key": score + traj.total_reward * 1e-9}


def train(
    env: Env,
    algorithm=Algorithm.SAC,
    episodes: int = 300,
    seed: int = 0,
    cfg: TrainConfig = TrainConfig(),
    log_path=None,
    scoring_cfg=None,
) -> TrainResult:
    """Train an actor-critic agent on the environment's dense reward.

    Episodes run for the full horizon; only a diverged step is stored as
    terminal, so the horizon cut-off is bootstrapped through. Every
    ``cfg.eval_every`` episodes the greedy policy is evaluated on the
    trajectory-level metric and logged.
    """
    algorithm = Algorithm(algorithm)
    rng = np.random.default_rng(seed)
    sac = cfg.sac
    agent = make_agent(algorithm, env.obs_dim, env.action_dim, env.action_scale, sac, cfg.td3, rng)
    buffer = ReplayBuffer(sac.buffer_capacity, env.obs_dim, env.action_dim)
    integ = env.integrator
    scale = env.action_scale
    log = []
    best_key, best_params, best_episode = -np.inf, agent.actor.params.copy(), None
    total_steps = 0
    sink = open(log_path, "w") if log_path is not None else None
    try:
        for episode in range(episodes):
            state = env.initial_state(rng)
            if cfg.random_start_prob and rng.random() < cfg.random_start_prob:
                if env.system == "cartpole":
                    state[1] = rng.uniform(-np.pi, np.pi)
                else:
                    state[:2] = rng.uniform(-np.pi, np.pi, 2)
            prev = np.zeros(env.action_dim)
            ep_return, diag, diverged = 0.0, {}, False
            for _ in range(env.n_steps):
                obs = env.observe(state)
                if total_steps < sac.warmup_steps:
                    a = rng.uniform(-1.0, 1.0, env.action_dim)
                else:
                    a = agent.explore(obs, rng)
                nxt = physics.integrate(state, scale * a[0], env.params, integ)
                diverged = not np.all(np.abs(nxt) <= integ.bound)
                if diverged:
                    nxt = state
                r = float(env.reward(nxt, a[0], prev[0]))
                buffer.add(obs, a, r, env.observe(nxt), diverged)
                ep_return += r
                total_steps += 1
                if total_steps >= sac.warmup_steps and len(buffer) >= sac.batch_size and total_steps % sac.train_freq == 0:
                    diag = agent.update(buffer, rng)
                state, prev = nxt, a
                if diverged:
                    break
            record = {"episode": episode, "return": ep_return, "steps": total_steps, "diverged": diverged}
            record.update(diag)
            if cfg.eval_every and (episode + 1) % cfg.eval_every == 0:
                metrics = evaluate(env, agent.actor, cfg.eval_dt, scoring_cfg)
                record.update(metrics)
                if metrics["eval_key"] > best_key:
                    best_key, best_params, best_episode = metrics["eval_key"], agent.actor.params.copy(), episode
            log.append(record)
            if sink:
                sink.write(json.dumps(record, sort_keys=True) + "\n")
                sink.flush()
            logger.debug("episode %d return %.3f", episode, ep_return)
    except TrainingError:
        if sink:
            sink.write(json.dumps({"episode": len(log), "error": "non-finite loss"}) + "\n")
        raise
    finally:
        if sink:
            sink.close()
    final = agent.actor.with_params(agent.actor.params)
    if cfg.keep == "best" and best_episode is not None:
        return TrainResult(agent.actor.with_params(best_params), log, final, best_episode)
    return TrainResult(final, log, final, None)
