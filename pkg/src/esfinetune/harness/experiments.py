"""Orchestration of the two-phase pipeline: train, measure policy variance,
fine-tune, score. The CLI subcommands are thin wrappers over these.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path

import numpy as np

from esfinetune import evo, rl, scoring
from esfinetune.envs import rollout, score_trajectory, swing_up_time
from esfinetune.harness import checkpoint
from esfinetune.harness.config import ExperimentConfig
from esfinetune.policy import NoiseInjectionConfig, PolicyKind, policy_variance

logger = logging.getLogger(__name__)


class CompatibilityError(ValueError):
    """A checkpoint does not fit the configured system or architecture."""


def run_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.output_dir) / f"seed{seed}"


def measured_sigma(cfg: ExperimentConfig, policy) -> float:
    """Noise-injection standard deviation for a freshly trained policy.

    Gaussian actors use the mean policy variance along a greedy rollout;
    deterministic actors fall back to the exploration noise level.
    """
    if policy.kind is PolicyKind.DETERMINISTIC:
        return float(cfg.train.td3.exploration_noise_std)
    traj = rollout(cfg.env, policy, mode="greedy")
    return float(np.sqrt(policy_variance(policy, traj.observations)))


def train(cfg: ExperimentConfig, seed: int, out_dir=None, episodes=None) -> dict:
    """Phase one: actor-critic training on the dense reward.

    Writes ``policy_rl.evpc``, ``train_log.jsonl`` and ``noise.json``.
    """
    out = Path(out_dir) if out_dir is not None else run_dir(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    n_episodes = cfg.episodes if episodes is None else episodes
    result = rl.train(
        cfg.env,
        cfg.algorithm,
        episodes=n_episodes,
        seed=seed,
        cfg=cfg.train,
        log_path=out / "train_log.jsonl",
        scoring_cfg=cfg.scoring,
    )
    sigma = measured_sigma(cfg, result.policy)
    noise = {"sigma": sigma, "variance": sigma * sigma, "source": "policy_variance" if result.policy.kind is PolicyKind.GAUSSIAN else "exploration_noise"}
    (out / "noise.json").write_text(json.dumps(noise, indent=2, sort_keys=True) + "\n")
    meta = {
        "algorithm": cfg.algorithm.value,
        "episodes": n_episodes,
        "noise_sigma": sigma,
        "best_episode": result.best_episode,
    }
    ckpt = checkpoint.Checkpoint(result.policy, cfg.system, seed, "rl", meta)
    path = checkpoint.save(ckpt, out / "policy_rl.evpc")
    return {"checkpoint": path, "log": out / "train_log.jsonl", "noise": noise, "result": result}


def check_compatible(ckpt: checkpoint.Checkpoint, cfg: ExperimentConfig) -> None:
    if ckpt.system != cfg.system:
        raise CompatibilityError(f"checkpoint is for {ckpt.system!r}, config for {cfg.system!r}")
    if ckpt.policy.arch.input_dim != cfg.env.obs_dim:
        raise CompatibilityError("checkpoint input dimension does not match the system observation")
    if not np.isclose(ckpt.policy.action_scale, cfg.env.action_scale):
        raise CompatibilityError("checkpoint action scale does not match the configured actuator limit")
    expected = cfg.train.sac.actor_hidden
    if ckpt.policy.arch.hidden_sizes != tuple(expected):
        raise CompatibilityError(f"checkpoint hidden sizes {ckpt.policy.arch.hidden_sizes} differ from config {expected}")


def noise_for(cfg: ExperimentConfig, ckpt: checkpoint.Checkpoint) -> NoiseInjectionConfig:
    sigma = cfg.noise_sigma if cfg.noise_sigma is not None else ckpt.metadata.get("noise_sigma", 0.0)
    return NoiseInjectionConfig(sigma=float(sigma))


def finetune(cfg: ExperimentConfig, ckpt_path, seed: int, out_dir=None, generations=None) -> dict:
    """Phase two: SNES on the trajectory-level objective, starting from a checkpoint."""
    ckpt = checkpoint.load(ckpt_path)
    check_compatible(ckpt, cfg)
    out = Path(out_dir) if out_dir is not None else Path(ckpt_path).parent
    out.mkdir(parents=True, exist_ok=True)
    noise = noise_for(cfg, ckpt)
    n_gen = cfg.generations if generations is None else generations
    result = evo.finetune(
        ckpt.policy,
        cfg.eval_env,
        fitness=cfg.fitness,
        snes=cfg.snes,
        generations=n_gen,
        seed=seed,
        noise=noise,
        log_path=out / "finetune_log.jsonl",
    )
    meta = dict(ckpt.metadata)
    meta.update(
        {
            "parent_phase": ckpt.phase,
            "generations": n_gen,
            "objective": cfg.fitness.objective,
            "initial_fitness": result.initial_fitness,
            "best_fitness": result.best_fitness,
            "noise_sigma": noise.sigma,
        }
    )
    evolved = checkpoint.Checkpoint(result.policy, cfg.system, seed, "evolved", meta)
    path = checkpoint.save(evolved, out / "policy_evolved.evpc")
    return {"checkpoint": path, "log": out / "finetune_log.jsonl", "result": result}


def summarize(cfg: ExperimentConfig, traj) -> dict:
    if cfg.system == "cartpole":
        t_s = None if traj.diverged else swing_up_time(traj)
        return {"t_s": t_s, "return": traj.total_reward, "diverged": traj.diverged}
    criteria, c_succ, score = score_trajectory(traj, cfg.scoring)
    return {
        "c_succ": c_succ,
        "performance_score": score,
        "criteria": criteria.as_dict(),
        "return": traj.total_reward,
        "diverged": traj.diverged,
    }


def trajectory_csv(traj, diverged_note=True) -> str:
    """CSV text with header ``t,q...,qdot...,action,reward``; the last row holds the final state only."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "q1", "q2", "qdot1", "qdot2", "action", "reward"])
    n = traj.actions.shape[0]
    for k in range(n + 1):
        row = [repr(float(traj.times[k]))] + [repr(float(v)) for v in traj.states[k]]
        if k < n:
            row += [repr(float(traj.actions[k, 0])), repr(float(traj.rewards[k]))]
        else:
            row += ["", ""]
        writer.writerow(row)
    if traj.diverged and diverged_note:
        buf.write("# diverged: state left the integration bound\n")
    return buf.getvalue()


def rollout_checkpoint(cfg: ExperimentConfig, ckpt_path, mode="greedy", seed=0, out_path=None, evaluation=True):
    ckpt = checkpoint.load(ckpt_path)
    check_compatible(ckpt, cfg)
    env = cfg.eval_env if evaluation else cfg.env
    traj = rollout(env, ckpt.policy, mode=mode, noise=noise_for(cfg, ckpt), seed=seed)
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(trajectory_csv(traj))
    return traj, summarize(cfg, traj)


def score_policy(cfg: ExperimentConfig, policy, seed: int) -> scoring.ScoreReport:
    """Performance on the unperturbed system plus the robustness battery."""
    env = cfg.eval_env
    traj = rollout(env, policy, mode="greedy", seed=seed)
    criteria, c_succ, perf = score_trajectory(traj, cfg.scoring)
    robust, _ = scoring.robustness_score(policy, env, cfg.robustness, cfg.scoring, seed=seed)
    return scoring.ScoreReport(c_succ, criteria, perf, robust)


def score_checkpoint(cfg: ExperimentConfig, ckpt_path, seeds) -> dict:
    """Score report for each seed plus mean and standard deviation."""
    ckpt = checkpoint.load(ckpt_path)
    check_compatible(ckpt, cfg)
    if cfg.system == "cartpole":
        raise CompatibilityError("the performance score is defined for the double pendulum only")
    per_seed = []
    for seed in seeds:
        report = score_policy(cfg, ckpt.policy, seed)
        per_seed.append({"seed": int(seed), **report.to_dict()})
    agg = {}
    for key in ("performance_score", "robustness_score", "final_score"):
        vals = np.array([r[key] for r in per_seed])
        agg[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return {"checkpoint": str(ckpt_path), "phase": ckpt.phase, "system": ckpt.system, "per_seed": per_seed, "aggregate": agg}


def format_score_table(report: dict) -> str:
    lines = [f"{'seed':>6} {'c_succ':>6} {'perf':>8} {'robust':>8} {'final':>8}"]
    for r in report["per_seed"]:
        lines.append(f"{r['seed']:>6} {r['c_succ']:>6} {r['performance_score']:>8.4f} {r['robustness_score']:>8.4f} {r['final_score']:>8.4f}")
    agg = report["aggregate"]
    lines.append(
        "  mean        "
        + " ".join(f"{agg[k]['mean']:>8.4f}" for k in ("performance_score", "robustness_score", "final_score"))
    )
    lines.append(
        "  std         "
        + " ".join(f"{agg[k]['std']:>8.4f}" for k in ("performance_score", "robustness_score", "final_score"))
    )
    return "\n".join(lines)


def greedy_swing_up_time(cfg: ExperimentConfig, policy):
    traj = rollout(cfg.eval_env, policy, mode="greedy")
    return None if traj.diverged else swing_up_time(traj)

