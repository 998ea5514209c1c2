"""Separable natural evolution strategy (SNES) and policy fine-tuning.

The search distribution is a diagonal Gaussian ``N(theta, diag(sigma^2))``.
Each generation draws mirrored noise pairs, ranks the candidates, and moves
``theta`` along the utility-weighted noise while adapting every ``sigma_i``
multiplicatively, which keeps the step sizes positive.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from esfinetune import envs, physics, scoring
from esfinetune.policy import NoiseInjectionConfig, Policy

FAILURE_FITNESS = -1e9
WORKERS_ENV = "ESFINETUNE_WORKERS"


def default_sigma_rate(dim: int) -> float:
    return (3.0 + math.log(dim)) / (5.0 * math.sqrt(dim))


@dataclass
class SnesState:
    mean: np.ndarray
    sigma: np.ndarray
    popsize: int = 40
    eta_mu: float = 1.0
    eta_sigma: float | None = None
    generation: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        self.mean = np.array(self.mean, dtype=float)
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), self.mean.shape).copy()
        if self.eta_sigma is None:
            self.eta_sigma = default_sigma_rate(self.mean.size)
        if self.popsize < 4 or self.popsize % 2:
            raise ValueError("popsize must be even and >= 4")
        if not (np.all(self.sigma > 0) and np.all(np.isfinite(self.sigma))):
            raise ValueError("sigma must be strictly positive and finite")

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass
class Candidate:
    index: int
    noise: np.ndarray
    params: np.ndarray
    fitness: float | None = None


def _half_noise(state: SnesState) -> np.ndarray:
    rng = np.random.default_rng([state.rng_seed, state.generation])
    return rng.standard_normal((state.popsize // 2, state.dim))


def population_noise(state: SnesState) -> np.ndarray:
    """``(popsize, dim)`` standard-normal noise with ``s[2k+1] = -s[2k]``."""
    half = _half_noise(state)
    noise = np.empty((state.popsize, state.dim))
    noise[0::2] = half
    noise[1::2] = -half
    return noise


def sample_population(state: SnesState) -> list[Candidate]:
    noise = population_noise(state)
    params = state.mean + state.sigma * noise
    return [Candidate(i, noise[i], params[i]) for i in range(state.popsize)]


def utilities(popsize: int) -> np.ndarray:
    """Rank-based utilities, best rank first; they sum to zero."""
    if popsize < 2:
        raise ValueError("popsize must be >= 2")
    ranks = np.arange(1, popsize + 1)
    raw = np.maximum(0.0, math.log(popsize / 2 + 1) - np.log(ranks))
    return raw / raw.sum() - 1.0 / popsize


def ranked_utilities(fitnesses) -> np.ndarray:
    """Utility of each candidate (in candidate order) from its fitness rank.

    Non-finite fitnesses rank last. Tied candidates share the mean utility of
    the ranks they occupy, so the result only depends on the ordering.
    """
    f = np.asarray(fitnesses, dtype=float)
    f = np.where(np.isfinite(f), f, -np.inf)
    n = f.size
    order = np.lexsort((np.arange(n), -f))  # descending fitness, stable by index
    base = utilities(n)
    u = np.empty(n)
    u[order] = base
    sorted_f = f[order]
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and sorted_f[stop] == sorted_f[start]:
            stop += 1
        if stop - start > 1:
            u[order[start:stop]] = base[start:stop].mean()
        start = stop
    return u


def snes_step(state: SnesState, fitnesses) -> SnesState:
    """Natural-gradient update from one generation's fitnesses (higher is better)."""
    f = np.asarray(fitnesses, dtype=float)
    if f.shape != (state.popsize,):
        raise ValueError("need exactly one fitness per candidate")
    u = ranked_utilities(f)
    half = _half_noise(state)
    # mirrored pairs: sum_k u_k s_k = sum_j (u_2j - u_2j+1) s_2j
    grad_mu = (u[0::2] - u[1::2]) @ half
    grad_sigma = (u[0::2] + u[1::2]) @ (half * half - 1.0)
    mean = state.mean + state.eta_mu * state.sigma * grad_mu
    sigma = state.sigma * np.exp(0.5 * state.eta_sigma * grad_sigma)
    return replace(state, mean=mean, sigma=sigma, generation=state.generation + 1)


def minimize_sphere(dim=20, popsize=40, sigma0=0.5, generations=300, seed=0):
    """Best-so-far fitness trace of SNES on ``f(x) = -|x|^2`` from the all-ones point."""
    state = SnesState(np.ones(dim), sigma0, popsize=popsize, rng_seed=seed)
    best = -np.inf
    trace = []
    for _ in range(generations):
        cands = np.stack([c.params for c in sample_population(state)])
        f = -np.sum(cands * cands, axis=1)
        best = max(best, float(f.max()))
        trace.append(best)
        state = snes_step(state, f)
    return np.array(trace)


# ------------------------------------------------------------ fine-tuning


@dataclass(frozen=True)
class FitnessSpec:
    objective: str = "swingup_time"  # or "performance_score"
    episodes_per_eval: int = 1
    eval_seed_policy: str = "fixed"  # or "per_generation"
    scoring: scoring.ScoringConfig = field(default_factory=scoring.ScoringConfig)

    def __post_init__(self):
        if self.objective not in ("swingup_time", "performance_score"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.episodes_per_eval < 1:
            raise ValueError("episodes_per_eval must be >= 1")
        if self.eval_seed_policy not in ("fixed", "per_generation"):
            raise ValueError("eval_seed_policy must be 'fixed' or 'per_generation'")


@dataclass(frozen=True)
class SnesConfig:
    popsize: int = 40
    sigma_init: float = 0.02
    eta_mu: float = 1.0
    eta_sigma: float | None = None


def trajectory_fitness(traj: envs.Trajectory, spec: FitnessSpec, horizon_s: float) -> float:
    """Scalar fitness of one rollout, higher is better.

    Swing-up time: ``-t_s`` with a small mean-distance tie-break; failures
    score ``-(T + final tip distance)``, below every success. Performance
    score: ``S`` on success; failures map into ``[-3, -1]`` by their mean
    end-effector height over the success window.
    """
    if traj.diverged:
        return FAILURE_FITNESS
    if spec.objective == "swingup_time":
        dist = scoring.tip_distance(traj.states, traj.params)
        t_s = envs.swing_up_time(traj)
        if t_s is None:
            return -(horizon_s + float(dist[-1]))
        return -t_s - 1e-3 * float(dist.mean())
    criteria, c_succ, score = envs.score_trajectory(traj, spec.scoring)
    if c_succ:
        return score
    window = traj.times >= traj.times[-1] - spec.scoring.success_window_s
    height = physics.end_effector_height(traj.states[window], traj.params)
    return -2.0 + float(np.mean(height)) / traj.params.y_max


def trajectory_metric(traj: envs.Trajectory, spec: FitnessSpec):
    """The raw objective: swing-up time (``None`` on failure) or performance score."""
    if spec.objective == "swingup_time":
        return None if traj.diverged else envs.swing_up_time(traj)
    return envs.score_trajectory(traj, spec.scoring)[2]


def _eval_rows(args):
    env, policy, params, mode, noise, seeds = args
    return envs.batch_rollout(env, policy, params, mode=mode, noise=noise, seeds=seeds)


def evaluate_population(env, policy, param_matrix, spec: FitnessSpec, noise, seeds, workers=None):
    """Fitness and raw metric of each row of ``param_matrix``, averaged over ``seeds``.

    The metric of a row is ``None`` if any of its episodes failed. Rows are split into contiguous chunks across ``workers`` processes and
    merged back by index.
    """
    param_matrix = np.atleast_2d(param_matrix)
    n, n_ep = param_matrix.shape[0], len(seeds)
    mode = "noisy" if noise.sigma > 0 else "greedy"
    rows = np.repeat(param_matrix, n_ep, axis=0)
    row_seeds = list(seeds) * n
    workers = workers or int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1 and rows.shape[0] > 1:
        chunks = np.array_split(np.arange(rows.shape[0]), min(workers, rows.shape[0]))
        tasks = [(env, policy, rows[c], mode, noise, [row_seeds[i] for i in c]) for c in chunks]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajs = [t for part in pool.map(_eval_rows, tasks) for t in part]
    else:
        trajs = _eval_rows((env, policy, rows, mode, noise, row_seeds))
    fit = np.array([trajectory_fitness(t, spec, env.horizon_s) for t in trajs])
    raw = [trajectory_metric(t, spec) for t in trajs]
    metrics = []
    for i in range(n):
        chunk = raw[i * n_ep : (i + 1) * n_ep]
        metrics.append(None if any(m is None for m in chunk) else float(np.mean(chunk)))
    return fit.reshape(n, n_ep).mean(axis=1), metrics


@dataclass
class FinetuneResult:
    policy: Policy
    log: list
    best_fitness: float
    initial_fitness: float
    state: SnesState
    initial_metric: float | None = None
    best_metric: float | None = None


def _eval_seeds(spec: FitnessSpec, seed: int, generation: int) -> list[int]:
    base = seed if spec.eval_seed_policy == "fixed" else seed * 1_000_003 + generation + 1
    return [base * 131 + e for e in range(spec.episodes_per_eval)]


def finetune(
    policy: Policy,
    env: envs.Env,
    fitness: FitnessSpec = FitnessSpec(),
    snes: SnesConfig = SnesConfig(),
    generations: int = 100,
    seed: int = 0,
    noise: NoiseInjectionConfig = NoiseInjectionConfig(),
    log_path=None,
    workers=None,
) -> FinetuneResult:
    """Evolve the policy's flat parameters on a trajectory-level fitness.

    Candidates are evaluated with the noise-injected greedy policy. The
    distribution mean is evaluated every generation alongside the population,
    and the best parameter vector seen (mean or candidate, the starting
    policy included) is returned.
    """
    state = SnesState(
        policy.params,
        snes.sigma_init,
        popsize=snes.popsize,
        eta_mu=snes.eta_mu,
        eta_sigma=snes.eta_sigma,
        rng_seed=seed,
    )
    fit0, metric0 = evaluate_population(env, policy, policy.params, fitness, noise, _eval_seeds(fitness, seed, -1), workers)
    initial = float(fit0[0])
    best_fit, best_params, best_metric = initial, policy.params.copy(), metric0[0]
    log = []
    sink = open(log_path, "w") if log_path is not None else None
    try:
        for _ in range(generations):
            cands = sample_population(state)
            matrix = np.stack([state.mean] + [c.params for c in cands])
            fit, metrics = evaluate_population(
                env, policy, matrix, fitness, noise, _eval_seeds(fitness, seed, state.generation), workers
            )
            center_fit, cand_fit = fit[0], fit[1:]
            gen_best = int(np.argmax(cand_fit))
            if cand_fit[gen_best] > best_fit:
                best_fit, best_params = float(cand_fit[gen_best]), cands[gen_best].params.copy()
                best_metric = metrics[gen_best + 1]
            if center_fit > best_fit:
                best_fit, best_params, best_metric = float(center_fit), state.mean.copy(), metrics[0]
            record = {
                "generation": state.generation,
                "best_fitness": float(cand_fit[gen_best]),
                "mean_fitness": float(np.mean(cand_fit)),
                "center_fitness": float(center_fit),
                "best_so_far": best_fit,
                "best_metric": best_metric,
                "center_metric": metrics[0],
                "sigma_mean": float(state.sigma.mean()),
                "sigma_min": float(state.sigma.min()),
                "sigma_max": float(state.sigma.max()),
            }
            log.append(record)
            if sink:
                sink.write(json.dumps(record, sort_keys=True) + "\n")
                sink.flush()
            state = snes_step(state, cand_fit)
    finally:
        if sink:
            sink.close()
    return FinetuneResult(policy.with_params(best_params), log, best_fit, initial, state, metric0[0], best_metric)
