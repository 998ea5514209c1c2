"""Dense training rewards and trajectory-level scores.

Surrogate rewards are per-step and feed the actor-critic learners. The
swing-up time and the performance score are trajectory functionals and are
only ever optimised by the evolution strategy.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from esfinetune import physics
from esfinetune.physics import CartpoleParams, DoublePendulumParams

N_CRITERIA = 5
CRITERIA_NAMES = ("swingup_time_s", "energy_J", "max_torque_Nm", "integrated_torque_Nms", "max_velocity_rad_s")
UPRIGHT_RADIUS = 0.1


class ScoreConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DoublePendulumRewardWeights:
    alpha: float = 2.0
    beta: float = 1.0
    rho1: float = 0.1
    rho2: float = 0.02
    phi1: float = 0.15
    phi2: float = 0.15
    eta: float = 0.02
    y_th: float = 0.35

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ScoreConfigError(f"reward weight {name} must be >= 0")

    @classmethod
    def for_system(cls, system: str, **overrides) -> DoublePendulumRewardWeights:
        y_th = 0.375 if system == "acrobot" else 0.35
        return cls(**{"y_th": y_th, **overrides})


@dataclass(frozen=True)
class ScoringConfig:
    """Scaling constants and thresholds for the five-criterion score.

    ``k`` is ordered as :data:`CRITERIA_NAMES`. A ``None`` entry for the
    max-torque constant means "use the system's torque limit".
    """

    k: tuple = (10.0, 100.0, None, 20.0, 50.0)
    success_cone_rad: float = 0.2
    success_window_s: float = 1.0

    def constants(self, params: DoublePendulumParams) -> np.ndarray:
        k = np.array([params.tau_max if v is None else v for v in self.k], dtype=float)
        if k.shape != (N_CRITERIA,) or np.any(k <= 0) or not np.all(np.isfinite(k)):
            raise ScoreConfigError("scaling constants must be 5 positive finite numbers")
        return k

    def success_height(self, params: DoublePendulumParams) -> float:
        return float(params.y_max * math.cos(self.success_cone_rad))


@dataclass
class ScoreCriteria:
    values: np.ndarray
    constants: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.constants = np.asarray(self.constants, dtype=float)
        if self.values.shape != self.constants.shape:
            raise ScoreConfigError("criteria and constants differ in length")
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.constants))):
            raise ScoreConfigError("criteria must be finite")

    def as_dict(self) -> dict:
        return {name: float(v) for name, v in zip(CRITERIA_NAMES, self.values)}


@dataclass
class ScoreReport:
    c_succ: int
    criteria: ScoreCriteria
    performance: float
    robustness: float = 1.0
    final: float = field(init=False)

    def __post_init__(self):
        self.final = final_score(self.performance, self.robustness)

    def to_dict(self) -> dict:
        return {
            "c_succ": int(self.c_succ),
            "criteria": self.criteria.as_dict(),
            "constants": {name: float(v) for name, v in zip(CRITERIA_NAMES, self.criteria.constants)},
            "performance_score": self.performance,
            "robustness_score": self.robustness,
            "final_score": self.final,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------- cart-pole


def tip_distance(state, params: CartpoleParams):
    x, y = physics.pole_tip(state, params)
    return np.hypot(x, y - params.pole_length)


def cartpole_reward(state, params: CartpoleParams):
    """Negative distance of the pole tip from the upright tip position."""
    return -tip_distance(state, params)


def swing_up_time(times, states, params: CartpoleParams, radius: float = UPRIGHT_RADIUS):
    """Earliest sample time after which the tip stays within ``radius`` of upright.

    Returns ``None`` when the last sample is outside the radius.
    """
    states = np.asarray(states, dtype=float)
    if states.shape[0] == 0:
        raise physics.DomainError("empty trajectory")
    inside = tip_distance(states, params) < radius
    return _settle_time(np.asarray(times, dtype=float), inside)


def _settle_time(times, inside):
    if not inside[-1]:
        return None
    outside = np.flatnonzero(~inside)
    first = 0 if outside.size == 0 else outside[-1] + 1
    return float(times[first])


# ---------------------------------------------------------- double pendulum


def double_pendulum_reward(state, action, prev_action, weights: DoublePendulumRewardWeights, params: DoublePendulumParams):
    """Two-regime dense reward on a normalised action ``a`` in ``[-1, 1]``.

    Above the height threshold the reward favours potential energy and
    aligned links while penalising kinetic energy; below it it favours
    potential energy while penalising joint speed. Both regimes penalise
    action magnitude and ``|a - a_prev|``.
    """
    w = weights
    state = np.asarray(state, dtype=float)
    kinetic, potential = physics.mechanical_energy(state, params)
    y = physics.end_effector_height(state, params)
    da = np.abs(action - prev_action)
    a2 = action * action
    high = potential + w.alpha * (1.0 + np.cos(state[..., 1])) ** 2 - w.beta * kinetic - w.rho1 * a2 - w.phi1 * da
    qdot_sq = state[..., 2] ** 2 + state[..., 3] ** 2
    low = potential - w.rho2 * a2 - w.phi2 * da - w.eta * qdot_sq
    return np.where(y > w.y_th, high, low)


def performance_score(criteria: ScoreCriteria, c_succ) -> float:
    """``c_succ * (1 - mean_i tanh(pi * x_i / k_i))``."""
    k = criteria.constants
    if np.any(k <= 0):
        raise ScoreConfigError("scaling constants must be positive")
    if np.any(criteria.values < 0):
        raise ScoreConfigError("criteria must be non-negative")
    penalty = np.mean(np.tanh(math.pi * criteria.values / k))
    return float(int(c_succ) * (1.0 - penalty))


def extract_criteria(times, states, torques, params: DoublePendulumParams, cfg: ScoringConfig = ScoringConfig()):
    """Five score criteria and the success flag from a sampled trajectory.

    ``torques[k]`` is the physical torque held over ``[times[k], times[k+1])``.
    Returns ``(ScoreCriteria, c_succ)``.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    torques = np.asarray(torques, dtype=float).reshape(-1)
    dt = np.diff(times)
    height = physics.end_effector_height(states, params)
    threshold = cfg.success_height(params)
    above = height > threshold

    t_up = _settle_time(times, above)
    horizon = times[-1] - times[0]
    swingup = horizon if t_up is None else t_up - times[0]

    joint = 2 if params.actuation is physics.Actuation.PENDUBOT else 3
    n = torques.shape[0]
    energy = float(np.sum(np.abs(torques * states[:n, joint]) * dt[:n]))
    max_torque = float(np.max(np.abs(torques))) if n else 0.0
    integrated = float(np.sum(np.abs(torques) * dt[:n]))
    max_vel = float(np.max(np.abs(states[:, 2:])))

    window = times >= times[-1] - cfg.success_window_s + 1e-9
    long_enough = horizon >= cfg.success_window_s - 1e-9
    c_succ = int(long_enough and bool(np.all(above[window])))
    values = [swingup, energy, max_torque, integrated, max_vel]
    return ScoreCriteria(values, cfg.constants(params)), c_succ


def final_score(performance: float, robustness: float) -> float:
    return (performance + robustness) / 2.0


# -------------------------------------------------------------- robustness

DEFAULT_PERTURBED = ("m1", "m2", "l1", "l2", "b1", "b2")


@dataclass(frozen=True)
class RobustnessConfig:
    """Battery of modified simulations; each variation is one episode per seed.

    ``param_deltas`` maps parameter names to relative changes. Action noise
    levels are fractions of the actuator limit; measurement noise levels are
    standard deviations added to every observed state component.
    """

    param_deltas: tuple = tuple((name, (-0.2, -0.1, 0.1, 0.2)) for name in DEFAULT_PERTURBED)
    action_noise: tuple = (0.05, 0.1)
    measurement_noise: tuple = (0.01, 0.05)
    episodes_per_variation: int = 1

    def __post_init__(self):
        deltas = self.param_deltas.items() if isinstance(self.param_deltas, dict) else self.param_deltas
        deltas = tuple((str(name), tuple(float(d) for d in ds)) for name, ds in deltas)
        object.__setattr__(self, "param_deltas", deltas)
        object.__setattr__(self, "action_noise", tuple(float(v) for v in self.action_noise))
        object.__setattr__(self, "measurement_noise", tuple(float(v) for v in self.measurement_noise))
        for _, ds in deltas:
            if any(not -0.9 < d < 10.0 for d in ds):
                raise ScoreConfigError("relative deltas must lie in (-0.9, 10)")
        if any(v < 0 for v in self.action_noise + self.measurement_noise):
            raise ScoreConfigError("noise levels must be >= 0")
        if self.episodes_per_variation < 1:
            raise ScoreConfigError("episodes_per_variation must be >= 1")

    @classmethod
    def empty(cls) -> RobustnessConfig:
        return cls(param_deltas=(), action_noise=(), measurement_noise=())

    def variations(self) -> list[dict]:
        out = [{"kind": "param", "name": n, "delta": d} for n, ds in self.param_deltas for d in ds]
        out += [{"kind": "action_noise", "level": v} for v in self.action_noise]
        out += [{"kind": "measurement_noise", "level": v} for v in self.measurement_noise]
        return out


def robustness_score(policy, env, cfg: RobustnessConfig = RobustnessConfig(), scoring_cfg: ScoringConfig = ScoringConfig(), seed: int = 0):
    """Fraction of battery variations in which the greedy policy still succeeds.

    Success is judged with the unperturbed system's thresholds. Returns
    ``(score, per-variation records)``; an empty battery scores 1.
    """
    from esfinetune.envs import batch_rollout, stack_params

    variations = cfg.variations()
    if not variations:
        return 1.0, []
    n_ep = cfg.episodes_per_variation
    phys, act_sd, meas_sd, seeds = [], [], [], []
    for i, v in enumerate(variations):
        p = physics.scale_params(env.params, **{v["name"]: v["delta"]}) if v["kind"] == "param" else env.params
        for e in range(n_ep):
            phys.append(p)
            act_sd.append(v["level"] if v["kind"] == "action_noise" else 0.0)
            meas_sd.append(v["level"] if v["kind"] == "measurement_noise" else 0.0)
            seeds.append(seed * 100_003 + i * 1_009 + e)
    trajs = batch_rollout(
        env,
        policy,
        seeds=seeds,
        phys=stack_params(phys),
        action_noise=np.array(act_sd),
        measurement_noise=np.array(meas_sd),
    )
    records = []
    for i, v in enumerate(variations):
        succ = []
        for traj in trajs[i * n_ep : (i + 1) * n_ep]:
            _, c = extract_criteria(traj.times, traj.states, traj.torques, env.params, scoring_cfg)
            succ.append(int(c and not traj.diverged))
        records.append({**v, "success_rate": float(np.mean(succ))})
    return float(np.mean([r["success_rate"] for r in records])), records
