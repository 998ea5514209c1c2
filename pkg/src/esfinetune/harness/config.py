"""Experiment configuration files.

Configs are YAML documents whose physical keys carry their unit in the name
(``u_max_N``, ``dt_s``...). Unknown keys are rejected so that a typo cannot
silently fall back to a default.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from esfinetune import physics, scoring
from esfinetune.envs import SYSTEMS, Env
from esfinetune.evo import FitnessSpec, SnesConfig
from esfinetune.rl import Algorithm, SacConfig, Td3Config, TrainConfig


class ConfigError(ValueError):
    pass


CARTPOLE_KEYS = {
    "cart_mass_kg": "cart_mass",
    "pole_mass_kg": "pole_mass",
    "pole_length_m": "pole_length",
    "gravity_m_s2": "gravity",
    "cart_friction_Ns_m": "cart_friction",
    "u_max_N": "u_max",
}
PENDULUM_KEYS = {
    "m1_kg": "m1",
    "m2_kg": "m2",
    "l1_m": "l1",
    "l2_m": "l2",
    "r1_m": "r1",
    "r2_m": "r2",
    "inertia1_kgm2": "inertia1",
    "inertia2_kgm2": "inertia2",
    "b1_Nms": "b1",
    "b2_Nms": "b2",
    "gravity_m_s2": "gravity",
    "tau_max_Nm": "tau_max",
}
TASK_KEYS = {"train_dt_s", "eval_dt_s", "horizon_s", "internal_dt_s"}
REWARD_KEYS = {"alpha": "alpha", "beta": "beta", "rho1": "rho1", "rho2": "rho2", "phi1": "phi1", "phi2": "phi2", "eta": "eta", "y_th_m": "y_th"}
RL_KEYS = {
    "algorithm", "episodes", "gamma", "lr", "tau_polyak", "batch_size", "warmup_steps", "train_freq",
    "alpha_init", "auto_alpha", "target_entropy", "buffer_capacity", "actor_hidden", "critic_hidden",
    "eval_every", "keep", "random_start_prob", "td3",
}
TD3_KEYS = {"policy_delay", "target_noise_std", "target_noise_clip", "exploration_noise_std"}
SNES_KEYS = {
    "popsize", "sigma_init", "generations", "eta_mu", "eta_sigma", "objective", "episodes_per_eval",
    "eval_seed_policy", "noise_sigma",
}
SCORING_KEYS = {
    "k_swingup_time_s", "k_energy_J", "k_max_torque_Nm", "k_integrated_torque_Nms", "k_max_velocity_rad_s",
    "success_cone_rad", "success_window_s",
}
ROBUSTNESS_KEYS = {"param_deltas", "action_noise", "measurement_noise", "episodes_per_variation"}
TOP_KEYS = {"system", "output_dir", "seeds", "physics", "task", "reward", "rl", "snes", "scoring", "robustness"}


def _check_keys(section: str, data: dict, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")


@dataclass
class ExperimentConfig:
    system: str
    env: Env
    eval_dt: float
    algorithm: Algorithm
    episodes: int
    train: TrainConfig
    snes: SnesConfig
    generations: int
    fitness: FitnessSpec
    noise_sigma: float | None
    scoring: scoring.ScoringConfig
    robustness: scoring.RobustnessConfig
    seeds: list
    output_dir: Path
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def eval_env(self) -> Env:
        return self.env.with_dt(self.eval_dt)


def default_document(system: str) -> dict:
    """Config tree with every key at its default for ``system``."""
    if system not in SYSTEMS:
        raise ConfigError(f"unknown system {system!r}")
    cartpole = system == "cartpole"
    if cartpole:
        p = physics.CartpoleParams()
        phys = {key: getattr(p, attr) for key, attr in CARTPOLE_KEYS.items()}
    else:
        p = physics.DoublePendulumParams(actuation=system)
        phys = {key: getattr(p, attr) for key, attr in PENDULUM_KEYS.items()}
    w = scoring.DoublePendulumRewardWeights.for_system(system)
    sac, td3 = SacConfig(), Td3Config()
    doc = {
        "system": system,
        "output_dir": f"runs/{system}",
        "seeds": [0],
        "physics": phys,
        "task": {
            "train_dt_s": 0.01,
            "eval_dt_s": 0.05 if cartpole else 0.01,
            "horizon_s": 3.0 if cartpole else 10.0,
            "internal_dt_s": 0.002,
        },
        "rl": {
            "algorithm": "sac",
            "episodes": 300,
            "gamma": sac.gamma,
            "lr": sac.lr,
            "tau_polyak": sac.tau_polyak,
            "batch_size": sac.batch_size,
            "warmup_steps": sac.warmup_steps,
            "train_freq": sac.train_freq,
            "alpha_init": sac.alpha,
            "auto_alpha": sac.auto_alpha,
            "target_entropy": sac.target_entropy,
            "buffer_capacity": sac.buffer_capacity,
            "actor_hidden": list(sac.actor_hidden),
            "critic_hidden": list(sac.critic_hidden),
            "eval_every": 5,
            "keep": "best",
            "random_start_prob": 0.5,
            "td3": {
                "policy_delay": td3.policy_delay,
                "target_noise_std": td3.target_noise_std,
                "target_noise_clip": td3.target_noise_clip,
                "exploration_noise_std": td3.exploration_noise_std,
            },
        },
        "snes": {
            "popsize": 40,
            "sigma_init": 0.02 if cartpole else 0.01,
            "generations": 100,
            "eta_mu": 1.0,
            "eta_sigma": None,
            "objective": "swingup_time" if cartpole else "performance_score",
            "episodes_per_eval": 1,
            "eval_seed_policy": "fixed",
            "noise_sigma": None,
        },
        "scoring": {
            "k_swingup_time_s": 10.0,
            "k_energy_J": 100.0,
            "k_max_torque_Nm": None,
            "k_integrated_torque_Nms": 20.0,
            "k_max_velocity_rad_s": 50.0,
            "success_cone_rad": 0.2,
            "success_window_s": 1.0,
        },
        "robustness": {
            "param_deltas": {name: list(ds) for name, ds in scoring.RobustnessConfig().param_deltas},
            "action_noise": [0.05, 0.1],
            "measurement_noise": [0.01, 0.05],
            "episodes_per_variation": 1,
        },
    }
    if not cartpole:
        doc["reward"] = {key: getattr(w, attr) for key, attr in REWARD_KEYS.items()}
    return doc


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown key {where!r}")
        if isinstance(out[key], dict) and key != "param_deltas":
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict) or "system" not in doc:
        raise ConfigError("config must be a mapping with a 'system' key")
    _check_keys("<root>", doc, TOP_KEYS)
    system = doc["system"]
    full = _merge(default_document(system), doc)
    if system == "cartpole" and "reward" in doc:
        raise ConfigError("the cart-pole has no reward weights section")

    try:
        if system == "cartpole":
            _check_keys("physics", full["physics"], CARTPOLE_KEYS)
            params = physics.CartpoleParams(**{CARTPOLE_KEYS[k]: float(v) for k, v in full["physics"].items()})
            weights = None
        else:
            _check_keys("physics", full["physics"], PENDULUM_KEYS)
            params = physics.DoublePendulumParams(
                actuation=system, **{PENDULUM_KEYS[k]: float(v) for k, v in full["physics"].items()}
            )
            weights = scoring.DoublePendulumRewardWeights(**{REWARD_KEYS[k]: float(v) for k, v in full["reward"].items()})
            if weights.y_th >= params.y_max:
                raise ConfigError("reward y_th_m must be below l1 + l2")

        task = full["task"]
        _check_keys("task", task, TASK_KEYS)
        env = Env(
            system,
            params,
            dt=float(task["train_dt_s"]),
            horizon_s=float(task["horizon_s"]),
            weights=weights,
            internal_dt=float(task["internal_dt_s"]),
        )

        r = full["rl"]
        _check_keys("rl", r, RL_KEYS)
        _check_keys("rl.td3", r["td3"], TD3_KEYS)
        sac = SacConfig(
            gamma=float(r["gamma"]),
            lr=float(r["lr"]),
            tau_polyak=float(r["tau_polyak"]),
            batch_size=int(r["batch_size"]),
            warmup_steps=int(r["warmup_steps"]),
            train_freq=int(r["train_freq"]),
            alpha=float(r["alpha_init"]),
            auto_alpha=bool(r["auto_alpha"]),
            target_entropy=None if r["target_entropy"] is None else float(r["target_entropy"]),
            buffer_capacity=int(r["buffer_capacity"]),
            actor_hidden=tuple(int(h) for h in r["actor_hidden"]),
            critic_hidden=tuple(int(h) for h in r["critic_hidden"]),
        )
        td3 = Td3Config(**r["td3"])
        eval_dt = float(task["eval_dt_s"])
        train_cfg = TrainConfig(sac=sac, td3=td3, eval_every=int(r["eval_every"]), eval_dt=eval_dt, keep=r["keep"],
                                random_start_prob=float(r["random_start_prob"]))

        sc = full["scoring"]
        _check_keys("scoring", sc, SCORING_KEYS)
        scoring_cfg = scoring.ScoringConfig(
            k=(
                float(sc["k_swingup_time_s"]),
                float(sc["k_energy_J"]),
                None if sc["k_max_torque_Nm"] is None else float(sc["k_max_torque_Nm"]),
                float(sc["k_integrated_torque_Nms"]),
                float(sc["k_max_velocity_rad_s"]),
            ),
            success_cone_rad=float(sc["success_cone_rad"]),
            success_window_s=float(sc["success_window_s"]),
        )
        if system != "cartpole":
            scoring_cfg.constants(params)

        s = full["snes"]
        _check_keys("snes", s, SNES_KEYS)
        snes = SnesConfig(
            popsize=int(s["popsize"]),
            sigma_init=float(s["sigma_init"]),
            eta_mu=float(s["eta_mu"]),
            eta_sigma=None if s["eta_sigma"] is None else float(s["eta_sigma"]),
        )
        fitness = FitnessSpec(
            objective=s["objective"],
            episodes_per_eval=int(s["episodes_per_eval"]),
            eval_seed_policy=s["eval_seed_policy"],
            scoring=scoring_cfg,
        )
        if system == "cartpole" and fitness.objective != "swingup_time":
            raise ConfigError("cart-pole fine-tuning supports only the swingup_time objective")

        rb = full["robustness"]
        _check_keys("robustness", rb, ROBUSTNESS_KEYS)
        robustness = scoring.RobustnessConfig(
            param_deltas=tuple((k, tuple(v)) for k, v in rb["param_deltas"].items()),
            action_noise=tuple(rb["action_noise"]),
            measurement_noise=tuple(rb["measurement_noise"]),
            episodes_per_variation=int(rb["episodes_per_variation"]),
        )
        if system != "cartpole":
            for name, _ in robustness.param_deltas:
                if name not in PENDULUM_KEYS.values():
                    raise ConfigError(f"robustness parameter {name!r} is not a pendulum parameter")

        seeds = [int(v) for v in full["seeds"]]
        if not seeds:
            raise ConfigError("seeds must be non-empty")
        noise_sigma = s["noise_sigma"]
        return ExperimentConfig(
            system=system,
            env=env,
            eval_dt=eval_dt,
            algorithm=Algorithm(r["algorithm"]),
            episodes=int(r["episodes"]),
            train=train_cfg,
            snes=snes,
            generations=int(s["generations"]),
            fitness=fitness,
            noise_sigma=None if noise_sigma is None else float(noise_sigma),
            scoring=scoring_cfg,
            robustness=robustness,
            seeds=seeds,
            output_dir=Path(full["output_dir"]),
            raw=full,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return parse_config(doc)


def dump_config(doc: dict) -> str:
    return yaml.safe_dump(doc, sort_keys=False)
