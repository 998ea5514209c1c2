"""Fixed-structure multilayer perceptrons over flat float64 parameter vectors.

Parameters live in one contiguous vector so that evolution strategies can
perturb them directly; :func:`unflatten` returns views into that vector.
Layer ``k`` stores its weight matrix (``fan_out x fan_in``, row-major)
followed by its bias.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """Shape or architecture mismatch."""


class TapeError(RuntimeError):
    """A gradient tape was reused."""


class Activation(str, enum.Enum):
    TANH = "tanh"
    RELU = "relu"
    LINEAR = "linear"


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden_sizes: tuple[int, ...]
    output_dim: int
    hidden_activation: Activation = Activation.RELU
    output_activation: Activation = Activation.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "hidden_activation", Activation(self.hidden_activation))
        object.__setattr__(self, "output_activation", Activation(self.output_activation))
        if self.output_activation is not Activation.LINEAR:
            raise ConfigError("only linear output layers are supported")
        if min((self.input_dim, self.output_dim, *self.hidden_sizes)) < 1:
            raise ConfigError("all layer sizes must be >= 1")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_sizes, self.output_dim)

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(sizes[:-1], sizes[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "output_dim": self.output_dim,
            "hidden_activation": self.hidden_activation.value,
            "output_activation": self.output_activation.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MlpArchitecture:
        return cls(**d)


def unflatten(arch: MlpArchitecture, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into ``(W, b)`` views, one pair per layer."""
    if params.ndim != 1 or params.shape[0] != arch.n_params:
        raise ConfigError(f"expected {arch.n_params} parameters, got shape {params.shape}")
    layers = []
    offset = 0
    sizes = arch.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = params[offset : offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])


def init_params(arch: MlpArchitecture, seed) -> np.ndarray:
    """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for weights and biases."""
    rng = np.random.default_rng(seed)
    params = np.empty(arch.n_params)
    for w, b in unflatten(arch, params):
        bound = 1.0 / np.sqrt(w.shape[1])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return params


@dataclass
class GradientTape:
    arch: MlpArchitecture
    layers: list
    activations: list  # input to each layer
    preacts: list  # hidden pre-activations
    batched: bool
    consumed: bool = field(default=False)


def _act(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return np.tanh(z)
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def _act_grad(kind: Activation, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return 1.0 - out * out
    if kind is Activation.RELU:
        return (z > 0.0).astype(float)
    return np.ones_like(z)


def forward(arch: MlpArchitecture, params: np.ndarray, x) -> tuple[np.ndarray, GradientTape]:
    """Evaluate the network on one input vector or a ``(batch, input_dim)`` array."""
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.shape[-1] != arch.input_dim:
        raise ConfigError(f"input has dimension {h.shape[-1]}, expected {arch.input_dim}")
    layers = unflatten(arch, params)
    activations, preacts = [], []
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        activations.append(h)
        z = h @ w.T + b
        if k < last:
            preacts.append(z)
            h = _act(arch.hidden_activation, z)
        else:
            h = z
    tape = GradientTape(arch, layers, activations, preacts, batched)
    return (h if batched else h[0]), tape


def predict(arch: MlpArchitecture, params: np.ndarray, x) -> np.ndarray:
    """Forward pass without recording a tape."""
    h = np.asarray(x, dtype=float)
    layers = unflatten(arch, params)
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if k < last:
            h = _act(arch.hidden_activation, h)
    return h


def backward(tape: GradientTape, cotangent) -> tuple[np.ndarray, np.ndarray]:
    """Vector-Jacobian product of the recorded forward pass.

    For batched tapes the parameter gradient is summed over the batch and the
    input gradient keeps the batch dimension.
    """
    if tape.consumed:
        raise TapeError("gradient tape already consumed")
    tape.consumed = True
    arch = tape.arch
    g = np.asarray(cotangent, dtype=float)
    if not tape.batched:
        g = g[None, :]
    if g.shape != (tape.activations[0].shape[0], arch.output_dim):
        raise ConfigError(f"cotangent shape {g.shape} does not match output")
    grads = []
    for k in range(len(tape.layers) - 1, -1, -1):
        w, _ = tape.layers[k]
        a_in = tape.activations[k]
        grads.append((g.T @ a_in, g.sum(axis=0)))
        g = g @ w
        if k > 0:
            z = tape.preacts[k - 1]
            g = g * _act_grad(arch.hidden_activation, z, a_in)
    param_grad = flatten(grads[::-1])
    return param_grad, (g if tape.batched else g[0])


def finite_difference_grad(arch, params, x, cotangent, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``cotangent . forward(params, x)`` w.r.t. params."""
    cot = np.asarray(cotangent, dtype=float)
    grad = np.empty_like(params)
    probe = params.copy()
    for i in range(params.size):
        orig = probe[i]
        probe[i] = orig + h
        up = np.sum(cot * predict(arch, probe, x))
        probe[i] = orig - h
        down = np.sum(cot * predict(arch, probe, x))
        probe[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def gradcheck(n_cases: int = 100, seed: int = 0, h: float = 1e-5) -> list[dict]:
    """Compare analytic and finite-difference gradients on random small MLPs.

    Returns one record per case with the worst relative error, using
    ``max(1, |g|)`` as denominator.
    """
    rng = np.random.default_rng(seed)
    results = []
    for case in range(n_cases):
        arch = MlpArchitecture(
            input_dim=int(rng.integers(1, 6)),
            hidden_sizes=tuple(int(n) for n in rng.integers(1, 9, size=rng.integers(1, 4))),
            output_dim=int(rng.integers(1, 4)),
            hidden_activation=Activation.TANH if rng.random() < 0.5 else Activation.RELU,
        )
        params = init_params(arch, rng.integers(2**31))
        x = rng.normal(size=arch.input_dim)
        cot = rng.normal(size=arch.output_dim)
        _, tape = forward(arch, params, x)
        analytic, _ = backward(tape, cot)
        numeric = finite_difference_grad(arch, params, x, cot, h=h)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        results.append({"case": case, "n_params": arch.n_params, "max_rel_err": float(err.max())})
    return results
