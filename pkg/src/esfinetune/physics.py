"""Forward dynamics and fixed-step integration for the cart-pole and the
planar double pendulum.

State layout is ``[q..., qdot...]`` for both systems:

* cart-pole: ``[x, theta, xdot, thetadot]``
* double pendulum: ``[theta1, theta2, theta1dot, theta2dot]``

Angles are zero when the link hangs straight down and grow counter-clockwise;
``theta2`` is measured relative to link 1. The upright targets are therefore
``[0, pi, 0, 0]`` (cart-pole) and ``[pi, 0, 0, 0]`` (double pendulum).

All functions broadcast over leading batch dimensions, so a ``(B, 4)`` state
array and parameter fields holding ``(B,)`` arrays simulate ``B`` systems at
once. This is what the population and robustness evaluators rely on.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields, replace

import numpy as np

__all__ = [
    "Actuation",
    "CartpoleParams",
    "DivergenceError",
    "DomainError",
    "DoublePendulumParams",
    "IntegratorConfig",
    "Method",
    "cartpole_derivative",
    "double_pendulum_derivative",
    "derivative",
    "end_effector_height",
    "integrate",
    "mechanical_energy",
    "pole_tip",
    "step",
]

DIVERGENCE_BOUND = 1e6


class DomainError(ValueError):
    """Raised for non-finite or physically meaningless inputs."""


class DivergenceError(RuntimeError):
    """Raised when a simulated state leaves the configured magnitude bound."""


class Actuation(str, enum.Enum):
    PENDUBOT = "pendubot"  # torque on joint 1
    ACROBOT = "acrobot"  # torque on joint 2


class Method(str, enum.Enum):
    RK4 = "rk4"
    SEMI_IMPLICIT_EULER = "semi_implicit_euler"


@dataclass(frozen=True)
class CartpoleParams:
    """Cart with a point-mass pole on a frictionless pivot.

    The pole mass sits at the tip, a distance ``pole_length`` from the pivot.
    """

    cart_mass: float = 0.3
    pole_mass: float = 0.1
    pole_length: float = 0.5
    gravity: float = 9.81
    cart_friction: float = 0.0
    u_max: float = 2.5

    def __post_init__(self):
        _check_finite(self)
        if np.any(np.asarray(self.cart_mass) <= 0) or np.any(np.asarray(self.pole_mass) <= 0):
            raise DomainError("masses must be strictly positive")
        if np.any(np.asarray(self.pole_length) <= 0):
            raise DomainError("pole_length must be strictly positive")
        if np.any(np.asarray(self.cart_friction) < 0):
            raise DomainError("cart_friction must be >= 0")
        if self.u_max <= 0:
            raise DomainError("u_max must be > 0")

    @property
    def control_limit(self) -> float:
        return self.u_max


@dataclass(frozen=True)
class DoublePendulumParams:
    """Two-link planar pendulum in manipulator form.

    ``inertia1``/``inertia2`` are link inertias about their own joint axis
    (so they include the ``m * r**2`` term). The defaults put each mass at the
    link end, which makes ``inertia = m * r**2`` exactly.
    """

    m1: float = 0.608
    m2: float = 0.630
    l1: float = 0.3
    l2: float = 0.2
    r1: float = 0.3
    r2: float = 0.2
    inertia1: float = 0.608 * 0.3**2
    inertia2: float = 0.630 * 0.2**2
    b1: float = 0.001
    b2: float = 0.001
    gravity: float = 9.81
    tau_max: float = 3.0
    actuation: Actuation = Actuation.PENDUBOT

    def __post_init__(self):
        object.__setattr__(self, "actuation", Actuation(self.actuation))
        _check_finite(self)
        for name in ("m1", "m2", "l1", "l2", "r1", "r2", "inertia1", "inertia2"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise DomainError(f"{name} must be strictly positive")
        if np.any(np.asarray(self.b1) < 0) or np.any(np.asarray(self.b2) < 0):
            raise DomainError("damping must be >= 0")
        # parallel-axis bound; it also keeps the mass matrix positive definite
        for link in ("1", "2"):
            m, r, inertia = (np.asarray(getattr(self, k + link)) for k in ("m", "r", "inertia"))
            if np.any(inertia < m * r * r * (1.0 - 1e-9)):
                raise DomainError(f"inertia{link} must be at least m{link} * r{link}**2 about the joint axis")
        if self.tau_max <= 0:
            raise DomainError("tau_max must be > 0")

    @property
    def control_limit(self) -> float:
        return self.tau_max

    @property
    def y_max(self):
        return self.l1 + self.l2


@dataclass(frozen=True)
class IntegratorConfig:
    method: Method = Method.RK4
    dt: float = 0.01
    substeps: int = 5
    bound: float = DIVERGENCE_BOUND

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.dt > 0:
            raise DomainError("dt must be > 0")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise DomainError("substeps must be a positive integer")

    @classmethod
    def for_control_period(cls, dt: float, internal_dt: float = 0.002, **kwargs) -> IntegratorConfig:
        """Integrator whose substep count keeps the internal step near ``internal_dt``."""
        return cls(dt=dt, substeps=max(1, round(dt / internal_dt)), **kwargs)


def _check_finite(params) -> None:
    for f in fields(params):
        value = getattr(params, f.name)
        if isinstance(value, enum.Enum):
            continue
        if not np.all(np.isfinite(np.asarray(value, dtype=float))):
            raise DomainError(f"parameter {f.name} is not finite")


def cartpole_derivative(state, force, params: CartpoleParams) -> np.ndarray:
    """Time derivative ``[xdot, thetadot, xddot, thetaddot]`` of the cart-pole.

    Lagrangian of a cart of mass M with a point mass m at distance l::

        (M + m) xdd + m l cos(th) thdd - m l sin(th) thd^2 = u - c xd
        cos(th) xdd + l thdd + g sin(th) = 0
    """
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(state)):
        raise DomainError("non-finite cart-pole state")
    x, th, xd, thd = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
    M, m, ell, g = params.cart_mass, params.pole_mass, params.pole_length, params.gravity
    s, c = np.sin(th), np.cos(th)
    f = force - params.cart_friction * xd
    xdd = (f + m * s * (g * c + ell * thd * thd)) / (M + m * s * s)
    thdd = -(c * xdd + g * s) / ell
    return np.stack([xd, thd, xdd, thdd], axis=-1)


def _joint_torques(torque, params: DoublePendulumParams):
    zero = np.zeros_like(np.asarray(torque, dtype=float))
    if params.actuation is Actuation.PENDUBOT:
        return torque + zero, zero
    return zero, torque + zero


def double_pendulum_derivative(state, torque, params: DoublePendulumParams) -> np.ndarray:
    """Time derivative of the double pendulum from ``M q'' + C q' + G + B q' = tau``."""
    state = np.asarray(state, dtype=float)
    th1, th2, w1, w2 = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
    p = params
    c2, s2 = np.cos(th2), np.sin(th2)
    s1, s12 = np.sin(th1), np.sin(th1 + th2)
    h = p.m2 * p.l1 * p.r2
    m11 = p.inertia1 + p.inertia2 + p.m2 * p.l1 * p.l1 + 2.0 * h * c2
    m12 = p.inertia2 + h * c2
    m22 = p.inertia2 + 0.0 * c2
    g1 = p.gravity * (p.m1 * p.r1 * s1 + p.m2 * (p.l1 * s1 + p.r2 * s12))
    g2 = p.gravity * p.m2 * p.r2 * s12
    cor1 = -2.0 * h * s2 * w1 * w2 - h * s2 * w2 * w2
    cor2 = h * s2 * w1 * w1
    tau1, tau2 = _joint_torques(torque, p)
    rhs1 = tau1 - cor1 - g1 - p.b1 * w1
    rhs2 = tau2 - cor2 - g2 - p.b2 * w2
    det = m11 * m22 - m12 * m12
    a1 = (m22 * rhs1 - m12 * rhs2) / det
    a2 = (m11 * rhs2 - m12 * rhs1) / det
    return np.stack([w1, w2, a1, a2], axis=-1)


def derivative(state, control, params) -> np.ndarray:
    if isinstance(params, CartpoleParams):
        return cartpole_derivative(state, control, params)
    return double_pendulum_derivative(state, control, params)


def _rk4(state, control, params, h):
    k1 = derivative(state, control, params)
    k2 = derivative(state + 0.5 * h * k1, control, params)
    k3 = derivative(state + 0.5 * h * k2, control, params)
    k4 = derivative(state + h * k3, control, params)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _semi_implicit_euler(state, control, params, h):
    acc = derivative(state, control, params)[..., 2:]
    qdot = state[..., 2:] + h * acc
    q = state[..., :2] + h * qdot
    return np.concatenate([q, qdot], axis=-1)


def integrate(state, control, params, integ: IntegratorConfig) -> np.ndarray:
    """Advance one control period without the divergence check.

    Batched callers use this and mask diverged rows themselves.
    """
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    h = integ.dt / integ.substeps
    advance = _rk4 if integ.method is Method.RK4 else _semi_implicit_euler
    for _ in range(int(integ.substeps)):
        state = advance(state, control, params, h)
    return state


def step(state, control, params, integ: IntegratorConfig) -> np.ndarray:
    """Advance one control period of length ``integ.dt`` under zero-order-hold control.

    Raises
    ------
    DivergenceError
        If any component of the result is non-finite or exceeds ``integ.bound``.
    """
    nxt = integrate(state, control, params, integ)
    if not np.all(np.abs(nxt) <= integ.bound):
        raise DivergenceError(f"state left the bound {integ.bound:g}")
    return nxt


def mechanical_energy(state, params) -> tuple[np.ndarray, np.ndarray]:
    """Kinetic and potential energy, with potential zero at the hanging rest pose."""
    state = np.asarray(state, dtype=float)
    if isinstance(params, CartpoleParams):
        x, th, xd, thd = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
        M, m, ell, g = params.cart_mass, params.pole_mass, params.pole_length, params.gravity
        kinetic = 0.5 * (M + m) * xd**2 + m * ell * xd * thd * np.cos(th) + 0.5 * m * ell**2 * thd**2
        potential = m * g * ell * (1.0 - np.cos(th))
        return kinetic, potential
    p = params
    th1, th2, w1, w2 = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
    c2 = np.cos(th2)
    h = p.m2 * p.l1 * p.r2
    m11 = p.inertia1 + p.inertia2 + p.m2 * p.l1**2 + 2.0 * h * c2
    m12 = p.inertia2 + h * c2
    kinetic = 0.5 * (m11 * w1 * w1 + 2.0 * m12 * w1 * w2 + p.inertia2 * w2 * w2)
    c1, c12 = np.cos(th1), np.cos(th1 + th2)
    potential = p.gravity * (
        p.m1 * p.r1 * (1.0 - c1) + p.m2 * (p.l1 * (1.0 - c1) + p.r2 * (1.0 - c12))
    )
    return kinetic, potential


def end_effector_height(state, params: DoublePendulumParams):
    state = np.asarray(state, dtype=float)
    th1, th2 = state[..., 0], state[..., 1]
    return -params.l1 * np.cos(th1) - params.l2 * np.cos(th1 + th2)


def pole_tip(state, params: CartpoleParams) -> tuple[np.ndarray, np.ndarray]:
    """Tip position ``(x + l sin(theta), -l cos(theta))``; upright tip is ``(0, l)``."""
    state = np.asarray(state, dtype=float)
    x, th = state[..., 0], state[..., 1]
    ell = params.pole_length
    return x + ell * np.sin(th), -ell * np.cos(th)


def scale_params(params, **relative):
    """Copy of ``params`` with named fields multiplied by ``1 + delta``.

    Inertias follow mass and radius changes so that each link keeps its
    point-mass-at-radius structure (``I * (1+dm) * (1+dr)**2``).
    """
    changes = {}
    for name, delta in relative.items():
        changes[name] = getattr(params, name) * (1.0 + delta)
    if isinstance(params, DoublePendulumParams):
        for link in ("1", "2"):
            dm = relative.get("m" + link, 0.0)
            dl = relative.get("l" + link, 0.0)
            if dm or dl:
                # radius follows length for end-mass links
                r = "r" + link
                changes.setdefault(r, getattr(params, r) * (1.0 + dl))
                inertia = "inertia" + link
                changes[inertia] = getattr(params, inertia) * (1.0 + dm) * (1.0 + dl) ** 2
    return replace(params, **changes)
