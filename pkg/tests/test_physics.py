import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from esfinetune import physics
from esfinetune.physics import CartpoleParams, DoublePendulumParams, IntegratorConfig


def _lagrange_accels(L, q, qd, forces):
    """Solve the Euler-Lagrange equations of ``L`` for the accelerations."""
    t = sp.Symbol("t")
    qa = [sp.Function(f"q{i}")(t) for i in range(len(q))]
    sub = {q[i]: qa[i] for i in range(len(q))} | {qd[i]: qa[i].diff(t) for i in range(len(q))}
    La = L.subs(sub)
    eqs = [sp.diff(La.diff(qa[i].diff(t)), t) - La.diff(qa[i]) - forces[i].subs(sub) for i in range(len(q))]
    qdd = sp.symbols(f"a0:{len(q)}")
    back = {qa[i].diff(t, 2): qdd[i] for i in range(len(q))}
    back |= {qa[i].diff(t): qd[i] for i in range(len(q))}
    back |= {qa[i]: q[i] for i in range(len(q))}
    eqs = [e.subs(back) for e in eqs]
    sol = sp.solve(eqs, qdd, dict=True)[0]
    return [sol[a] for a in qdd]


@pytest.fixture(scope="module")
def cartpole_oracle():
    x, th, xd, thd, u, M, m, ell, g, c = sp.symbols("x th xd thd u M m ell g c")
    px, py = x + ell * sp.sin(th), -ell * sp.cos(th)
    vx, vy = xd + ell * sp.cos(th) * thd, ell * sp.sin(th) * thd
    L = sp.Rational(1, 2) * M * xd**2 + sp.Rational(1, 2) * m * (vx**2 + vy**2) - m * g * py
    acc = _lagrange_accels(L, [x, th], [xd, thd], [u - c * xd, sp.Integer(0)])
    return sp.lambdify((x, th, xd, thd, u, M, m, ell, g, c), acc, "numpy")


@pytest.fixture(scope="module")
def pendulum_oracle():
    th1, th2, w1, w2, t1, t2 = sp.symbols("th1 th2 w1 w2 t1 t2")
    m1, m2, l1, r1, r2, I1, I2, b1, b2, g = sp.symbols("m1 m2 l1 r1 r2 I1 I2 b1 b2 g")
    # link 2 centre of mass in the plane
    x2 = l1 * sp.sin(th1) + r2 * sp.sin(th1 + th2)
    y2 = -l1 * sp.cos(th1) - r2 * sp.cos(th1 + th2)
    x2d = l1 * sp.cos(th1) * w1 + r2 * sp.cos(th1 + th2) * (w1 + w2)
    y2d = l1 * sp.sin(th1) * w1 + r2 * sp.sin(th1 + th2) * (w1 + w2)
    T = (
        sp.Rational(1, 2) * I1 * w1**2
        + sp.Rational(1, 2) * m2 * (x2d**2 + y2d**2)
        + sp.Rational(1, 2) * (I2 - m2 * r2**2) * (w1 + w2) ** 2
    )
    V = -m1 * g * r1 * sp.cos(th1) + m2 * g * y2
    acc = _lagrange_accels(T - V, [th1, th2], [w1, w2], [t1 - b1 * w1, t2 - b2 * w2])
    args = (th1, th2, w1, w2, t1, t2, m1, m2, l1, r1, r2, I1, I2, b1, b2, g)
    return sp.lambdify(args, acc, "numpy")


def test_cartpole_equilibria():
    p = CartpoleParams()
    assert np.array_equal(physics.cartpole_derivative([0, 0, 0, 0], 0.0, p), np.zeros(4))
    up = physics.cartpole_derivative([0, np.pi, 0, 0], 0.0, p)
    assert np.allclose(up, 0.0, atol=1e-14)


def test_cartpole_matches_lagrangian(cartpole_oracle):
    p = CartpoleParams(cart_mass=0.7, pole_mass=0.15, pole_length=0.4, cart_friction=0.1)
    rng = np.random.default_rng(3)
    states = [np.array([0.0, np.pi / 2, 0.0, 0.0])] + [rng.normal(size=4) for _ in range(20)]
    for s in states:
        u = rng.uniform(-p.u_max, p.u_max)
        got = physics.cartpole_derivative(s, u, p)
        want = cartpole_oracle(*s, u, p.cart_mass, p.pole_mass, p.pole_length, p.gravity, p.cart_friction)
        assert np.allclose(got[:2], s[2:], rtol=0, atol=0)
        assert np.allclose(got[2:], want, rtol=1e-12, atol=1e-12)


def test_cartpole_horizontal_pole_closed_form():
    # at theta = pi/2 from rest the cart feels no pole force and the pole falls freely
    p = CartpoleParams()
    d = physics.cartpole_derivative([0, np.pi / 2, 0, 0], 0.0, p)
    assert d[2] == pytest.approx(0.0, abs=1e-15)
    assert d[3] == pytest.approx(-p.gravity / p.pole_length, rel=1e-14)


def test_cartpole_rejects_nonfinite():
    with pytest.raises(physics.DomainError):
        physics.cartpole_derivative([0, np.nan, 0, 0], 0.0, CartpoleParams())
    with pytest.raises(physics.DomainError):
        CartpoleParams(pole_mass=float("inf"))
    with pytest.raises(physics.DomainError):
        CartpoleParams(cart_mass=0.0)


def test_double_pendulum_rejects_bad_params():
    with pytest.raises(physics.DomainError):
        DoublePendulumParams(m2=1.0, r2=0.2, inertia2=0.03)  # below m * r**2
    with pytest.raises(physics.DomainError):
        DoublePendulumParams(b1=-0.1)
    # scaled batteries keep inertias consistent with mass and radius
    physics.scale_params(DoublePendulumParams(), m2=0.2, l2=-0.2)


@pytest.mark.parametrize("actuation", ["pendubot", "acrobot"])
def test_double_pendulum_equilibria(actuation):
    p = DoublePendulumParams(actuation=actuation, b1=0.0, b2=0.0)
    assert np.array_equal(physics.double_pendulum_derivative([0, 0, 0, 0], 0.0, p), np.zeros(4))
    up = physics.double_pendulum_derivative([np.pi, 0, 0, 0], 0.0, p)
    assert np.allclose(up, 0.0, atol=1e-14)


@pytest.mark.parametrize("actuation", ["pendubot", "acrobot"])
def test_double_pendulum_matches_lagrangian(pendulum_oracle, actuation):
    p = DoublePendulumParams(
        m1=0.5, m2=0.7, l1=0.3, l2=0.2, r1=0.2, r2=0.15, inertia1=0.03, inertia2=0.02, b1=0.01, b2=0.02,
        actuation=actuation,
    )
    rng = np.random.default_rng(11)
    for _ in range(20):
        s = rng.uniform(-3, 3, size=4)
        tau = 1.0
        t1, t2 = (tau, 0.0) if actuation == "pendubot" else (0.0, tau)
        got = physics.double_pendulum_derivative(s, tau, p)
        want = pendulum_oracle(*s, t1, t2, p.m1, p.m2, p.l1, p.r1, p.r2, p.inertia1, p.inertia2, p.b1, p.b2, p.gravity)
        assert np.allclose(got[2:], want, rtol=1e-11, atol=1e-11)


def test_step_at_equilibrium_is_exact():
    integ = IntegratorConfig.for_control_period(0.01)
    p = DoublePendulumParams()
    assert np.array_equal(physics.step(np.zeros(4), 0.0, p, integ), np.zeros(4))
    assert np.array_equal(physics.step(np.zeros(4), 0.0, CartpoleParams(), integ), np.zeros(4))


def test_substep_count_follows_internal_step():
    assert IntegratorConfig.for_control_period(0.01).substeps == 5
    assert IntegratorConfig.for_control_period(0.05).substeps == 25
    with pytest.raises(physics.DomainError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(physics.DomainError):
        IntegratorConfig(substeps=0)


def _energy_drift(params, state, dt=1e-3, seconds=10.0):
    integ = IntegratorConfig(dt=dt, substeps=1)
    e0 = sum(physics.mechanical_energy(state, params))
    s = np.asarray(state, dtype=float)
    worst = 0.0
    for _ in range(int(round(seconds / dt))):
        s = physics.step(s, 0.0, params, integ)
        worst = max(worst, abs(sum(physics.mechanical_energy(s, params)) - e0))
    return worst / abs(e0)


def test_energy_conservation_double_pendulum():
    p = DoublePendulumParams(b1=0.0, b2=0.0)
    assert _energy_drift(p, [np.pi / 2, 0, 0, 0]) < 1e-3


def test_energy_conservation_cartpole():
    assert _energy_drift(CartpoleParams(), [0, np.pi / 2, 0, 0]) < 1e-3


def test_energy_datum_and_upright_value():
    p = DoublePendulumParams()
    T, V = physics.mechanical_energy([0, 0, 0, 0], p)
    assert T == 0.0 and V == 0.0
    T, V = physics.mechanical_energy([np.pi, 0, 0, 0], p)
    # each centre of mass rises by twice its distance below the first joint
    want = p.gravity * (p.m1 * 2 * p.r1 + p.m2 * 2 * (p.l1 + p.r2))
    assert T == 0.0
    assert V == pytest.approx(want, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_passivity_with_damping(state):
    p = DoublePendulumParams(b1=0.05, b2=0.05)
    integ = IntegratorConfig.for_control_period(0.01)
    s = np.array(state)
    e = sum(physics.mechanical_energy(s, p))
    for _ in range(50):
        s = physics.step(s, 0.0, p, integ)
        e_next = sum(physics.mechanical_energy(s, p))
        assert e_next <= e + 1e-6
        e = e_next


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=4, max_size=4),
    st.floats(-2.5, 2.5),
)
def test_cartpole_mirror_symmetry(state, u):
    p = CartpoleParams(cart_friction=0.2)
    s = np.array(state)
    d = physics.cartpole_derivative(s, u, p)
    d_mirror = physics.cartpole_derivative(-s, -u, p)
    assert np.allclose(d_mirror, -d, rtol=1e-12, atol=1e-12)


def test_rk4_fourth_order():
    p = DoublePendulumParams()
    s0 = np.array([1.0, -0.5, 0.3, 0.8])

    def run(substeps):
        integ = IntegratorConfig(dt=0.1, substeps=substeps)
        s = s0
        for _ in range(10):
            s = physics.integrate(s, 0.5, p, integ)
        return s

    ref = run(256)
    errs = [np.linalg.norm(run(n) - ref) for n in (4, 8, 16)]
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(3.6 < o < 4.4 for o in orders)


def test_divergence_raises():
    p = DoublePendulumParams()
    with pytest.raises(physics.DivergenceError):
        physics.step([0, 0, 2e6, 0], 0.0, p, IntegratorConfig(dt=0.01, substeps=1, bound=1e6))


def test_step_is_deterministic_and_broadcasts():
    p = DoublePendulumParams(actuation="acrobot")
    integ = IntegratorConfig.for_control_period(0.01)
    rng = np.random.default_rng(0)
    states = rng.normal(size=(5, 4))
    torques = rng.uniform(-3, 3, size=5)
    batch = physics.step(states, torques, p, integ)
    for i in range(5):
        single = physics.step(states[i], torques[i], p, integ)
        assert np.array_equal(single, physics.step(states[i], torques[i], p, integ))
        assert np.allclose(batch[i], single, rtol=0, atol=1e-15)


def test_end_effector_and_tip_geometry():
    p = DoublePendulumParams()
    assert physics.end_effector_height([0, 0, 0, 0], p) == pytest.approx(-0.5)
    assert physics.end_effector_height([np.pi, 0, 0, 0], p) == pytest.approx(p.y_max)
    assert physics.end_effector_height([np.pi, np.pi, 0, 0], p) == pytest.approx(p.l1 - p.l2)
    c = CartpoleParams(pole_length=0.5)
    assert np.allclose(physics.pole_tip([0, 0, 0, 0], c), (0, -0.5))
    assert np.allclose(physics.pole_tip([0, np.pi, 0, 0], c), (0, 0.5))
    assert np.allclose(physics.pole_tip([1, np.pi / 2, 0, 0], c), (1.5, 0))


def test_scale_params_keeps_end_mass_structure():
    p = DoublePendulumParams()
    q = physics.scale_params(p, m1=0.1, l2=-0.2)
    assert q.m1 == pytest.approx(p.m1 * 1.1)
    assert q.l2 == pytest.approx(p.l2 * 0.8) and q.r2 == pytest.approx(p.r2 * 0.8)
    assert q.inertia1 == pytest.approx(q.m1 * q.r1**2)
    assert q.inertia2 == pytest.approx(q.m2 * q.r2**2)
    assert p.m1 == 0.608
