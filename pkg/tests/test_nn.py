import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esfinetune import nn
from esfinetune.nn import Activation, MlpArchitecture


def naive_forward(arch, params, x):
    # straightforward re-implementation used as an oracle
    sizes = arch.layer_sizes
    offset = 0
    h = np.asarray(x, dtype=float)
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = params[offset : offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        z = [sum(W[r, c] * h[c] for c in range(fan_in)) + b[r] for r in range(fan_out)]
        z = np.array(z)
        if i < len(sizes) - 2:
            z = np.tanh(z) if arch.hidden_activation is Activation.TANH else np.maximum(z, 0.0)
        h = z
    return h


def test_param_count():
    arch = MlpArchitecture(3, (4, 5), 2)
    assert arch.n_params == (3 + 1) * 4 + (4 + 1) * 5 + (5 + 1) * 2
    with pytest.raises(nn.ConfigError):
        MlpArchitecture(0, (4,), 1)
    with pytest.raises(nn.ConfigError):
        MlpArchitecture(2, (4,), 1, output_activation="tanh")


def test_zero_params_give_zero_output():
    arch = MlpArchitecture(3, (8, 8), 2)
    out, _ = nn.forward(arch, np.zeros(arch.n_params), np.ones(3))
    assert np.array_equal(out, np.zeros(2))


def test_identity_linear_layer():
    arch = MlpArchitecture(3, (), 3)
    params = nn.flatten([(np.eye(3), np.zeros(3))])
    x = np.array([0.3, -1.2, 4.0])
    out, _ = nn.forward(arch, params, x)
    assert np.array_equal(out, x)


@pytest.mark.parametrize("act", ["tanh", "relu"])
def test_forward_matches_naive(act):
    rng = np.random.default_rng(5)
    arch = MlpArchitecture(4, (6, 3), 2, hidden_activation=act)
    for _ in range(10):
        params = rng.normal(size=arch.n_params)
        x = rng.normal(size=4)
        out, _ = nn.forward(arch, params, x)
        assert np.allclose(out, naive_forward(arch, params, x), rtol=1e-13, atol=1e-13)


def test_batched_forward_matches_rows():
    rng = np.random.default_rng(1)
    arch = MlpArchitecture(3, (5,), 2, hidden_activation="tanh")
    params = rng.normal(size=arch.n_params)
    xs = rng.normal(size=(7, 3))
    batch = nn.predict(arch, params, xs)
    for i in range(7):
        assert np.allclose(batch[i], nn.predict(arch, params, xs[i]), rtol=0, atol=1e-15)


def test_dimension_mismatch_rejected():
    arch = MlpArchitecture(3, (4,), 1)
    with pytest.raises(nn.ConfigError):
        nn.forward(arch, np.zeros(arch.n_params + 1), np.zeros(3))
    with pytest.raises(nn.ConfigError):
        nn.forward(arch, np.zeros(arch.n_params), np.zeros(2))


def test_zero_cotangent_gives_zero_grads():
    arch = MlpArchitecture(3, (4,), 2, hidden_activation="tanh")
    params = nn.init_params(arch, 0)
    _, tape = nn.forward(arch, params, np.ones(3))
    g, gx = nn.backward(tape, np.zeros(2))
    assert not g.any() and not gx.any()


def test_linear_layer_gradient_closed_form():
    arch = MlpArchitecture(3, (), 2)
    params = np.random.default_rng(0).normal(size=arch.n_params)
    x = np.array([0.5, -2.0, 3.0])
    _, tape = nn.forward(arch, params, x)
    g, gx = nn.backward(tape, np.array([1.0, 0.0]))
    (gw, gb), = nn.unflatten(arch, g)
    assert np.array_equal(gw[0], x) and not gw[1].any()
    assert np.array_equal(gb, [1.0, 0.0])
    W = params[:6].reshape(2, 3)
    assert np.allclose(gx, W[0])


def test_tape_is_single_use():
    arch = MlpArchitecture(2, (3,), 1)
    _, tape = nn.forward(arch, nn.init_params(arch, 0), np.ones(2))
    nn.backward(tape, np.ones(1))
    with pytest.raises(nn.TapeError):
        nn.backward(tape, np.ones(1))


def test_gradcheck_hundred_configurations():
    records = nn.gradcheck(n_cases=100, seed=0, h=1e-5)
    assert len(records) == 100
    assert max(r["max_rel_err"] for r in records) < 1e-4


def test_input_gradient_by_finite_differences():
    rng = np.random.default_rng(2)
    arch = MlpArchitecture(4, (7, 5), 3, hidden_activation="tanh")
    params = nn.init_params(arch, 3)
    x, cot = rng.normal(size=4), rng.normal(size=3)
    _, tape = nn.forward(arch, params, x)
    _, gx = nn.backward(tape, cot)
    h = 1e-6
    fd = np.array([(cot @ nn.predict(arch, params, x + h * e) - cot @ nn.predict(arch, params, x - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.allclose(gx, fd, rtol=1e-7, atol=1e-8)


def test_batched_backward_sums_rows():
    rng = np.random.default_rng(4)
    arch = MlpArchitecture(3, (5,), 2, hidden_activation="tanh")
    params = nn.init_params(arch, 1)
    xs, cots = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    _, tape = nn.forward(arch, params, xs)
    g, gx = nn.backward(tape, cots)
    total = np.zeros_like(g)
    for i in range(6):
        _, t = nn.forward(arch, params, xs[i])
        gi, gxi = nn.backward(t, cots[i])
        total += gi
        assert np.allclose(gx[i], gxi, atol=1e-14)
    assert np.allclose(g, total, atol=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.lists(st.integers(1, 8), max_size=3), st.integers(1, 4), st.integers(0, 2**31))
def test_flatten_roundtrip(n_in, hidden, n_out, seed):
    arch = MlpArchitecture(n_in, tuple(hidden), n_out)
    v = np.random.default_rng(seed).normal(size=arch.n_params)
    assert np.array_equal(nn.flatten(nn.unflatten(arch, v)), v)


def test_init_is_seeded_and_bounded():
    arch = MlpArchitecture(16, (64, 64), 2)
    a, b = nn.init_params(arch, 7), nn.init_params(arch, 7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, nn.init_params(arch, 8))
    draws = np.stack([nn.init_params(MlpArchitecture(16, (4,), 1), s) for s in range(10_000)])
    w1 = draws[:, : 16 * 4]
    assert np.abs(w1).max() <= 1.0 / np.sqrt(16)
    assert np.abs(w1).max() > 0.99 / np.sqrt(16)
    for w, _ in nn.unflatten(arch, a):
        assert np.abs(w).max() <= 1.0 / np.sqrt(w.shape[1])


def test_architecture_dict_roundtrip():
    arch = MlpArchitecture(6, (64, 64), 2, hidden_activation="tanh")
    assert MlpArchitecture.from_dict(arch.to_dict()) == arch
