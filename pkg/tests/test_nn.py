import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinn_is import autodiff as ad
from pinn_is import nn


def cfg(**kw):
    base = dict(input_dim=2, output_dim=2, hidden_widths=(32, 32, 32, 32), activation="sine",
                init_seed=4)
    base.update(kw)
    return nn.NetworkConfig(**base)


def tape_forward(params, activation, pts):
    tape = ad.Tape()
    xs = [tape.input(pts[:, k : k + 1]) for k in range(pts.shape[1])]
    outs = nn.forward(params, activation, xs, tape)
    return np.hstack([o.value for o in outs])


def test_init_is_deterministic():
    a, b = nn.init(cfg()), nn.init(cfg())
    for x, y in zip(a.flat_list(), b.flat_list()):
        assert np.array_equal(x, y)


def test_init_respects_glorot_bound_and_zero_bias():
    params = nn.init(cfg(hidden_widths=(100, 100), init_seed=9))
    assert sum(w.size for w in params.weights) >= 10_000
    sizes = cfg(hidden_widths=(100, 100)).layer_sizes
    for w, b, fi, fo in zip(params.weights, params.biases, sizes[:-1], sizes[1:]):
        assert w.shape == (fi, fo)
        assert b.shape == (1, fo)
        assert np.all(np.abs(w) <= np.sqrt(6.0 / (fi + fo)))
        assert not b.any()


@pytest.mark.parametrize("bad", [dict(hidden_widths=()), dict(input_dim=0),
                                 dict(activation="gelu"), dict(hidden_widths=(4, 0))])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        cfg(**bad)


def test_zero_weights_return_final_bias():
    params = nn.init(cfg(output_dim=3, hidden_widths=(5, 5)))
    ws = [np.zeros_like(w) for w in params.weights]
    bs = [np.full_like(b, 0.3 * (k + 1)) for k, b in enumerate(params.biases)]
    out = tape_forward(nn.Parameters(ws, bs), "tanh", np.random.default_rng(0).normal(size=(4, 2)))
    assert np.allclose(out, bs[-1])


def test_single_hidden_layer_read_off():
    b1 = np.array([[0.2, -0.7, 1.1]])
    w2 = np.array([[1.0], [2.0], [-0.5]])
    b2 = np.array([[0.4]])
    params = nn.Parameters([np.eye(2, 3), w2], [b1, b2])
    out = tape_forward(params, "sine", np.zeros((1, 2)))
    assert out[0, 0] == pytest.approx((np.sin(b1) @ w2 + b2)[0, 0], abs=1e-15)


@pytest.mark.parametrize("act", nn.ACTIVATIONS)
def test_forward_matches_dense_arithmetic(act):
    params = nn.init(cfg(activation=act, init_seed=1))
    params = nn.Parameters(params.weights, [b + 0.1 for b in params.biases])
    pts = np.random.default_rng(2).uniform(-1, 1, (50, 2))
    ref = pts
    fn = {"sine": np.sin, "tanh": np.tanh, "sigmoid": lambda z: 1 / (1 + np.exp(-z)),
          "swish": lambda z: z / (1 + np.exp(-z)), "relu": lambda z: np.maximum(z, 0)}[act]
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        ref = ref @ w + b
        if k < len(params.weights) - 1:
            ref = fn(ref)
    assert np.max(np.abs(tape_forward(params, act, pts) - ref)) < 1e-13
    assert np.max(np.abs(nn.predict(params, act, pts) - ref)) < 1e-13


def test_forward_dimension_mismatch():
    params = nn.init(cfg())
    with pytest.raises(ad.DimensionError):
        tape_forward(params, "sine", np.zeros((3, 3)))


def test_output_homogeneous_in_last_layer():
    params = nn.init(cfg(init_seed=3))
    pts = np.random.default_rng(5).normal(size=(10, 2))
    bs = params.biases[:-1] + [np.zeros_like(params.biases[-1])]
    p1 = nn.Parameters(params.weights, bs)
    p2 = nn.Parameters(params.weights[:-1] + [2 * params.weights[-1]], bs)
    assert np.allclose(nn.predict(p2, "sine", pts), 2 * nn.predict(p1, "sine", pts), atol=1e-14)


def scalar_params(v):
    return nn.Parameters([np.array([[v]])], [np.zeros((1, 1))])


def test_zero_gradient_leaves_params():
    params = nn.init(cfg(hidden_widths=(3,)))
    state = nn.AdamState.zeros_like(params)
    new, state2 = nn.adam_step(state, params, [np.zeros_like(a) for a in params.flat_list()], 0.1)
    assert state2.t == 1
    for a, b in zip(params.flat_list(), new.flat_list()):
        assert np.array_equal(a, b)


def test_first_adam_step():
    params = scalar_params(1.0)
    state = nn.AdamState.zeros_like(params)
    new, _ = nn.adam_step(state, params, [np.array([[2.0]]), np.zeros((1, 1))], 0.1)
    assert new.weights[0][0, 0] - 1.0 == pytest.approx(-0.1 * 2 / (2 + 1e-8), abs=1e-15)


def test_constant_gradient_step_tends_to_lr():
    params = scalar_params(0.0)
    state = nn.AdamState.zeros_like(params)
    g = [np.array([[0.37]]), np.zeros((1, 1))]
    prev = 0.0
    for _ in range(200):
        params, state = nn.adam_step(state, params, g, 0.01)
        step = prev - params.weights[0][0, 0]
        prev = params.weights[0][0, 0]
    assert step == pytest.approx(0.01, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=8))
def test_adam_step_opposes_first_moment(gs):
    params = scalar_params(0.0)
    state = nn.AdamState.zeros_like(params)
    for g in gs:
        before = params.weights[0][0, 0]
        params, state = nn.adam_step(state, params, [np.array([[g]]), np.zeros((1, 1))], 0.01)
        m = state.m[0][0, 0]
        delta = params.weights[0][0, 0] - before
        assert state.v[0][0, 0] >= 0
        if state.v[0][0, 0] > 0 and m != 0:
            assert np.sign(delta) == -np.sign(m)


def test_nonfinite_gradient_raises():
    params = scalar_params(0.0)
    state = nn.AdamState.zeros_like(params)
    with pytest.raises(nn.TrainingError):
        nn.adam_step(state, params, [np.array([[np.nan]]), np.zeros((1, 1))], 0.1)


def test_checkpoint_round_trip(tmp_path):
    params = nn.init(cfg(hidden_widths=(7, 5)))
    params = nn.Parameters(params.weights, [b + np.pi for b in params.biases])
    path = tmp_path / "ck.txt"
    nn.save_checkpoint(params, path)
    assert path.read_text().splitlines()[0] == nn.CHECKPOINT_TAG
    back = nn.load_checkpoint(path)
    for a, b in zip(params.flat_list(), back.flat_list()):
        assert np.array_equal(a, b)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.txt"
    path.write_text("hello\n")
    with pytest.raises(ValueError):
        nn.load_checkpoint(path)
