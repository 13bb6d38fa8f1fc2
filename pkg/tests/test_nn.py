import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from abmprior import nn
from abmprior.errors import DimensionError, NonFiniteError
from abmprior.gradcheck import central_diff, rel_error

from . import oracles


def _random(arch, seed):
    r = np.random.default_rng(seed)
    p = nn.init_params(arch, r)
    return p.with_values(p.values + 0.3 * r.standard_normal(p.values.size)), r


def test_zero_network_outputs_zero():
    arch = nn.Architecture(3, (4, 4), 2)
    p = nn.ParamSet(np.zeros(arch.n_params), arch)
    np.testing.assert_array_equal(nn.forward(p, np.array([1.0, -2.0, 3.0])), np.zeros(2))


def test_identity_network():
    arch = nn.Architecture(2, (2,), 2, first_layer_norm=False)
    v = np.zeros(arch.n_params)
    layers, _ = nn._layout(arch)
    for _, w, _, _, _ in layers:
        v[w] = np.eye(2).ravel()
    out = nn.forward(nn.ParamSet(v, arch), np.array([1.0, 2.0]))
    np.testing.assert_array_equal(out, [1.0, 2.0])


@pytest.mark.parametrize("ln", [True, False])
@pytest.mark.parametrize("widths", [(5,), (4, 3), (6, 5, 4)])
def test_forward_matches_loop_oracle(widths, ln):
    arch = nn.Architecture(3, widths, 2, first_layer_norm=ln)
    p, r = _random(arch, 7)
    x = r.standard_normal((5, 3))
    ref = oracles.mlp_forward(p.values, 3, widths, 2, x, layer_norm=ln)
    np.testing.assert_allclose(nn.forward(p, x), ref, rtol=0, atol=1e-12)


def test_single_vector_input_shape():
    arch = nn.Architecture(3, (4,), 2)
    p, _ = _random(arch, 0)
    x = np.array([0.1, 0.2, 0.3])
    assert nn.forward(p, x).shape == (2,)
    np.testing.assert_array_equal(nn.forward(p, x), nn.forward(p, x[None])[0])


def test_forward_rejects_wrong_width():
    p, _ = _random(nn.Architecture(3, (4,), 2), 0)
    with pytest.raises(DimensionError):
        nn.forward(p, np.zeros(4))


def test_backward_constant_network():
    arch = nn.Architecture(3, (4,), 2, first_layer_norm=False)
    p = nn.ParamSet(np.zeros(arch.n_params), arch)
    up = np.array([0.7, -1.3])
    g, gx = nn.backward(p, np.array([0.5, 0.0, -1.0]), up)
    layers, _ = nn._layout(arch)
    np.testing.assert_array_equal(g[layers[-1][2]], up)
    # hidden activations are elu(0) = 0, so output weights see zero inputs
    np.testing.assert_array_equal(g[layers[-1][1]], 0.0)
    np.testing.assert_array_equal(gx, 0.0)


def test_backward_zero_upstream():
    p, r = _random(nn.Architecture(3, (4, 4), 2), 3)
    g, gx = nn.backward(p, r.standard_normal((6, 3)), np.zeros((6, 2)))
    assert not g.any() and not gx.any()


@given(seed=st.integers(0, 10_000), ln=st.booleans(), batch=st.integers(1, 4))
def test_backward_matches_finite_differences(seed, ln, batch):
    arch = nn.Architecture(3, (4, 3), 2, first_layer_norm=ln)
    p, r = _random(arch, seed)
    x = r.standard_normal((batch, 3))
    up = r.standard_normal((batch, 2))
    g, gx = nn.backward(p, x, up)
    fp = central_diff(lambda v: float(np.sum(nn.forward(p.with_values(v), x) * up)), p.values)
    fx = central_diff(lambda xx: float(np.sum(nn.forward(p, xx) * up)), x)
    assert rel_error(g, fp) < 1e-4
    assert rel_error(gx, fx) < 1e-4


@given(d_in=st.integers(1, 6), widths=st.lists(st.integers(1, 6), min_size=1, max_size=3),
       d_out=st.integers(1, 4), ln=st.booleans())
def test_param_count_formula(d_in, widths, d_out, ln):
    arch = nn.Architecture(d_in, widths, d_out, first_layer_norm=ln)
    dims = [d_in, *widths, d_out]
    expected = sum(a * b + b for a, b in zip(dims[:-1], dims[1:])) + (2 * widths[0] if ln else 0)
    assert arch.n_params == expected


def test_forward_is_deterministic():
    p, r = _random(nn.Architecture(3, (8, 8), 2), 5)
    x = r.standard_normal((10, 3))
    assert nn.forward(p, x).tobytes() == nn.forward(p, x.copy()).tobytes()


def test_init_is_fan_in_uniform_with_zero_biases():
    arch = nn.Architecture(16, (32,), 4)
    p = nn.init_params(arch, np.random.default_rng(0))
    layers, _ = nn._layout(arch)
    (s0, w0, b0, g0, be0), (s1, w1, b1, _, _) = layers
    assert np.abs(p.values[w0]).max() <= 1 / np.sqrt(16)
    assert np.abs(p.values[w1]).max() <= 1 / np.sqrt(32)
    assert not p.values[b0].any() and not p.values[b1].any()
    np.testing.assert_array_equal(p.values[g0], 1.0)
    np.testing.assert_array_equal(p.values[be0], 0.0)


def test_architecture_validation():
    with pytest.raises(ValueError):
        nn.Architecture(3, (), 2)
    with pytest.raises(ValueError):
        nn.Architecture(3, (4,), 0)
    with pytest.raises(ValueError):
        nn.Architecture(3, (4,), 2, activation="relu")


def test_adam_zero_grad_keeps_params():
    p, _ = _random(nn.Architecture(2, (3,), 1), 0)
    q, s = nn.adam_step(nn.AdamState.zeros(p.arch.n_params), p, np.zeros(p.arch.n_params))
    np.testing.assert_array_equal(q.values, p.values)
    assert s.step_count == 1


@given(g=st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
def test_adam_first_step_has_magnitude_lr(g):
    x, s = nn.adam_update(nn.AdamState.zeros(1, learning_rate=0.01), np.array([0.5]), np.array([g]))
    step = 0.5 - x[0]
    assert np.sign(step) == np.sign(g)
    assert abs(abs(step) - 0.01 * abs(g) / (abs(g) + 1e-8)) < 1e-15


def test_adam_matches_hand_trace():
    grads = [np.array([0.3, -2.0]), np.array([0.3, -2.0]), np.array([-1.0, 0.5])]
    s = nn.AdamState.zeros(2, learning_rate=0.1)
    x = np.array([1.0, -1.0])
    for g in grads:
        x, s = nn.adam_update(s, x, g)
    np.testing.assert_allclose(x, oracles.adam_trace([1.0, -1.0], grads, 0.1), rtol=0, atol=1e-15)
    assert s.step_count == 3


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteError, match="non-finite"):
        nn.adam_update(nn.AdamState.zeros(2), np.zeros(2), np.array([0.0, np.nan]))
    with pytest.raises(DimensionError):
        nn.adam_update(nn.AdamState.zeros(2), np.zeros(3), np.zeros(3))


def test_checkpoint_round_trip(tmp_path):
    p, _ = _random(nn.Architecture(4, (5, 6), 3, first_layer_norm=True), 11)
    nn.save_params(tmp_path / "p.ckpt", p)
    q = nn.load_params(tmp_path / "p.ckpt")
    assert q.arch == p.arch
    assert q.values.tobytes() == p.values.tobytes()
    first = (tmp_path / "p.ckpt").read_bytes().split(b"\n", 1)[0]
    assert b"layer_widths" in first


def test_checkpoint_truncated(tmp_path):
    p, _ = _random(nn.Architecture(2, (3,), 1), 0)
    nn.save_params(tmp_path / "p.ckpt", p)
    raw = (tmp_path / "p.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        nn.load_params(tmp_path / "bad.ckpt")
