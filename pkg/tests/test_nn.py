"""Network kernel: forward/backward correctness, Adam, Polyak, checkpoint format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import oracles
from touchdoor import nn
from touchdoor.errors import ContractError, TrainingDiverged


def small_net(rng, dims=(3, 4, 2), out_act=nn.TANH):
    return nn.init_params(dims, out_act, rng)


# ------------------------------------------------------------------ forward

def test_forward_zero_params_is_zero():
    p = nn.MlpParams((3, 4, 2), [np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    assert np.array_equal(nn.forward(p, np.ones(3)), np.zeros(2))


def test_forward_identity_single_layer_affine():
    p = nn.MlpParams((1, 1), [np.array([[2.0]])], [np.array([0.5])], output_activation=nn.IDENTITY)
    assert nn.forward(p, np.array([3.0]))[0] == 2.0 * 3.0 + 0.5


def test_forward_tanh_output_bounded():
    rng = np.random.default_rng(0)
    p = small_net(rng, dims=(5, 16, 4))
    for _ in range(50):
        y = nn.forward(p, rng.normal(size=5) * 10.0)
        assert np.all(np.abs(y) <= 1.0)


def test_forward_batch_rows_match_vectors():
    rng = np.random.default_rng(1)
    p = small_net(rng, dims=(4, 8, 3), out_act=nn.IDENTITY)
    xb = rng.normal(size=(6, 4))
    yb = nn.forward(p, xb)
    for k in range(6):
        # gemm and gemv sum in different orders, so agreement is to rounding
        np.testing.assert_allclose(yb[k], nn.forward(p, xb[k]), rtol=1e-13, atol=1e-13)


def test_forward_dim_mismatch_raises():
    p = small_net(np.random.default_rng(2))
    with pytest.raises(ContractError, match="expected 3"):
        nn.forward(p, np.zeros(5))


def test_forward_matches_scalar_loop_oracle():
    rng = np.random.default_rng(3)
    for out_act in (nn.TANH, nn.IDENTITY):
        p = small_net(rng, dims=(3, 5, 4, 2), out_act=out_act)
        x = rng.normal(size=3)
        want = oracles.loop_mlp_forward(p.weights, p.biases, x, out_act)
        np.testing.assert_allclose(nn.forward(p, x), want, rtol=0, atol=1e-14)


# ----------------------------------------------------------------- backward

def test_backward_matches_scalar_chain_rule():
    rng = np.random.default_rng(4)
    for out_act in (nn.TANH, nn.IDENTITY):
        p = small_net(rng, dims=(3, 4, 2), out_act=out_act)
        x = rng.normal(size=3)
        gy = rng.normal(size=2)
        grads, _ = nn.backward(p, x, gy)
        want_w, want_b = oracles.loop_mlp_param_grads(p.weights, p.biases, x, gy, out_act)
        for l in range(p.n_layers):
            np.testing.assert_allclose(grads.weights[l], np.array(want_w[l]), rtol=0, atol=1e-13)
            np.testing.assert_allclose(grads.biases[l], np.array(want_b[l]), rtol=0, atol=1e-13)


def _sample_checked_net(rng, out_act):
    """Net + input with hidden pre-activations clear of the rectifier kink."""
    while True:
        n_hidden = int(rng.integers(1, 3))
        dims = tuple(int(rng.integers(2, 17)) for _ in range(n_hidden + 2))
        p = nn.init_params(dims, out_act, rng)
        x = rng.normal(size=dims[0])
        if oracles.min_hidden_preact_gap(p, x) > 1e-3:
            return p, x


def test_backward_param_grads_match_finite_differences():
    rng = np.random.default_rng(5)
    for trial in range(6):
        out_act = nn.TANH if trial % 2 else nn.IDENTITY
        p, x = _sample_checked_net(rng, out_act)
        gy = rng.normal(size=p.layer_dims[-1])
        grads, _ = nn.backward(p, x, gy)
        fd_w, fd_b = oracles.fd_param_grads(p, x, gy)
        for l in range(p.n_layers):
            assert oracles.rel_err(grads.weights[l], fd_w[l]).max() <= 1e-4
            assert oracles.rel_err(grads.biases[l], fd_b[l]).max() <= 1e-4


def test_backward_input_grad_matches_finite_differences():
    rng = np.random.default_rng(6)
    p, x = _sample_checked_net(rng, nn.TANH)
    gy = rng.normal(size=p.layer_dims[-1])
    _, gx = nn.backward(p, x, gy)
    assert oracles.rel_err(gx, oracles.fd_input_grad(p, x, gy)).max() <= 1e-4


def test_backward_batch_sums_param_grads():
    rng = np.random.default_rng(7)
    p = small_net(rng, dims=(4, 6, 2), out_act=nn.IDENTITY)
    xb = rng.normal(size=(5, 4))
    gyb = rng.normal(size=(5, 2))
    grads, gxb = nn.backward(p, xb, gyb)
    acc_w = [np.zeros_like(w) for w in p.weights]
    acc_b = [np.zeros_like(b) for b in p.biases]
    for k in range(5):
        g, gx = nn.backward(p, xb[k], gyb[k])
        np.testing.assert_allclose(gxb[k], gx, rtol=0, atol=1e-12)
        for l in range(p.n_layers):
            acc_w[l] += g.weights[l]
            acc_b[l] += g.biases[l]
    for l in range(p.n_layers):
        np.testing.assert_allclose(grads.weights[l], acc_w[l], rtol=0, atol=1e-12)
        np.testing.assert_allclose(grads.biases[l], acc_b[l], rtol=0, atol=1e-12)


def test_backward_shape_mismatch_raises():
    p = small_net(np.random.default_rng(8))
    with pytest.raises(ContractError):
        nn.backward(p, np.zeros(3), np.zeros(5))


# --------------------------------------------------------------------- adam

def test_adam_zero_gradient_keeps_params():
    rng = np.random.default_rng(9)
    p = small_net(rng)
    state = nn.init_opt_state(p)
    zero = nn.MlpParams(p.layer_dims, [np.zeros_like(w) for w in p.weights],
                        [np.zeros_like(b) for b in p.biases])
    p2, state2 = nn.optimizer_step(p, zero, state)
    assert state2.step_count == 1
    for l in range(p.n_layers):
        assert np.array_equal(p2.weights[l], p.weights[l])
        assert np.array_equal(p2.biases[l], p.biases[l])


def test_adam_first_step_moves_against_gradient():
    p = nn.MlpParams((1, 1), [np.array([[1.0]])], [np.array([0.0])], output_activation=nn.IDENTITY)
    g = nn.MlpParams((1, 1), [np.array([[2.5]])], [np.array([-0.3])])
    state = nn.init_opt_state(p, step_size=1e-2)
    p2, _ = nn.optimizer_step(p, g, state)
    assert p2.weights[0][0, 0] < 1.0
    assert p2.biases[0][0] > 0.0


def test_adam_matches_scalar_reference_ten_steps():
    p = nn.MlpParams((1, 1), [np.array([[0.7]])], [np.array([0.0])], output_activation=nn.IDENTITY)
    state = nn.init_opt_state(p, step_size=3e-4)
    grads = [0.5, -1.2, 0.3, 0.3, -0.7, 2.0, -0.1, 0.9, -0.4, 0.6]
    got = []
    for g in grads:
        gp = nn.MlpParams((1, 1), [np.array([[g]])], [np.array([0.0])])
        p, state = nn.optimizer_step(p, gp, state)
        got.append(p.weights[0][0, 0])
    want = oracles.scalar_adam_sequence(0.7, grads, 3e-4, 0.9, 0.999, 1e-8)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
    assert state.step_count == len(grads)


def test_adam_nonfinite_gradient_aborts_with_location():
    rng = np.random.default_rng(10)
    p = small_net(rng)
    g = nn.MlpParams(p.layer_dims, [np.zeros_like(w) for w in p.weights],
                     [np.zeros_like(b) for b in p.biases])
    g.weights[1][2, 1] = np.nan
    with pytest.raises(TrainingDiverged, match="layer 1"):
        nn.optimizer_step(p, g, nn.init_opt_state(p))


# ------------------------------------------------------------------- polyak

def test_polyak_endpoints_exact():
    rng = np.random.default_rng(11)
    target, online = small_net(rng), small_net(rng)
    p0 = nn.polyak_blend(target, online, 0.0)
    p1 = nn.polyak_blend(target, online, 1.0)
    for l in range(target.n_layers):
        assert np.array_equal(p0.weights[l], target.weights[l])
        assert np.array_equal(p1.weights[l], online.weights[l])


def test_polyak_default_rate_example():
    target = nn.MlpParams((1, 1), [np.array([[0.0]])], [np.array([0.0])])
    online = nn.MlpParams((1, 1), [np.array([[2.0]])], [np.array([2.0])])
    blended = nn.polyak_blend(target, online, 0.005)
    assert blended.weights[0][0, 0] == 0.01
    assert blended.biases[0][0] == 0.01


@settings(max_examples=100, deadline=None)
@given(tau=st.floats(0.0, 1.0), seed=st.integers(0, 2**31 - 1))
def test_polyak_stays_between_endpoints(tau, seed):
    rng = np.random.default_rng(seed)
    target, online = small_net(rng, dims=(2, 3, 1)), small_net(rng, dims=(2, 3, 1))
    blended = nn.polyak_blend(target, online, tau)
    for l in range(target.n_layers):
        lo = np.minimum(target.weights[l], online.weights[l])
        hi = np.maximum(target.weights[l], online.weights[l])
        # one-ulp slack: a*x + (1-a)*y can round just past an endpoint
        assert np.all(blended.weights[l] >= np.nextafter(lo, -np.inf))
        assert np.all(blended.weights[l] <= np.nextafter(hi, np.inf))


def test_polyak_dim_mismatch_raises():
    rng = np.random.default_rng(12)
    with pytest.raises(ContractError):
        nn.polyak_blend(small_net(rng, dims=(3, 4, 2)), small_net(rng, dims=(3, 5, 2)), 0.5)


# -------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_byte_identical(tmp_path):
    rng = np.random.default_rng(13)
    p = nn.init_params((55, 256, 256, 8), nn.TANH, rng)
    path1 = tmp_path / "a.tdnn"
    path2 = tmp_path / "b.tdnn"
    nn.save_params(p, path1)
    loaded = nn.load_params(path1)
    nn.save_params(loaded, path2)
    assert path1.read_bytes() == path2.read_bytes()
    assert loaded.layer_dims == p.layer_dims
    assert loaded.output_activation == p.output_activation
    for l in range(p.n_layers):
        assert np.array_equal(loaded.weights[l], p.weights[l])
        assert np.array_equal(loaded.biases[l], p.biases[l])


def test_checkpoint_identity_output_tag_preserved(tmp_path):
    rng = np.random.default_rng(14)
    p = nn.init_params((63, 16, 1), nn.IDENTITY, rng)
    nn.save_params(p, tmp_path / "c.tdnn")
    assert nn.load_params(tmp_path / "c.tdnn").output_activation == nn.IDENTITY


def test_checkpoint_header_layout(tmp_path):
    p = nn.MlpParams((2, 3), [np.arange(6, dtype=np.float64).reshape(2, 3)], [np.zeros(3)])
    path = tmp_path / "d.tdnn"
    nn.save_params(p, path)
    blob = path.read_bytes()
    assert blob[:4] == b"TDNN"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:12], "little") == 2
    assert int.from_bytes(blob[12:16], "little") == 2
    assert int.from_bytes(blob[16:20], "little") == 3
    assert blob[20] == 1 and blob[21] == 2  # rectifier hidden, tanh output
    assert len(blob) == 22 + 8 * (6 + 3)


def test_checkpoint_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.tdnn"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(ContractError, match="magic"):
        nn.load_params(path)


# --------------------------------------------------------------------- init

def test_init_bounds_and_reproducibility():
    p1 = nn.init_params((10, 20, 4), nn.TANH, np.random.default_rng(99))
    p2 = nn.init_params((10, 20, 4), nn.TANH, np.random.default_rng(99))
    for l, fan_in in enumerate((10, 20)):
        assert np.max(np.abs(p1.weights[l])) <= 1.0 / np.sqrt(fan_in)
        assert np.array_equal(p1.weights[l], p2.weights[l])
        assert np.array_equal(p1.biases[l], np.zeros_like(p1.biases[l]))
