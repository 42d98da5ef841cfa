from __future__ import annotations

import json

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from errors import CheckpointError, ConfigError, DimensionError, NonFiniteError
from numerics import (
    AdamState,
    GradientBundle,
    Mlp,
    adam_step,
    central_difference,
    clip_by_global_norm,
    create_mlp,
    load_checkpoint,
    mlp_apply,
    mlp_arrays,
    mlp_backward,
    mlp_forward,
    mlp_from_arrays,
    mlp_jvp,
    mlp_metadata,
    relative_error,
    save_checkpoint,
)


def _loop_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    h = list(x)
    for index, (weight, bias) in enumerate(zip(net.weights, net.biases)):
        out = []
        for j in range(weight.shape[1]):
            z = bias[j] + sum(h[i] * weight[i, j] for i in range(weight.shape[0]))
            if index < net.num_layers - 1:
                z = np.tanh(z)
            out.append(z)
        h = out
    return np.array(h)


def test_zero_network_outputs_zero():
    net = Mlp((3, 4, 2), (np.zeros((3, 4)), np.zeros((4, 2))), (np.zeros(4), np.zeros(2)))
    assert np.array_equal(mlp_apply(net, np.array([1.0, -2.0, 0.5])), np.zeros(2))


def test_identity_layer_returns_input():
    net = Mlp((2, 2), (np.eye(2),), (np.zeros(2),))
    assert np.allclose(mlp_apply(net, np.array([1.0, -2.0])), [1.0, -2.0])


def test_forward_matches_explicit_loops(rng):
    net = create_mlp([3, 5, 4, 2], rng)
    x = rng.normal(size=3)
    assert np.allclose(mlp_apply(net, x), _loop_forward(net, x), atol=1e-12)


def test_batched_forward_matches_rows(rng):
    net = create_mlp([3, 6, 2], rng, hidden_activation="relu")
    xs = rng.normal(size=(7, 3))
    batched = mlp_apply(net, xs)
    for row, x in zip(batched, xs):
        assert np.allclose(row, mlp_apply(net, x), atol=1e-12)


def test_forward_is_pure(rng):
    net = create_mlp([2, 8, 1], rng)
    x = rng.normal(size=(4, 2))
    assert np.array_equal(mlp_apply(net, x), mlp_apply(net, x))


def test_wrong_input_size_raises(rng):
    net = create_mlp([3, 4, 1], rng)
    with pytest.raises(DimensionError):
        mlp_apply(net, np.zeros(2))


def test_non_finite_parameters_rejected():
    with pytest.raises(NonFiniteError):
        Mlp((1, 1), (np.array([[np.nan]]),), (np.zeros(1),))


def test_unknown_activation_rejected(rng):
    with pytest.raises(ConfigError):
        create_mlp([2, 2, 1], rng, hidden_activation="sigmoid")


def test_create_mlp_zero_biases_and_output_scale():
    full = create_mlp([4, 8, 2], np.random.default_rng(5))
    scaled = create_mlp([4, 8, 2], np.random.default_rng(5), output_scale=0.01)
    assert all(np.array_equal(b, np.zeros_like(b)) for b in full.biases)
    assert np.allclose(scaled.weights[-1], 0.01 * full.weights[-1])
    assert np.array_equal(scaled.weights[0], full.weights[0])


def test_flat_round_trip_keeps_parameters(rng):
    net = create_mlp([3, 4, 2], rng)
    rebuilt = net.with_flat(net.flat)
    assert np.array_equal(rebuilt.flat, net.flat)
    assert rebuilt.num_params == 3 * 4 + 4 + 4 * 2 + 2


def test_backward_of_zero_upstream_is_zero(rng):
    net = create_mlp([3, 4, 2], rng)
    grads = mlp_backward(net, rng.normal(size=3), np.zeros(2))
    assert np.array_equal(grads.flat, np.zeros(net.num_params))
    assert np.array_equal(grads.input_grad, np.zeros(3))


def test_backward_scalar_linear_layer():
    net = Mlp((1, 1), (np.array([[3.0]]),), (np.zeros(1),))
    grads = mlp_backward(net, np.array([2.0]), np.array([1.0]))
    assert np.allclose(grads.params[0], [[2.0]])
    assert np.allclose(grads.params[1], [1.0])
    assert np.allclose(grads.input_grad, [3.0])


@pytest.mark.parametrize("seed", range(100))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = create_mlp([3, 6, 5, 2], rng)
    x = rng.normal(size=(4, 3))
    upstream = rng.normal(size=(4, 2))

    def loss(flat):
        return float(np.sum(upstream * mlp_apply(net.with_flat(flat), x)))

    grads = mlp_backward(net, x, upstream)
    numeric = central_difference(loss, net.flat)
    assert relative_error(grads.flat, numeric) < 1e-6

    numeric_input = central_difference(lambda z: float(np.sum(upstream * mlp_apply(net, z))), x)
    assert relative_error(grads.input_grad, numeric_input) < 1e-6


def test_backward_reuses_forward_cache(rng):
    net = create_mlp([2, 4, 1], rng)
    x = rng.normal(size=(3, 2))
    upstream = np.ones((3, 1))
    _, cache = mlp_forward(net, x)
    assert np.array_equal(mlp_backward(net, x, upstream, cache).flat, mlp_backward(net, x, upstream).flat)


def test_jvp_matches_finite_differences(rng):
    net = create_mlp([3, 5, 2], rng)
    x = rng.normal(size=(2, 3))
    tangent = rng.normal(size=net.num_params)
    output, derivative = mlp_jvp(net, x, tangent)
    h = 1e-6
    numeric = (mlp_apply(net.with_flat(net.flat + h * tangent), x)
               - mlp_apply(net.with_flat(net.flat - h * tangent), x)) / (2 * h)
    assert np.allclose(output, mlp_apply(net, x))
    assert relative_error(derivative, numeric) < 1e-6


def test_adam_first_step_moves_by_learning_rate():
    state = AdamState.zeros(1, learning_rate=1e-3)
    params, state = adam_step(state, np.array([0.0]), np.array([0.5]))
    assert params[0] == pytest.approx(-0.001, rel=1e-6)
    assert state.step_count == 1


def test_adam_zero_gradient_keeps_parameters():
    params = np.array([1.0, -2.0, 3.0])
    updated, _ = adam_step(AdamState.zeros(3), params, np.zeros(3))
    assert np.array_equal(updated, params)


def test_adam_second_step_matches_hand_computation():
    state = AdamState.zeros(1, learning_rate=0.1)
    params, state = adam_step(state, np.array([1.0]), np.array([2.0]))
    params, state = adam_step(state, params, np.array([-1.0]))
    first = 0.9 * 0.1 * 2.0 + 0.1 * -1.0
    second = 0.999 * 0.001 * 4.0 + 0.001 * 1.0
    expected_step = 0.1 * (first / (1 - 0.9 ** 2)) / (np.sqrt(second / (1 - 0.999 ** 2)) + 1e-8)
    assert params[0] == pytest.approx(1.0 - 0.1 - expected_step, rel=1e-6)
    assert state.step_count == 2


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(NonFiniteError):
        adam_step(AdamState.zeros(2), np.zeros(2), np.array([1.0, np.inf]))


def test_adam_rejects_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step(AdamState.zeros(2), np.zeros(3), np.zeros(3))


def test_clip_leaves_small_gradients_alone():
    bundle = GradientBundle((np.array([3.0, 4.0]),))
    assert clip_by_global_norm(bundle, 10.0) is bundle


def test_clip_rescales_large_gradients():
    clipped = clip_by_global_norm(GradientBundle((np.array([30.0, 40.0]),)), 10.0)
    assert np.allclose(clipped.flat, [6.0, 8.0])


def test_clip_zero_gradient():
    clipped = clip_by_global_norm(GradientBundle((np.zeros(3),)), 1.0)
    assert np.array_equal(clipped.flat, np.zeros(3))


def test_clip_rejects_non_positive_norm():
    with pytest.raises(ConfigError):
        clip_by_global_norm(GradientBundle((np.ones(2),)), 0.0)


@settings(deadline=None)
@given(
    st.lists(st.floats(min_value=-1e3, max_value=1e3, allow_nan=False), min_size=1, max_size=8),
    st.floats(min_value=1e-3, max_value=100.0),
)
def test_clip_bounds_norm_and_keeps_direction(values, max_norm):
    bundle = GradientBundle((np.array(values),))
    clipped = clip_by_global_norm(bundle, max_norm)
    assert clipped.global_norm <= max_norm * (1 + 1e-12) or clipped is bundle
    if bundle.global_norm > 1e-6:
        cosine = clipped.flat @ bundle.flat / (clipped.global_norm * bundle.global_norm)
        assert cosine == pytest.approx(1.0)


def test_global_norm_covers_all_pieces():
    bundle = GradientBundle((np.array([[1.0, 2.0]]), np.array([2.0])))
    assert bundle.global_norm == pytest.approx(3.0)


def test_checkpoint_preserves_network(tmp_path, rng):
    net = create_mlp([3, 4, 2], rng, hidden_activation="relu")
    stem = save_checkpoint(tmp_path / "net", mlp_arrays(net, "model"), {"model": mlp_metadata(net), "seed": 7})
    arrays, metadata = load_checkpoint(stem)
    restored = mlp_from_arrays(arrays, "model", metadata["model"])
    assert metadata["seed"] == 7
    assert restored.hidden_activation == "relu"
    assert np.array_equal(restored.flat, net.flat)


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent")


def test_checkpoint_wrong_format(tmp_path):
    stem = save_checkpoint(tmp_path / "ck", {"a": np.ones(2)})
    manifest = json.loads(stem.with_suffix(".json").read_text())
    manifest["format"] = "something-else"
    stem.with_suffix(".json").write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError):
        load_checkpoint(stem)


def test_checkpoint_truncated_blob(tmp_path):
    stem = save_checkpoint(tmp_path / "ck", {"a": np.ones(4)})
    stem.with_suffix(".bin").write_bytes(stem.with_suffix(".bin").read_bytes()[:8])
    with pytest.raises(CheckpointError):
        load_checkpoint(stem)
