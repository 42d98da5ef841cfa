from __future__ import annotations

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from errors import ConfigError, DimensionError
from numerics import Mlp, central_difference, mlp_apply, relative_error
from policy import (
    GaussianPolicy,
    action_distribution,
    create_policy,
    fisher_vector_product,
    kl_mean,
    kl_mean_grad,
    load_policy,
    log_prob,
    log_prob_grad,
    reparametrized_action,
    reparametrized_backward,
    save_policy,
)


def _constant_policy(mean: float = 0.0, std: float = 1.0) -> GaussianPolicy:
    net = Mlp((1, 1), (np.zeros((1, 1)),), (np.array([mean]),))
    return GaussianPolicy(net, np.array([np.log(std)]))


@pytest.fixture
def policy():
    return create_policy(3, 2, [6], np.random.default_rng(2), init_std=0.7)


@pytest.fixture
def states():
    return np.random.default_rng(9).normal(size=(5, 3))


def test_log_prob_standard_normal_at_mean():
    assert log_prob(_constant_policy(), np.zeros(1), np.zeros(1)) == pytest.approx(-0.9189385, abs=1e-6)


def test_kl_doubling_std():
    value = kl_mean(_constant_policy(std=1.0), _constant_policy(std=2.0), np.zeros((3, 1)))
    assert value == pytest.approx(np.log(2.0) + 1.0 / 8.0 - 0.5, abs=1e-12)
    assert value == pytest.approx(0.3181, abs=1e-4)


def test_kl_of_identical_policies_is_zero(policy, states):
    assert kl_mean(policy, policy, states) == pytest.approx(0.0, abs=1e-15)


def test_kl_needs_states(policy):
    with pytest.raises(DimensionError):
        kl_mean(policy, policy, np.zeros((0, 3)))


def test_new_policy_starts_near_zero_mean(policy, states):
    mean, std = action_distribution(policy, states)
    assert np.max(np.abs(mean)) < 0.1
    assert np.allclose(std, 0.7)


def test_create_policy_rejects_bad_std():
    with pytest.raises(ConfigError):
        create_policy(3, 1, [4], np.random.default_rng(0), init_std=0.0)


def test_deterministic_policy_has_no_density(policy, states):
    deterministic = policy.as_deterministic()
    mean, std = action_distribution(deterministic, states)
    assert np.array_equal(std, np.zeros_like(mean))
    assert np.array_equal(deterministic.sample_action(states[0]), mlp_apply(deterministic.mean_net, states[0]))
    assert np.allclose(deterministic.sample_action(states[0]), mean[0])
    with pytest.raises(ConfigError):
        log_prob(deterministic, states, mean)


def test_stochastic_sampling_needs_generator(policy, states):
    with pytest.raises(ConfigError):
        policy.sample_action(states[0])


def test_sampling_reproducible(policy, states):
    first = policy.sample_action(states, np.random.default_rng(1))
    second = policy.sample_action(states, np.random.default_rng(1))
    assert np.array_equal(first, second)


def test_reparametrized_action_shape_check(policy, states):
    with pytest.raises(DimensionError):
        reparametrized_action(policy, states, np.zeros((5, 3)))


def test_reparametrized_backward_matches_finite_differences(policy, states):
    zeta = np.random.default_rng(4).normal(size=(5, 2))
    upstream = np.random.default_rng(5).normal(size=(5, 2))

    grad, ds = reparametrized_backward(policy, states, zeta, upstream)
    numeric = central_difference(
        lambda flat: float(np.sum(upstream * reparametrized_action(policy.with_flat(flat), states, zeta))),
        policy.flat,
    )
    numeric_states = central_difference(
        lambda s: float(np.sum(upstream * reparametrized_action(policy, s, zeta))), states
    )
    assert relative_error(grad, numeric) < 1e-6
    assert relative_error(ds, numeric_states) < 1e-6


def test_log_prob_grad_matches_finite_differences(policy, states):
    actions = np.random.default_rng(6).normal(size=(5, 2))
    weights = np.random.default_rng(7).normal(size=5)

    def weighted(flat):
        return float(np.sum(weights * log_prob(policy.with_flat(flat), states, actions)))

    assert relative_error(log_prob_grad(policy, states, actions, weights), central_difference(weighted, policy.flat)) < 1e-6


def test_kl_grad_matches_finite_differences(policy, states):
    shifted = policy.with_flat(policy.flat + 0.05 * np.random.default_rng(8).normal(size=policy.num_params))
    numeric = central_difference(lambda flat: kl_mean(policy, policy.with_flat(flat), states), shifted.flat)
    assert relative_error(kl_mean_grad(policy, shifted, states), numeric) < 1e-6


def test_kl_grad_vanishes_at_old_policy(policy, states):
    assert np.allclose(kl_mean_grad(policy, policy, states), 0.0, atol=1e-12)


def test_fisher_product_is_kl_hessian(policy, states):
    vector = np.random.default_rng(10).normal(size=policy.num_params)
    h = 1e-5
    upper = kl_mean_grad(policy, policy.with_flat(policy.flat + h * vector), states)
    lower = kl_mean_grad(policy, policy.with_flat(policy.flat - h * vector), states)
    numeric = (upper - lower) / (2 * h)
    assert relative_error(fisher_vector_product(policy, states, vector), numeric) < 1e-5


def test_fisher_damping_adds_scaled_vector(policy, states):
    vector = np.ones(policy.num_params)
    plain = fisher_vector_product(policy, states, vector)
    damped = fisher_vector_product(policy, states, vector, damping=0.1)
    assert np.allclose(damped - plain, 0.1 * vector)


def test_fisher_product_is_positive(policy, states):
    vector = np.random.default_rng(11).normal(size=policy.num_params)
    assert vector @ fisher_vector_product(policy, states, vector) > 0.0


def test_with_flat_rejects_wrong_size(policy):
    with pytest.raises(DimensionError):
        policy.with_flat(np.zeros(policy.num_params + 1))


def test_saved_policy_loads_back(tmp_path, policy, states):
    stem = save_policy(tmp_path / "policy", policy, {"env": "pendulum"})
    restored, metadata = load_policy(stem)
    assert metadata["env"] == "pendulum"
    assert np.array_equal(restored.flat, policy.flat)
    assert np.array_equal(action_distribution(restored, states)[0], action_distribution(policy, states)[0])


def test_density_integrates_to_one():
    policy = _constant_policy(mean=0.3, std=0.8)
    grid = np.linspace(0.3 - 8.0, 0.3 + 8.0, 20001)
    density = np.exp(log_prob(policy, np.zeros((grid.size, 1)), grid[:, None]))
    assert np.sum(density) * (grid[1] - grid[0]) == pytest.approx(1.0, abs=1e-8)


def test_score_has_zero_mean_under_the_policy(policy):
    rng = np.random.default_rng(4)
    count = 200_000
    states = rng.normal(size=(count, 3))
    mean = mlp_apply(policy.mean_net, states)
    actions = mean + policy.std * rng.normal(size=mean.shape)
    score = log_prob_grad(policy, states, actions, np.ones(count)) / count
    assert np.allclose(score, 0.0, atol=0.05)


_MEANS = st.lists(st.floats(min_value=-5.0, max_value=5.0), min_size=2, max_size=2)
_LOG_STDS = st.lists(st.floats(min_value=-2.0, max_value=2.0), min_size=2, max_size=2)


@settings(max_examples=1000, deadline=None)
@given(_MEANS, _LOG_STDS, _MEANS, _LOG_STDS)
def test_kl_is_never_negative(mean_old, log_std_old, mean_new, log_std_new):
    def flat(mean, log_std):
        return GaussianPolicy(Mlp((1, 2), (np.zeros((1, 2)),), (np.array(mean),)), np.array(log_std))

    assert kl_mean(flat(mean_old, log_std_old), flat(mean_new, log_std_new), np.zeros((1, 1))) >= -1e-12
