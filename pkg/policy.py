from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from errors import ConfigError, DimensionError, ensure_finite
from numerics import (
    ForwardCache,
    Mlp,
    create_mlp,
    load_checkpoint,
    mlp_apply,
    mlp_arrays,
    mlp_backward,
    mlp_forward,
    mlp_from_arrays,
    mlp_jvp,
    mlp_metadata,
    save_checkpoint,
)

LOG_2PI = float(np.log(2.0 * np.pi))
POLICY_OUTPUT_SCALE = 0.01


@dataclass(frozen=True, eq=False)
class GaussianPolicy:
    """Diagonal Gaussian ``N(mean_net(s), exp(log_std)^2)`` with a state-independent std.

    With ``deterministic`` set the std is treated as zero: actions are the mean
    and densities are undefined.
    """

    mean_net: Mlp
    log_std: np.ndarray
    deterministic: bool = False

    def __post_init__(self) -> None:
        log_std = np.array(self.log_std, dtype=np.float64).reshape(-1)
        if log_std.shape != (self.mean_net.output_size,):
            raise DimensionError(f"log_std has {log_std.size} entries, action size is {self.mean_net.output_size}")
        ensure_finite(log_std, "policy log_std")
        log_std.setflags(write=False)
        object.__setattr__(self, "log_std", log_std)

    @property
    def state_dim(self) -> int:
        return self.mean_net.input_size

    @property
    def action_dim(self) -> int:
        return self.mean_net.output_size

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @property
    def num_params(self) -> int:
        return self.mean_net.num_params + self.action_dim

    def shapes(self) -> list[tuple[int, ...]]:
        return self.mean_net.shapes() + [self.log_std.shape]

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.mean_net.flat, self.log_std])

    def with_flat(self, flat: np.ndarray) -> "GaussianPolicy":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise DimensionError(f"policy expects {self.num_params} parameters, got {flat.shape}")
        split = self.mean_net.num_params
        return GaussianPolicy(self.mean_net.with_flat(flat[:split]), flat[split:], self.deterministic)

    def as_deterministic(self, deterministic: bool = True) -> "GaussianPolicy":
        return replace(self, deterministic=deterministic)

    def sample_action(self, s, rng: np.random.Generator | None = None, deterministic: bool = False) -> np.ndarray:
        mean, std = action_distribution(self, s)
        if deterministic or self.deterministic:
            return mean
        if rng is None:
            raise ConfigError("a random generator is required to sample stochastic actions")
        return mean + std * rng.standard_normal(mean.shape)


def create_policy(
    state_dim: int,
    action_dim: int,
    hidden_sizes: Sequence[int],
    rng: np.random.Generator,
    init_std: float = 1.0,
    hidden_activation: str = "tanh",
) -> GaussianPolicy:
    if init_std <= 0:
        raise ConfigError(f"initial policy std must be positive, got {init_std}")
    net = create_mlp(
        [state_dim, *hidden_sizes, action_dim],
        rng,
        hidden_activation=hidden_activation,
        output_activation="identity",
        output_scale=POLICY_OUTPUT_SCALE,
    )
    return GaussianPolicy(net, np.full(action_dim, np.log(init_std)))


def action_distribution(policy: GaussianPolicy, s) -> tuple[np.ndarray, np.ndarray]:
    mean = mlp_apply(policy.mean_net, s)
    ensure_finite(mean, "policy mean")
    if policy.deterministic:
        return mean, np.zeros_like(mean)
    return mean, np.broadcast_to(policy.std, mean.shape).copy()


def reparametrized_action(policy: GaussianPolicy, s, zeta) -> np.ndarray:
    mean, std = action_distribution(policy, s)
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.shape != mean.shape:
        raise DimensionError(f"noise shape {zeta.shape} does not match action shape {mean.shape}")
    return mean + std * zeta


def reparametrized_backward(
    policy: GaussianPolicy,
    s,
    zeta,
    upstream,
    cache: ForwardCache | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``sum(upstream * reparametrized_action(policy, s, zeta))``.

    Returns the flat parameter gradient and the gradient w.r.t. ``s``.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    bundle = mlp_backward(policy.mean_net, s, upstream, cache)
    if policy.deterministic:
        log_std_grad = np.zeros(policy.action_dim)
    else:
        scaled = upstream * policy.std * np.asarray(zeta, dtype=np.float64)
        log_std_grad = scaled.reshape(-1, policy.action_dim).sum(axis=0)
    return np.concatenate([bundle.flat, log_std_grad]), bundle.input_grad


def _require_stochastic(policy: GaussianPolicy) -> None:
    if policy.deterministic:
        raise ConfigError("densities are undefined for a deterministic policy")


def log_prob(policy: GaussianPolicy, s, a):
    _require_stochastic(policy)
    mean = mlp_apply(policy.mean_net, s)
    a = np.asarray(a, dtype=np.float64)
    if a.shape != mean.shape:
        raise DimensionError(f"action shape {a.shape} does not match policy output {mean.shape}")
    z = (a - mean) / policy.std
    value = -0.5 * np.sum(z * z, axis=-1) - np.sum(policy.log_std) - 0.5 * policy.action_dim * LOG_2PI
    return float(value) if np.ndim(value) == 0 else value


def log_prob_grad(policy: GaussianPolicy, states, actions, weights) -> np.ndarray:
    """Flat gradient of ``sum_i weights_i * log_prob(policy, states_i, actions_i)``."""
    _require_stochastic(policy)
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    mean, cache = mlp_forward(policy.mean_net, states)
    variance = policy.std ** 2
    diff = actions - mean
    upstream = weights[:, None] * diff / variance
    bundle = mlp_backward(policy.mean_net, states, upstream, cache)
    log_std_grad = np.sum(weights[:, None] * (diff * diff / variance - 1.0), axis=0)
    return np.concatenate([bundle.flat, log_std_grad])


def _kl_terms(policy_old: GaussianPolicy, policy_new: GaussianPolicy, states) -> tuple[np.ndarray, ...]:
    _require_stochastic(policy_old)
    _require_stochastic(policy_new)
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[0] == 0:
        raise DimensionError("kl_mean needs at least one state")
    mean_old = mlp_apply(policy_old.mean_net, states)
    mean_new, cache = mlp_forward(policy_new.mean_net, states)
    return states, mean_old, mean_new, cache


def kl_mean(policy_old: GaussianPolicy, policy_new: GaussianPolicy, states) -> float:
    """Average of KL(pi_old(.|s) || pi_new(.|s)) over ``states``."""
    states, mean_old, mean_new, _ = _kl_terms(policy_old, policy_new, states)
    var_old = policy_old.std ** 2
    var_new = policy_new.std ** 2
    per_dim = (
        policy_new.log_std
        - policy_old.log_std
        + (var_old + (mean_old - mean_new) ** 2) / (2.0 * var_new)
        - 0.5
    )
    return float(np.mean(np.sum(per_dim, axis=-1)))


def kl_mean_grad(policy_old: GaussianPolicy, policy_new: GaussianPolicy, states) -> np.ndarray:
    """Flat gradient of ``kl_mean`` w.r.t. the parameters of ``policy_new``."""
    states, mean_old, mean_new, cache = _kl_terms(policy_old, policy_new, states)
    count = states.shape[0]
    var_old = policy_old.std ** 2
    var_new = policy_new.std ** 2
    upstream = (mean_new - mean_old) / var_new / count
    bundle = mlp_backward(policy_new.mean_net, states, upstream, cache)
    log_std_grad = np.mean(1.0 - (var_old + (mean_old - mean_new) ** 2) / var_new, axis=0)
    return np.concatenate([bundle.flat, log_std_grad])


def fisher_vector_product(policy: GaussianPolicy, states, vector: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """Hessian of ``kl_mean(policy, .)`` at ``policy`` times ``vector``, plus ``damping * vector``.

    For a diagonal Gaussian with state-independent std the Hessian is
    ``mean_s J(s)^T diag(1/sigma^2) J(s)`` on the mean parameters and ``2 I`` on
    ``log_std``.
    """
    _require_stochastic(policy)
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    vector = np.asarray(vector, dtype=np.float64)
    split = policy.mean_net.num_params
    _, jv = mlp_jvp(policy.mean_net, states, vector[:split])
    upstream = jv / policy.std ** 2 / states.shape[0]
    mean_part = mlp_backward(policy.mean_net, states, upstream).flat
    product = np.concatenate([mean_part, 2.0 * vector[split:]])
    return product + damping * vector


def save_policy(path: Path | str, policy: GaussianPolicy, metadata: dict[str, object] | None = None) -> Path:
    arrays = mlp_arrays(policy.mean_net, "mean_net")
    arrays["log_std"] = policy.log_std
    meta = {"mean_net": mlp_metadata(policy.mean_net), "kind": "gaussian_policy"}
    meta.update(metadata or {})
    return save_checkpoint(path, arrays, meta)


def load_policy(path: Path | str) -> tuple[GaussianPolicy, dict[str, object]]:
    arrays, metadata = load_checkpoint(path)
    net = mlp_from_arrays(arrays, "mean_net", metadata["mean_net"])
    return GaussianPolicy(net, arrays["log_std"]), metadata
