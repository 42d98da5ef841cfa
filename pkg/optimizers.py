from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

import console
from dynamics import ModelEnsemble, predict_next_backward
from environments import EnvSpec
from errors import ConfigError, DimensionError, NonFiniteError
from numerics import AdamState, GradientBundle, adam_step, clip_by_global_norm
from policy import (
    GaussianPolicy,
    fisher_vector_product,
    kl_mean,
    log_prob,
    log_prob_grad,
    reparametrized_backward,
)
from rollout import StepTape, TrajectoryBatch, simulate

OPTIMIZERS: tuple[str, ...] = ("bptt", "vpg", "trpo")
ADVANTAGE_EPSILON = 1e-8


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "trpo"
    step_size: float = 0.01
    batch_size: int = 10000
    bptt_learning_rate: float = 1e-3
    vpg_learning_rate: float = 1e-2
    clip_norm: float = 10.0
    discount: float = 0.99
    cg_iterations: int = 10
    cg_damping: float = 0.1
    backtrack_ratio: float = 0.5
    max_backtracks: int = 10
    bptt_deterministic: bool = False

    def validate(self, horizon: int | None = None) -> "OptimizerConfig":
        if self.kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer '{self.kind}' (known: {', '.join(OPTIMIZERS)})")
        if self.step_size <= 0:
            raise ConfigError(f"trust-region step size must be positive, got {self.step_size}")
        if horizon is not None and self.batch_size < horizon:
            raise ConfigError(f"fictitious batch of {self.batch_size} steps is shorter than the horizon {horizon}")
        if min(self.bptt_learning_rate, self.vpg_learning_rate, self.clip_norm) <= 0:
            raise ConfigError("learning rates and clip_norm must be positive")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError(f"discount must be in (0, 1], got {self.discount}")
        if self.cg_iterations < 1 or self.max_backtracks < 1 or self.cg_damping < 0:
            raise ConfigError("conjugate-gradient and line-search settings are out of range")
        if not 0.0 < self.backtrack_ratio < 1.0:
            raise ConfigError(f"backtrack_ratio must be in (0, 1), got {self.backtrack_ratio}")
        return self

    @property
    def learning_rate(self) -> float:
        return self.vpg_learning_rate if self.kind == "vpg" else self.bptt_learning_rate

    def trajectories_per_batch(self, horizon: int) -> int:
        return max(1, self.batch_size // horizon)


@dataclass(frozen=True)
class UpdateDiagnostics:
    optimizer: str
    surrogate: float = math.nan
    kl: float = math.nan
    grad_norm: float = math.nan
    line_search_steps: int = 0
    batch_return: float = math.nan
    accepted: bool = True


@dataclass(frozen=True, eq=False)
class UpdateResult:
    policy: GaussianPolicy
    adam_state: AdamState | None
    diagnostics: UpdateDiagnostics
    batch: TrajectoryBatch | None = field(default=None, repr=False)


def new_adam_state(policy: GaussianPolicy, cfg: OptimizerConfig) -> AdamState | None:
    if cfg.kind == "trpo":
        return None
    return AdamState.zeros(policy.num_params, learning_rate=cfg.learning_rate)


def _ascend(policy: GaussianPolicy, state: AdamState, grad: np.ndarray, clip_norm: float) -> tuple[GaussianPolicy, AdamState, float]:
    bundle = GradientBundle((grad,))
    norm = bundle.global_norm
    clipped = clip_by_global_norm(bundle, clip_norm) if math.isfinite(norm) else bundle
    if not np.all(np.isfinite(clipped.flat)):
        raise NonFiniteError(f"policy gradient is not finite (norm {norm})")
    # Adam descends; ascend the objective through its negation
    params, state = adam_step(state, policy.flat, -clipped.flat)
    return policy.with_flat(params), state, norm


def bptt_gradient(env: EnvSpec, policy: GaussianPolicy, batch: TrajectoryBatch, tape: list[StepTape], ensemble: ModelEnsemble) -> np.ndarray:
    """Gradient of the mean simulated return w.r.t. the policy parameters, noises held fixed."""
    count = batch.num_trajectories
    grad = np.zeros(policy.num_params)
    state_grad = np.zeros((count, env.state_dim))
    for t in range(len(tape) - 1, -1, -1):
        step = tape[t]
        upstream = np.where(step.propagated[:, None], state_grad, 0.0)
        ds = np.zeros_like(state_grad)
        da = np.zeros((count, env.action_dim))
        for index, rows, cache in step.member_caches:
            member_upstream = step.weights[index, rows] * upstream[rows]
            ds_k, da_k = predict_next_backward(ensemble[index], cache, member_upstream)
            ds[rows] += ds_k
            da[rows] += da_k

        clipped = env.clip_action(step.actions)
        reward_ds, reward_da = env.reward_grad(step.states, clipped)
        live = step.alive[:, None]
        ds += np.where(live, reward_ds, 0.0)
        da += np.where(live, reward_da, 0.0)
        da = np.where(step.clip_mask, da, 0.0)

        theta_grad, policy_ds = reparametrized_backward(policy, step.states, step.noise, da, step.policy_cache)
        grad += theta_grad
        state_grad = ds + policy_ds
    return grad / count


def bptt_update(
    env: EnvSpec,
    ensemble: ModelEnsemble,
    policy: GaussianPolicy,
    init_states,
    cfg: OptimizerConfig,
    adam_state: AdamState,
    rng: np.random.Generator,
    mode: str = "one_model",
    member: int = 0,
    horizon: int | None = None,
) -> UpdateResult:
    horizon = env.horizon if horizon is None else horizon
    rollout_policy = policy.as_deterministic(True) if cfg.bptt_deterministic else policy
    batch, tape = simulate(env, ensemble, rollout_policy, init_states, horizon, mode, rng, member, record_tape=True)
    grad = bptt_gradient(env, rollout_policy, batch, tape, ensemble)
    if cfg.bptt_deterministic:
        grad[policy.mean_net.num_params:] = 0.0
    updated, adam_state, norm = _ascend(policy, adam_state, grad, cfg.clip_norm)
    batch_return = float(np.mean(batch.returns()))
    diagnostics = UpdateDiagnostics("bptt", grad_norm=norm, batch_return=batch_return)
    return UpdateResult(updated, adam_state, diagnostics, batch)


def reward_to_go(rewards, discount: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    result = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[:-1])
    for t in range(rewards.shape[-1] - 1, -1, -1):
        running = rewards[..., t] + discount * running
        result[..., t] = running
    return result


def compute_advantages(batch: TrajectoryBatch, discount: float, standardize: bool = True) -> np.ndarray:
    """Reward-to-go minus the per-timestep batch mean, shaped like ``batch.rewards``.

    Entries outside ``batch.valid`` are zero.
    """
    valid = batch.valid
    to_go = reward_to_go(np.where(valid, batch.rewards, 0.0), discount)
    counts = np.maximum(valid.sum(axis=0), 1)
    baseline = np.sum(np.where(valid, to_go, 0.0), axis=0) / counts
    advantages = np.where(valid, to_go - baseline, 0.0)
    if standardize and np.any(valid):
        values = advantages[valid]
        advantages = np.where(valid, (advantages - values.mean()) / (values.std() + ADVANTAGE_EPSILON), 0.0)
    return advantages


def vpg_update(
    policy: GaussianPolicy,
    batch: TrajectoryBatch,
    cfg: OptimizerConfig,
    adam_state: AdamState,
    advantages: np.ndarray | None = None,
) -> UpdateResult:
    if advantages is None:
        advantages = compute_advantages(batch, cfg.discount)
    states, actions = batch.flat_steps()
    weights = advantages[batch.valid]
    grad = log_prob_grad(policy, states, actions, weights) / max(len(weights), 1)
    updated, adam_state, norm = _ascend(policy, adam_state, grad, cfg.clip_norm)
    batch_return = float(np.mean(batch.returns()))
    diagnostics = UpdateDiagnostics("vpg", grad_norm=norm, batch_return=batch_return)
    return UpdateResult(updated, adam_state, diagnostics, batch)


def conjugate_gradient(
    matvec: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    iterations: int = 10,
    tolerance: float = 1e-10,
) -> np.ndarray:
    """Approximately solve ``A x = b`` for symmetric positive-definite ``A``.

    Stops early on a small residual or when the curvature along the search
    direction is not positive.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    residual = b.copy()
    direction = b.copy()
    residual_sq = float(residual @ residual)
    for _ in range(iterations):
        if residual_sq < tolerance:
            break
        product = matvec(direction)
        curvature = float(direction @ product)
        if not curvature > 0.0:
            break
        alpha = residual_sq / curvature
        x = x + alpha * direction
        residual = residual - alpha * product
        updated_sq = float(residual @ residual)
        direction = residual + (updated_sq / residual_sq) * direction
        residual_sq = updated_sq
    return x


def _surrogate(policy: GaussianPolicy, states: np.ndarray, actions: np.ndarray, weights: np.ndarray, old_log_prob: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(log_prob(policy, states, actions) - old_log_prob)
        return float(np.mean(ratio * weights))


def trpo_update(
    policy: GaussianPolicy,
    batch: TrajectoryBatch,
    cfg: OptimizerConfig,
    advantages: np.ndarray | None = None,
    step_size: float | None = None,
) -> UpdateResult:
    """Natural-gradient step on the importance-weighted surrogate inside a mean-KL trust region."""
    step_size = cfg.step_size if step_size is None else step_size
    if advantages is None:
        advantages = compute_advantages(batch, cfg.discount)
    states, actions = batch.flat_steps()
    if states.shape[0] == 0:
        raise DimensionError("trpo_update needs at least one valid step")
    weights = advantages[batch.valid]
    batch_return = float(np.mean(batch.returns()))
    old_log_prob = log_prob(policy, states, actions)
    baseline = float(np.mean(weights))

    grad = log_prob_grad(policy, states, actions, weights) / len(weights)
    grad_norm = float(np.linalg.norm(grad))
    rejected = UpdateDiagnostics("trpo", 0.0, 0.0, grad_norm, 0, batch_return, accepted=False)
    if not math.isfinite(grad_norm):
        console.warn("trpo: non-finite surrogate gradient, keeping parameters")
        return UpdateResult(policy, None, rejected, batch)
    if grad_norm == 0.0:
        return UpdateResult(policy, None, rejected, batch)

    def fvp(vector: np.ndarray) -> np.ndarray:
        return fisher_vector_product(policy, states, vector, cfg.cg_damping)

    with np.errstate(over="ignore", invalid="ignore"):
        direction = conjugate_gradient(fvp, grad, cfg.cg_iterations)
        curvature = float(direction @ fvp(direction))
    if not (np.all(np.isfinite(direction)) and math.isfinite(curvature) and curvature > 0.0):
        console.warn("trpo: conjugate gradient did not converge, keeping parameters")
        return UpdateResult(policy, None, rejected, batch)

    full_step = math.sqrt(2.0 * step_size / curvature) * direction
    theta = policy.flat
    # the full step, then max_backtracks halvings of it
    for attempt in range(cfg.max_backtracks + 1):
        fraction = cfg.backtrack_ratio ** attempt
        candidate = policy.with_flat(theta + fraction * full_step)
        improvement = _surrogate(candidate, states, actions, weights, old_log_prob) - baseline
        with np.errstate(over="ignore", invalid="ignore"):
            kl = kl_mean(policy, candidate, states)
        if math.isfinite(improvement) and math.isfinite(kl) and improvement > 0.0 and kl <= step_size:
            diagnostics = UpdateDiagnostics("trpo", improvement, kl, grad_norm, attempt + 1, batch_return)
            return UpdateResult(candidate, None, diagnostics, batch)

    rejected = UpdateDiagnostics("trpo", 0.0, 0.0, grad_norm, cfg.max_backtracks + 1, batch_return, accepted=False)
    return UpdateResult(policy, None, rejected, batch)


def improve_policy(
    env: EnvSpec,
    ensemble: ModelEnsemble,
    policy: GaussianPolicy,
    init_states,
    cfg: OptimizerConfig,
    adam_state: AdamState | None,
    rng: np.random.Generator,
    mode: str,
    member: int = 0,
) -> UpdateResult:
    """One inner update of the configured optimizer on fresh fictitious rollouts."""
    if cfg.kind == "bptt":
        return bptt_update(env, ensemble, policy, init_states, cfg, adam_state, rng, mode, member)
    batch, _ = simulate(env, ensemble, policy, init_states, env.horizon, mode, rng, member)
    if cfg.kind == "vpg":
        return vpg_update(policy, batch, cfg, adam_state)
    return trpo_update(policy, batch, cfg)
