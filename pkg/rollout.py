from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

import console
from dynamics import (
    Dataset,
    DynamicsModel,
    Episode,
    ModelEnsemble,
    PredictionCache,
    predict_next_with_cache,
)
from environments import EnvSpec, run_episode, sample_initial_states
from errors import ConfigError, DatasetError, DimensionError
from numerics import ForwardCache, mlp_apply, mlp_forward
from policy import GaussianPolicy

SAMPLING_MODES: tuple[str, ...] = (
    "step_rand",
    "model_mean_std",
    "model_mean",
    "model_med",
    "eps_rand",
    "one_model",
)
SINGLE_MEMBER_MODES: tuple[str, ...] = ("step_rand", "eps_rand", "one_model")
VALIDATION_SHARE = 1.0 / 3.0


@dataclass(frozen=True)
class ExplorationConfig:
    std_low: float = 0.0
    std_high: float = 3.0
    param_noise_scale: float = 1.0
    timesteps_per_iteration: int = 3000

    def __post_init__(self) -> None:
        if self.std_low < 0 or self.std_high < self.std_low:
            raise ConfigError(f"exploration std range [{self.std_low}, {self.std_high}] is invalid")
        if self.param_noise_scale < 0:
            raise ConfigError("param_noise_scale must be non-negative")
        if self.timesteps_per_iteration < 1:
            raise ConfigError("timesteps_per_iteration must be positive")


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Simulated or real trajectories.

    ``states`` holds ``horizon + 1`` states per trajectory; ``model_indices``
    is -1 for steps produced by an aggregate of the ensemble; ``valid`` masks
    steps after a trajectory was truncated.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    noises: np.ndarray
    model_indices: np.ndarray
    valid: np.ndarray

    @property
    def num_trajectories(self) -> int:
        return int(self.rewards.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.rewards.shape[1])

    @property
    def num_steps(self) -> int:
        return int(np.count_nonzero(self.valid))

    def returns(self) -> np.ndarray:
        return np.sum(np.where(self.valid, self.rewards, 0.0), axis=1)

    def flat_steps(self) -> tuple[np.ndarray, np.ndarray]:
        return self.states[:, :-1][self.valid], self.actions[self.valid]

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode], raw_actions: Sequence[np.ndarray]) -> "TrajectoryBatch":
        states = np.stack([episode.states for episode in episodes])
        actions = np.stack([np.asarray(raw, dtype=np.float64) for raw in raw_actions])
        rewards = np.stack([episode.rewards for episode in episodes])
        shape = rewards.shape
        return cls(
            states,
            actions,
            rewards,
            np.zeros_like(actions),
            np.full(shape, -1, dtype=np.int64),
            np.ones(shape, dtype=bool),
        )


@dataclass(eq=False)
class StepTape:
    states: np.ndarray
    noise: np.ndarray
    policy_cache: ForwardCache
    clip_mask: np.ndarray
    actions: np.ndarray
    member_caches: list[tuple[int, np.ndarray, PredictionCache]] = field(default_factory=list)
    weights: np.ndarray | None = None
    alive: np.ndarray | None = None
    propagated: np.ndarray | None = None


def collect_real_samples(
    env: EnvSpec,
    policy: GaussianPolicy,
    explore: ExplorationConfig,
    rng: np.random.Generator,
    previous_policy: GaussianPolicy | None = None,
    first_episode_id: int = 0,
) -> tuple[list[Episode], list[np.ndarray]]:
    """Run whole episodes in the real system until ``timesteps_per_iteration`` steps are collected.

    Each episode draws one exploration std from ``[std_low, std_high]`` and
    perturbs the mean network with Gaussian noise whose per-parameter std is
    ``param_noise_scale * |theta - theta_previous|``. Returns the episodes
    (executed, clipped actions) and the raw actions.
    """
    theta = policy.mean_net.flat
    theta_previous = previous_policy.mean_net.flat if previous_policy is not None else theta
    noise_std = explore.param_noise_scale * np.abs(theta - theta_previous)

    episodes: list[Episode] = []
    raw_actions: list[np.ndarray] = []
    steps = 0
    episode_id = first_episode_id
    while steps < explore.timesteps_per_iteration:
        std = rng.uniform(explore.std_low, explore.std_high)
        net = policy.mean_net.with_flat(theta + noise_std * rng.standard_normal(theta.shape))
        s0 = sample_initial_states(env, 1, rng)[0]

        def act(s, t, net=net, std=std):
            return mlp_apply(net, s) + std * rng.standard_normal(env.action_dim)

        states, raw, rewards = run_episode(env, act, s0)
        episodes.append(Episode(episode_id, states, env.clip_action(raw), rewards))
        raw_actions.append(raw)
        steps += env.horizon
        episode_id += 1
    return episodes, raw_actions


def split_dataset(
    episodes: Sequence[Episode],
    rng: np.random.Generator,
    previous: Dataset | None = None,
) -> Dataset:
    """Extend ``previous`` with the unseen episodes keeping a 2:1 train/validation ratio.

    Episodes already assigned in ``previous`` never change split.
    """
    old_train = previous.train_episodes if previous is not None else ()
    old_validation = previous.validation_episodes if previous is not None else ()
    known = {episode.episode_id for episode in old_train + old_validation}
    fresh = [episode for episode in episodes if episode.episode_id not in known]

    total = len(known) + len(fresh)
    if total < 3:
        raise DatasetError(f"at least 3 episodes are needed for a 2:1 split, got {total}")
    target = int(math.floor(total * VALIDATION_SHARE + 0.5))
    wanted = max(0, min(len(fresh), target - len(old_validation)))
    chosen = set(rng.permutation(len(fresh))[:wanted].tolist())

    new_train = tuple(ep for index, ep in enumerate(fresh) if index not in chosen)
    new_validation = tuple(ep for index, ep in enumerate(fresh) if index in chosen)
    return Dataset(tuple(old_train) + new_train, tuple(old_validation) + new_validation)


def combine_predictions(
    predictions: np.ndarray,
    mode: str,
    picks: np.ndarray,
    xi: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Next state per sampling mode plus per-member weights ``d next / d prediction_k``.

    ``predictions`` is ``(K, N, n)``; for single-member modes only the picked
    rows need to be filled in.
    """
    count, rows, _ = predictions.shape
    index = np.arange(rows)
    if mode in SINGLE_MEMBER_MODES:
        weights = np.zeros_like(predictions)
        weights[picks, index] = 1.0
        return predictions[picks, index], weights

    anchor = predictions[0]
    mean = anchor + np.mean(predictions - anchor, axis=0)
    if mode == "model_mean":
        return mean, np.full_like(predictions, 1.0 / count)

    if mode == "model_med":
        order = np.argsort(predictions, axis=0, kind="stable")
        weights = np.zeros_like(predictions)
        middle = (count - 1) // 2
        if count % 2:
            np.put_along_axis(weights, order[middle:middle + 1], 1.0, axis=0)
        else:
            np.put_along_axis(weights, order[middle:middle + 2], 0.5, axis=0)
        return np.median(predictions, axis=0), weights

    if mode == "model_mean_std":
        if count == 1:
            return mean, np.ones_like(predictions)
        std = np.std(predictions, axis=0, ddof=1)
        safe = np.where(std > 0, std, 1.0)
        spread = xi * (predictions - mean) / ((count - 1) * safe)
        weights = 1.0 / count + np.where(std > 0, spread, 0.0)
        return mean + std * xi, weights

    raise ConfigError(f"unknown sampling mode '{mode}' (known: {', '.join(SAMPLING_MODES)})")


def _as_ensemble(models) -> ModelEnsemble:
    if isinstance(models, ModelEnsemble):
        return models
    if isinstance(models, DynamicsModel):
        return ModelEnsemble((models,))
    return ModelEnsemble(tuple(models))


def simulate(
    env: EnvSpec,
    ensemble: ModelEnsemble,
    policy: GaussianPolicy,
    init_states,
    horizon: int,
    mode: str,
    rng: np.random.Generator,
    member: int = 0,
    record_tape: bool = False,
) -> tuple[TrajectoryBatch, list[StepTape]]:
    """Fictitious rollouts through the ensemble.

    The generator is consumed identically in every mode: one member pick per
    trajectory up front, then per step the action noise, a member pick per
    trajectory and a state-noise vector per trajectory.
    """
    ensemble = _as_ensemble(ensemble)
    if mode not in SAMPLING_MODES:
        raise ConfigError(f"unknown sampling mode '{mode}' (known: {', '.join(SAMPLING_MODES)})")
    if not 0 <= member < ensemble.size:
        raise ConfigError(f"designated member {member} outside ensemble of {ensemble.size}")
    states0 = np.atleast_2d(np.asarray(init_states, dtype=np.float64))
    if states0.shape[0] == 0:
        raise DimensionError("fictitious rollouts need at least one initial state")
    if states0.shape[1] != env.state_dim:
        raise DimensionError(f"initial states have {states0.shape[1]} entries, expected {env.state_dim}")

    count, n, m = states0.shape[0], env.state_dim, env.action_dim
    k = ensemble.size
    states = np.zeros((count, horizon + 1, n))
    actions = np.zeros((count, horizon, m))
    rewards = np.zeros((count, horizon))
    noises = np.zeros((count, horizon, m))
    indices = np.full((count, horizon), -1, dtype=np.int64)
    valid = np.zeros((count, horizon), dtype=bool)
    alive = np.ones(count, dtype=bool)
    tape: list[StepTape] = []

    states[:, 0] = states0
    episode_picks = rng.integers(0, k, size=count)
    std = np.zeros(m) if policy.deterministic else policy.std
    for t in range(horizon):
        current = states[:, t]
        zeta = rng.standard_normal((count, m))
        step_picks = rng.integers(0, k, size=count)
        xi = rng.standard_normal((count, n))

        mean, policy_cache = mlp_forward(policy.mean_net, current)
        action = mean + std * zeta
        clipped = env.clip_action(action)
        actions[:, t] = action
        noises[:, t] = zeta
        valid[:, t] = alive
        rewards[:, t] = np.where(alive, env.reward(current, clipped), 0.0)

        if mode == "step_rand":
            picks = step_picks
        elif mode == "eps_rand":
            picks = episode_picks
        else:
            picks = np.full(count, member, dtype=np.int64)
        if mode in SINGLE_MEMBER_MODES:
            indices[:, t] = picks
            used = sorted(set(picks.tolist()))
        else:
            used = list(range(k))

        predictions = np.zeros((k, count, n))
        step = StepTape(current, zeta, policy_cache, (action >= env.action_low) & (action <= env.action_high), action)
        for index in used:
            rows = np.flatnonzero(picks == index) if mode in SINGLE_MEMBER_MODES else np.arange(count)
            predicted, cache = predict_next_with_cache(ensemble[index], current[rows], clipped[rows])
            predictions[index, rows] = predicted
            if record_tape:
                step.member_caches.append((index, rows, cache))

        with np.errstate(invalid="ignore", over="ignore"):
            following, weights = combine_predictions(predictions, mode, picks, xi)
        broken = alive & ~np.all(np.isfinite(following), axis=1)
        if np.any(broken):
            console.warn(
                f"fictitious rollout: {int(broken.sum())} trajectory(ies) truncated at step {t} "
                "after a non-finite prediction"
            )
        step_alive = alive.copy()
        alive = alive & ~broken
        following[~alive] = current[~alive]
        states[:, t + 1] = following

        if record_tape:
            step.weights = weights
            step.alive = step_alive
            step.propagated = alive.copy()
            tape.append(step)

    batch = TrajectoryBatch(states, actions, rewards, noises, indices, valid)
    return batch, tape


def simulate_fictitious(
    env: EnvSpec,
    ensemble: ModelEnsemble,
    policy: GaussianPolicy,
    init_states,
    horizon: int,
    mode: str,
    rng: np.random.Generator,
    member: int = 0,
) -> TrajectoryBatch:
    batch, _ = simulate(env, ensemble, policy, init_states, horizon, mode, rng, member)
    return batch


def estimate_model_return(
    env: EnvSpec,
    model: DynamicsModel,
    policy: GaussianPolicy,
    init_states,
    horizon: int,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo estimate of the undiscounted return inside a single model."""
    batch = simulate_fictitious(env, ModelEnsemble((model,)), policy, init_states, horizon, "one_model", rng)
    return float(np.mean(batch.returns()))


def sample_start_states(pool: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    if pool.shape[0] == 0:
        raise DatasetError("no real states to start fictitious rollouts from")
    return pool[rng.integers(0, pool.shape[0], size=count)]
