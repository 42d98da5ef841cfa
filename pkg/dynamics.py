from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from errors import DatasetError, DimensionError, NonFiniteError, ensure_finite
from numerics import (
    AdamState,
    ForwardCache,
    Mlp,
    adam_step,
    create_mlp,
    load_checkpoint,
    mlp_apply,
    mlp_arrays,
    mlp_backward,
    mlp_forward,
    mlp_from_arrays,
    mlp_metadata,
    save_checkpoint,
)

STD_FLOOR = 1e-6
SHUFFLE_STREAM = 7919
SPLITS = ("train", "validation")


class Transition(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray


@dataclass(frozen=True, eq=False)
class Episode:
    episode_id: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray | None = None

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.float64)
        actions = np.asarray(self.actions, dtype=np.float64)
        if states.ndim != 2 or actions.ndim != 2 or states.shape[0] != actions.shape[0] + 1:
            raise DimensionError(
                f"episode {self.episode_id}: {states.shape[0]} states do not bracket {actions.shape[0]} actions"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    @property
    def length(self) -> int:
        return int(self.actions.shape[0])

    def transitions(self) -> list[Transition]:
        return [Transition(self.states[t], self.actions[t], self.states[t + 1]) for t in range(self.length)]


@dataclass(frozen=True, eq=False)
class TransitionArrays:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __len__(self) -> int:
        return int(self.states.shape[0])

    def __iter__(self) -> Iterator[Transition]:
        for index in range(len(self)):
            yield Transition(self.states[index], self.actions[index], self.next_states[index])

    @property
    def deltas(self) -> np.ndarray:
        return self.next_states - self.states

    @classmethod
    def from_episodes(cls, episodes: Iterable[Episode]) -> "TransitionArrays":
        episodes = list(episodes)
        if not episodes:
            return cls(np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0)))
        return cls(
            np.concatenate([episode.states[:-1] for episode in episodes]),
            np.concatenate([episode.actions for episode in episodes]),
            np.concatenate([episode.states[1:] for episode in episodes]),
        )

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "TransitionArrays":
        if isinstance(transitions, TransitionArrays):
            return transitions
        if len(transitions) == 0:
            return cls(np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0)))
        return cls(
            np.array([t.s for t in transitions], dtype=np.float64).reshape(len(transitions), -1),
            np.array([t.a for t in transitions], dtype=np.float64).reshape(len(transitions), -1),
            np.array([t.s_next for t in transitions], dtype=np.float64).reshape(len(transitions), -1),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Replay store of real episodes with a persistent episode-level train/validation split."""

    train_episodes: tuple[Episode, ...] = ()
    validation_episodes: tuple[Episode, ...] = ()

    @cached_property
    def train(self) -> TransitionArrays:
        return TransitionArrays.from_episodes(self.train_episodes)

    @cached_property
    def validation(self) -> TransitionArrays:
        return TransitionArrays.from_episodes(self.validation_episodes)

    @property
    def episodes(self) -> tuple[Episode, ...]:
        return tuple(sorted(self.train_episodes + self.validation_episodes, key=lambda ep: ep.episode_id))

    @property
    def num_steps(self) -> int:
        return sum(episode.length for episode in self.episodes)

    def split_of(self, episode_id: int) -> str | None:
        if any(episode.episode_id == episode_id for episode in self.train_episodes):
            return "train"
        if any(episode.episode_id == episode_id for episode in self.validation_episodes):
            return "validation"
        return None

    def states(self, split: str = "train") -> np.ndarray:
        episodes = self.train_episodes if split == "train" else self.validation_episodes
        if not episodes:
            return np.zeros((0, 0))
        return np.concatenate([episode.states for episode in episodes])


@dataclass(frozen=True, eq=False)
class Normalizer:
    input_mean: np.ndarray
    input_std: np.ndarray
    output_mean: np.ndarray
    output_std: np.ndarray

    @classmethod
    def identity(cls, state_dim: int, action_dim: int) -> "Normalizer":
        return cls(
            np.zeros(state_dim + action_dim),
            np.ones(state_dim + action_dim),
            np.zeros(state_dim),
            np.ones(state_dim),
        )

    def normalize_input(self, s, a) -> np.ndarray:
        x = np.concatenate([np.asarray(s, dtype=np.float64), np.asarray(a, dtype=np.float64)], axis=-1)
        return (x - self.input_mean) / self.input_std

    def normalize_target(self, delta) -> np.ndarray:
        return (np.asarray(delta, dtype=np.float64) - self.output_mean) / self.output_std

    def denormalize_output(self, y) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.output_std + self.output_mean


def fit_normalizer(train) -> Normalizer:
    """Per-dimension mean/std of ``(s, a)`` inputs and ``s' - s`` targets, std floored at 1e-6."""
    arrays = TransitionArrays.from_transitions(train)
    if len(arrays) == 0:
        raise DatasetError("cannot fit a normalizer on an empty training set")
    inputs = np.concatenate([arrays.states, arrays.actions], axis=-1)
    deltas = arrays.deltas
    return Normalizer(
        inputs.mean(axis=0),
        np.maximum(inputs.std(axis=0), STD_FLOOR),
        deltas.mean(axis=0),
        np.maximum(deltas.std(axis=0), STD_FLOOR),
    )


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """``s' = s + denormalize(net(normalize(s, a)))``."""

    net: Mlp
    normalizer: Normalizer
    seed: int

    @property
    def state_dim(self) -> int:
        return self.net.output_size

    @property
    def action_dim(self) -> int:
        return self.net.input_size - self.net.output_size


@dataclass(frozen=True, eq=False)
class ModelEnsemble:
    members: tuple[DynamicsModel, ...]
    validation_losses: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.members:
            raise DatasetError("an ensemble needs at least one member")
        object.__setattr__(self, "members", tuple(self.members))

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, index: int) -> DynamicsModel:
        return self.members[index]

    def __iter__(self) -> Iterator[DynamicsModel]:
        return iter(self.members)

    @property
    def size(self) -> int:
        return len(self.members)

    def predict_all(self, s, a) -> np.ndarray:
        return np.stack([predict_next(member, s, a) for member in self.members])


@dataclass(frozen=True)
class ModelTrainingConfig:
    hidden_sizes: tuple[int, ...] = (256, 256)
    activation: str = "relu"
    learning_rate: float = 1e-3
    batch_size: int = 1000
    check_every: int = 5
    patience: int = 25
    max_passes: int = 500


@dataclass(frozen=True, eq=False)
class TrainingResult:
    model: DynamicsModel
    history: tuple[tuple[int, float], ...]
    best_pass: int
    passes: int

    @property
    def best_loss(self) -> float:
        return min(loss for _, loss in self.history)


@dataclass(frozen=True, eq=False)
class PredictionCache:
    x: np.ndarray
    forward: ForwardCache = field(repr=False)


def create_model(state_dim: int, action_dim: int, hidden_sizes: Sequence[int], seed: int, activation: str = "relu") -> DynamicsModel:
    # zero output layer: an untrained model predicts s' = s + mean delta
    rng = np.random.default_rng(int(seed))
    net = create_mlp(
        [state_dim + action_dim, *hidden_sizes, state_dim],
        rng,
        hidden_activation=activation,
        output_activation="identity",
        output_scale=0.0,
    )
    return DynamicsModel(net, Normalizer.identity(state_dim, action_dim), int(seed))


def _check_model_inputs(model: DynamicsModel, s, a) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if s.shape[-1] != model.state_dim or a.shape[-1] != model.action_dim:
        raise DimensionError(
            f"model expects state {model.state_dim} / action {model.action_dim}, got {s.shape[-1]} / {a.shape[-1]}"
        )
    return s, a


def predict_next(model: DynamicsModel, s, a) -> np.ndarray:
    s, a = _check_model_inputs(model, s, a)
    y = mlp_apply(model.net, model.normalizer.normalize_input(s, a))
    s_next = s + model.normalizer.denormalize_output(y)
    ensure_finite(s_next, f"model {model.seed} prediction")
    return s_next


def predict_next_with_cache(model: DynamicsModel, s, a) -> tuple[np.ndarray, PredictionCache]:
    """Like ``predict_next`` but keeps the forward pass for ``predict_next_backward``; no finiteness check."""
    s, a = _check_model_inputs(model, s, a)
    x = model.normalizer.normalize_input(s, a)
    y, forward = mlp_forward(model.net, x)
    return s + model.normalizer.denormalize_output(y), PredictionCache(x, forward)


def predict_next_backward(model: DynamicsModel, cache: PredictionCache, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream * predict_next(model, s, a))`` w.r.t. ``s`` and ``a``."""
    upstream = np.asarray(upstream, dtype=np.float64)
    normalizer = model.normalizer
    bundle = mlp_backward(model.net, cache.x, upstream * normalizer.output_std, cache.forward)
    input_grad = bundle.input_grad / normalizer.input_std
    n = model.state_dim
    return upstream + input_grad[..., :n], input_grad[..., n:]


def _normalized_arrays(model: DynamicsModel, arrays: TransitionArrays) -> tuple[np.ndarray, np.ndarray]:
    x = model.normalizer.normalize_input(arrays.states, arrays.actions)
    y = model.normalizer.normalize_target(arrays.deltas)
    return x, y


def _mean_squared(net: Mlp, x: np.ndarray, y: np.ndarray) -> float:
    err = mlp_apply(net, x) - y
    return float(np.mean(np.sum(err * err, axis=-1)))


def validation_loss(model: DynamicsModel, arrays) -> float:
    """Mean over samples of the squared normalized one-step error, summed over state dimensions."""
    arrays = TransitionArrays.from_transitions(arrays)
    if len(arrays) == 0:
        raise DatasetError("validation split is empty")
    x, y = _normalized_arrays(model, arrays)
    return _mean_squared(model.net, x, y)


def train_model(model: DynamicsModel, data: Dataset, cfg: ModelTrainingConfig) -> TrainingResult:
    """Minimize the one-step L2 loss with Adam and early stopping on the validation split.

    The validation loss is checked before training and every ``check_every``
    passes; training stops once ``patience`` passes have gone by without a new
    strict minimum, and the best checkpoint is returned.
    """
    if len(data.train) == 0 or len(data.validation) == 0:
        raise DatasetError(
            f"model training needs both splits (train {len(data.train)}, validation {len(data.validation)})"
        )
    model = replace(model, normalizer=fit_normalizer(data.train))
    x_train, y_train = _normalized_arrays(model, data.train)
    x_val, y_val = _normalized_arrays(model, data.validation)
    rng = np.random.default_rng([model.seed, SHUFFLE_STREAM])

    net = model.net
    params = net.flat
    adam = AdamState.zeros(params.size, learning_rate=cfg.learning_rate)
    best_loss = _mean_squared(net, x_val, y_val)
    best_net = net
    best_pass = 0
    history = [(0, best_loss)]
    count = x_train.shape[0]
    batch_size = max(1, min(cfg.batch_size, count))

    passes = 0
    while passes < cfg.max_passes:
        order = rng.permutation(count)
        for start in range(0, count, batch_size):
            rows = order[start:start + batch_size]
            prediction, cache = mlp_forward(net, x_train[rows])
            err = prediction - y_train[rows]
            if not np.all(np.isfinite(err)):
                raise NonFiniteError(
                    f"model {model.seed}: non-finite training loss at pass {passes + 1}, "
                    f"batch starting at {start} (best validation loss {best_loss:.6g} at pass {best_pass})"
                )
            grads = mlp_backward(net, x_train[rows], 2.0 * err / rows.size, cache)
            params, adam = adam_step(adam, params, grads)
            net = net.with_flat(params)
        passes += 1
        if passes % cfg.check_every:
            continue
        loss = _mean_squared(net, x_val, y_val)
        history.append((passes, loss))
        if loss < best_loss:
            best_loss, best_net, best_pass = loss, net, passes
        elif passes - best_pass >= cfg.patience:
            break

    return TrainingResult(replace(model, net=best_net), tuple(history), best_pass, passes)


def member_seeds(count: int, rng: np.random.Generator) -> list[int]:
    return [int(seed) for seed in rng.integers(0, 2**31 - 1, size=count)]


def train_ensemble(
    count: int,
    data: Dataset,
    cfg: ModelTrainingConfig,
    rng: np.random.Generator,
    previous: ModelEnsemble | None = None,
    workers: int = 1,
) -> ModelEnsemble:
    """Train ``count`` members on the same data, each from its own seed.

    With ``previous`` the members continue from the earlier weights (the
    normalizer is refitted). Results do not depend on ``workers``.
    """
    if count < 1:
        raise DatasetError(f"ensemble size must be >= 1, got {count}")
    seeds = member_seeds(count, rng)
    state_dim = data.train.states.shape[-1]
    action_dim = data.train.actions.shape[-1]

    starts: list[DynamicsModel] = []
    for index, seed in enumerate(seeds):
        if previous is not None and index < len(previous):
            starts.append(replace(previous[index], seed=seed))
        else:
            starts.append(create_model(state_dim, action_dim, cfg.hidden_sizes, seed, cfg.activation))

    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=min(workers, count)) as pool:
            results = list(pool.map(lambda start: train_model(start, data, cfg), starts))
    else:
        results = [train_model(start, data, cfg) for start in starts]

    return ModelEnsemble(
        tuple(result.model for result in results),
        tuple(validation_loss(result.model, data.validation) for result in results),
    )


def model_arrays(model: DynamicsModel, prefix: str = "model") -> dict[str, np.ndarray]:
    arrays = mlp_arrays(model.net, f"{prefix}.net")
    arrays[f"{prefix}.input_mean"] = model.normalizer.input_mean
    arrays[f"{prefix}.input_std"] = model.normalizer.input_std
    arrays[f"{prefix}.output_mean"] = model.normalizer.output_mean
    arrays[f"{prefix}.output_std"] = model.normalizer.output_std
    return arrays


def model_from_arrays(arrays: dict[str, np.ndarray], metadata: dict[str, object], prefix: str = "model") -> DynamicsModel:
    net = mlp_from_arrays(arrays, f"{prefix}.net", metadata["net"])
    normalizer = Normalizer(
        arrays[f"{prefix}.input_mean"],
        arrays[f"{prefix}.input_std"],
        arrays[f"{prefix}.output_mean"],
        arrays[f"{prefix}.output_std"],
    )
    return DynamicsModel(net, normalizer, int(metadata["seed"]))


def save_ensemble(path: Path | str, ensemble: ModelEnsemble) -> Path:
    arrays: dict[str, np.ndarray] = {}
    members = []
    for index, member in enumerate(ensemble):
        arrays.update(model_arrays(member, f"member{index}"))
        members.append({"net": mlp_metadata(member.net), "seed": member.seed})
    metadata = {"kind": "model_ensemble", "members": members, "validation_losses": list(ensemble.validation_losses)}
    return save_checkpoint(path, arrays, metadata)


def load_ensemble(path: Path | str) -> ModelEnsemble:
    arrays, metadata = load_checkpoint(path)
    members = tuple(
        model_from_arrays(arrays, member_meta, f"member{index}")
        for index, member_meta in enumerate(metadata["members"])
    )
    return ModelEnsemble(members, tuple(float(loss) for loss in metadata.get("validation_losses", [])))


def dataset_header(state_dim: int, action_dim: int) -> list[str]:
    return (
        ["episode", "split"]
        + [f"s_{i}" for i in range(state_dim)]
        + [f"a_{i}" for i in range(action_dim)]
        + [f"snext_{i}" for i in range(state_dim)]
    )


def save_dataset_csv(path: Path | str, data: Dataset) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    episodes = data.episodes
    if not episodes:
        raise DatasetError("refusing to write an empty dataset")
    state_dim = episodes[0].states.shape[1]
    action_dim = episodes[0].actions.shape[1]
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(dataset_header(state_dim, action_dim))
        for episode in episodes:
            split = data.split_of(episode.episode_id)
            for transition in episode.transitions():
                values = np.concatenate([transition.s, transition.a, transition.s_next])
                writer.writerow([episode.episode_id, split, *(f"{value:.17g}" for value in values)])
    return path


def load_dataset_csv(path: Path | str) -> Dataset:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[:2] != ["episode", "split"]:
            raise DatasetError(f"{path}: not a transition CSV")
        state_dim = sum(1 for name in header if name.startswith("s_"))
        action_dim = sum(1 for name in header if name.startswith("a_"))
        rows: dict[int, tuple[str, list[np.ndarray]]] = {}
        for row in reader:
            values = np.array([float(value) for value in row[2:]])
            rows.setdefault(int(row[0]), (row[1], []))[1].append(values)

    train: list[Episode] = []
    validation: list[Episode] = []
    for episode_id, (split, values) in sorted(rows.items()):
        table = np.stack(values)
        s = table[:, :state_dim]
        a = table[:, state_dim:state_dim + action_dim]
        states = np.concatenate([s, table[-1:, state_dim + action_dim:]])
        episode = Episode(episode_id, states, a)
        if split not in SPLITS:
            raise DatasetError(f"{path}: episode {episode_id} has unknown split '{split}'")
        (train if split == "train" else validation).append(episode)
    return Dataset(tuple(train), tuple(validation))
