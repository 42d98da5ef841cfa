"""Dense double-precision math for small multilayer perceptrons.

Networks compute ``y = act(x @ W + b)`` layer by layer with ``W`` shaped
``(fan_in, fan_out)``. Every function accepts a single input vector of shape
``(d,)`` or a batch of shape ``(B, d)``; parameter gradients of a batch are
summed over the batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from errors import CheckpointError, ConfigError, DimensionError, NonFiniteError, ensure_finite

HIDDEN_ACTIVATIONS: tuple[str, ...] = ("relu", "tanh")
OUTPUT_ACTIVATIONS: tuple[str, ...] = ("identity", "tanh")

CHECKPOINT_FORMAT = "metrpo-checkpoint/1"
CHECKPOINT_DTYPE = "<f8"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


@dataclass(frozen=True, eq=False)
class Mlp:
    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self) -> None:
        sizes = tuple(int(size) for size in self.layer_sizes)
        if len(sizes) < 2 or any(size <= 0 for size in sizes):
            raise DimensionError(f"layer sizes must be >= 2 positive integers, got {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise DimensionError("one weight matrix and one bias vector per layer expected")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unknown hidden activation '{self.hidden_activation}'")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation '{self.output_activation}'")

        weights = []
        biases = []
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            weight = np.array(weight, dtype=np.float64)
            bias = np.array(bias, dtype=np.float64)
            if weight.shape != (sizes[index], sizes[index + 1]):
                raise DimensionError(
                    f"layer {index}: weight shape {weight.shape} does not chain with {sizes}"
                )
            if bias.shape != (sizes[index + 1],):
                raise DimensionError(f"layer {index}: bias shape {bias.shape} expected ({sizes[index + 1]},)")
            ensure_finite(weight, f"layer {index} weights")
            ensure_finite(bias, f"layer {index} biases")
            weight.setflags(write=False)
            bias.setflags(write=False)
            weights.append(weight)
            biases.append(bias)

        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "biases", tuple(biases))

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def shapes(self) -> list[tuple[int, ...]]:
        shapes: list[tuple[int, ...]] = []
        for weight, bias in zip(self.weights, self.biases):
            shapes.append(weight.shape)
            shapes.append(bias.shape)
        return shapes

    @property
    def num_params(self) -> int:
        return int(sum(int(np.prod(shape)) for shape in self.shapes()))

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for weight, bias in zip(self.weights, self.biases):
            params.append(weight)
            params.append(bias)
        return params

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([param.ravel() for param in self.parameters()])

    def with_flat(self, flat: np.ndarray) -> "Mlp":
        pieces = unflatten(flat, self.shapes())
        return Mlp(
            self.layer_sizes,
            tuple(pieces[0::2]),
            tuple(pieces[1::2]),
            self.hidden_activation,
            self.output_activation,
        )


@dataclass(frozen=True, eq=False)
class GradientBundle:
    params: tuple[np.ndarray, ...]
    input_grad: np.ndarray | None = None
    flat: np.ndarray = field(init=False, repr=False)
    global_norm: float = field(init=False)

    def __post_init__(self) -> None:
        params = tuple(np.asarray(param, dtype=np.float64) for param in self.params)
        flat = np.concatenate([param.ravel() for param in params]) if params else np.zeros(0)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "global_norm", float(np.linalg.norm(flat)))

    @classmethod
    def from_flat(cls, flat: np.ndarray, shapes: Sequence[tuple[int, ...]], input_grad=None) -> "GradientBundle":
        return cls(tuple(unflatten(flat, shapes)), input_grad)

    def shapes(self) -> list[tuple[int, ...]]:
        return [param.shape for param in self.params]

    def scaled(self, factor: float) -> "GradientBundle":
        input_grad = None if self.input_grad is None else self.input_grad * factor
        return GradientBundle(tuple(param * factor for param in self.params), input_grad)


@dataclass(frozen=True, eq=False)
class AdamState:
    step_count: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float = 1e-3
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    @classmethod
    def zeros(
        cls,
        size: int,
        learning_rate: float = 1e-3,
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        epsilon: float = ADAM_EPSILON,
    ) -> "AdamState":
        if min(learning_rate, beta1, beta2, epsilon) <= 0:
            raise ConfigError("Adam hyperparameters must be positive")
        return cls(0, np.zeros(size), np.zeros(size), learning_rate, beta1, beta2, epsilon)


def unflatten(flat: np.ndarray, shapes: Sequence[tuple[int, ...]]) -> list[np.ndarray]:
    flat = np.asarray(flat, dtype=np.float64)
    total = int(sum(int(np.prod(shape)) for shape in shapes))
    if flat.ndim != 1 or flat.size != total:
        raise DimensionError(f"flat vector of size {flat.size} does not match {total} parameters")
    pieces: list[np.ndarray] = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        pieces.append(flat[offset:offset + count].reshape(shape).copy())
        offset += count
    return pieces


def create_mlp(
    layer_sizes: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: str = "tanh",
    output_activation: str = "identity",
    output_scale: float = 1.0,
) -> Mlp:
    sizes = tuple(int(size) for size in layer_sizes)
    if len(sizes) < 2:
        raise DimensionError(f"layer sizes must list input and output sizes, got {sizes}")
    weights = []
    biases = []
    for index, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = 1.0 / np.sqrt(fan_in)
        weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        if index == len(sizes) - 2:
            weight = weight * output_scale
        weights.append(weight)
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, tuple(weights), tuple(biases), hidden_activation, output_activation)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_slope(z: np.ndarray, out: np.ndarray, kind: str) -> np.ndarray | float:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - out * out
    return 1.0


def _layer_activation(net: Mlp, index: int) -> str:
    return net.output_activation if index == net.num_layers - 1 else net.hidden_activation


def _check_input(net: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_size:
        raise DimensionError(f"input of shape {x.shape} does not match network input size {net.input_size}")
    return x


@dataclass(frozen=True, eq=False)
class ForwardCache:
    pre_activations: tuple[np.ndarray, ...]
    activations: tuple[np.ndarray, ...]


def mlp_forward(net: Mlp, x) -> tuple[np.ndarray, ForwardCache]:
    h = _check_input(net, x)
    pre: list[np.ndarray] = []
    acts: list[np.ndarray] = [h]
    for index, (weight, bias) in enumerate(zip(net.weights, net.biases)):
        z = h @ weight + bias
        h = _activate(z, _layer_activation(net, index))
        pre.append(z)
        acts.append(h)
    return h, ForwardCache(tuple(pre), tuple(acts))


def mlp_apply(net: Mlp, x) -> np.ndarray:
    output, _ = mlp_forward(net, x)
    return output


def mlp_backward(net: Mlp, x, upstream, cache: ForwardCache | None = None) -> GradientBundle:
    """Gradient of ``sum(upstream * mlp_apply(net, x))`` w.r.t. parameters and input."""
    if cache is None:
        _, cache = mlp_forward(net, x)
    g = np.asarray(upstream, dtype=np.float64)
    output = cache.activations[-1]
    if g.shape != output.shape:
        raise DimensionError(f"upstream shape {g.shape} does not match output shape {output.shape}")

    batched = g.ndim == 2
    param_grads: list[np.ndarray] = [np.empty(0)] * (2 * net.num_layers)
    for index in range(net.num_layers - 1, -1, -1):
        g = g * _activation_slope(
            cache.pre_activations[index],
            cache.activations[index + 1],
            _layer_activation(net, index),
        )
        h_in = cache.activations[index]
        if batched:
            param_grads[2 * index] = h_in.T @ g
            param_grads[2 * index + 1] = g.sum(axis=0)
        else:
            param_grads[2 * index] = np.outer(h_in, g)
            param_grads[2 * index + 1] = g.copy()
        g = g @ net.weights[index].T
    return GradientBundle(tuple(param_grads), g)


def mlp_jvp(net: Mlp, x, tangent: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward-mode derivative of the output along a flat parameter direction."""
    pieces = unflatten(tangent, net.shapes())
    h = _check_input(net, x)
    dh = np.zeros_like(h)
    for index, (weight, bias) in enumerate(zip(net.weights, net.biases)):
        z = h @ weight + bias
        dz = dh @ weight + h @ pieces[2 * index] + pieces[2 * index + 1]
        h = _activate(z, _layer_activation(net, index))
        dh = _activation_slope(z, h, _layer_activation(net, index)) * dz
    return h, dh


def adam_step(state: AdamState, params: np.ndarray, grads: GradientBundle | np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam descent step on a flat parameter vector."""
    g = grads.flat if isinstance(grads, GradientBundle) else np.asarray(grads, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if g.shape != params.shape or state.first_moment.shape != params.shape:
        raise DimensionError(
            f"Adam shapes disagree: params {params.shape}, grads {g.shape}, state {state.first_moment.shape}"
        )
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("Adam received a non-finite gradient")

    step = state.step_count + 1
    first = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    second = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    first_hat = first / (1.0 - state.beta1 ** step)
    second_hat = second / (1.0 - state.beta2 ** step)
    updated = params - state.learning_rate * first_hat / (np.sqrt(second_hat) + state.epsilon)
    new_state = AdamState(step, first, second, state.learning_rate, state.beta1, state.beta2, state.epsilon)
    return updated, new_state


def clip_by_global_norm(grads: GradientBundle, max_norm: float) -> GradientBundle:
    if max_norm <= 0:
        raise ConfigError(f"max_norm must be positive, got {max_norm}")
    if grads.global_norm <= max_norm:
        return grads
    return grads.scaled(max_norm / grads.global_norm)


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_grad = grad.reshape(-1)
    for index in range(flat_x.size):
        original = flat_x[index]
        flat_x[index] = original + h
        upper = fn(x)
        flat_x[index] = original - h
        lower = fn(x)
        flat_x[index] = original
        flat_grad[index] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def mlp_arrays(net: Mlp, prefix: str) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for index, (weight, bias) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}.w{index}"] = weight
        arrays[f"{prefix}.b{index}"] = bias
    return arrays


def mlp_metadata(net: Mlp) -> dict[str, object]:
    return {
        "layer_sizes": list(net.layer_sizes),
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
    }


def mlp_from_arrays(arrays: dict[str, np.ndarray], prefix: str, metadata: dict[str, object]) -> Mlp:
    sizes = tuple(int(size) for size in metadata["layer_sizes"])
    try:
        weights = tuple(arrays[f"{prefix}.w{index}"] for index in range(len(sizes) - 1))
        biases = tuple(arrays[f"{prefix}.b{index}"] for index in range(len(sizes) - 1))
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing array {exc}") from exc
    return Mlp(
        sizes,
        weights,
        biases,
        str(metadata.get("hidden_activation", "tanh")),
        str(metadata.get("output_activation", "identity")),
    )


def save_checkpoint(path: Path | str, arrays: dict[str, np.ndarray], metadata: dict[str, object] | None = None) -> Path:
    """Write ``<path>.json`` (shape manifest) and ``<path>.bin`` (little-endian float64 values)."""
    stem = Path(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name, value in arrays.items():
        array = np.ascontiguousarray(value, dtype=CHECKPOINT_DTYPE)
        entries.append({"name": name, "shape": list(array.shape), "offset": offset, "count": int(array.size)})
        blobs.append(array.tobytes())
        offset += int(array.size)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "dtype": CHECKPOINT_DTYPE,
        "total": offset,
        "entries": entries,
        "metadata": metadata or {},
    }
    stem.with_suffix(".bin").write_bytes(b"".join(blobs))
    with stem.with_suffix(".json").open("w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
    return stem


def load_checkpoint(path: Path | str) -> tuple[dict[str, np.ndarray], dict[str, object]]:
    stem = Path(path)
    try:
        with stem.with_suffix(".json").open("r", encoding="utf-8") as handle:
            manifest = json.load(handle)
        blob = stem.with_suffix(".bin").read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {exc.filename}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable checkpoint manifest {stem}.json: {exc}") from exc

    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    values = np.frombuffer(blob, dtype=CHECKPOINT_DTYPE)
    if values.size != int(manifest.get("total", -1)):
        raise CheckpointError(f"checkpoint blob holds {values.size} values, manifest says {manifest.get('total')}")

    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["entries"]:
        start = int(entry["offset"])
        count = int(entry["count"])
        arrays[entry["name"]] = values[start:start + count].astype(np.float64).reshape(entry["shape"])
    return arrays, dict(manifest.get("metadata", {}))
