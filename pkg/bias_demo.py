from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial

from errors import ConfigError
from numerics import AdamState, adam_step, create_mlp, mlp_apply, mlp_backward, mlp_forward

GLOBAL_MINIMUM = 1.7
BARRIER = 3.2
LOCAL_MINIMUM = 4.4
DOMAIN = (0.5, 6.0)

# f' = (x - 1.7)(x - 3.2)(x - 4.4), so f(1.7) = 0 < f(4.4) < f(3.2)
_SLOPE = Polynomial.fromroots([GLOBAL_MINIMUM, BARRIER, LOCAL_MINIMUM])
_WELL = _SLOPE.integ(lbnd=GLOBAL_MINIMUM)


def double_well(x) -> np.ndarray:
    """Quartic with its global minimum at 1.7, a barrier at 3.2 and a shallower minimum at 4.4."""
    return _WELL(np.asarray(x, dtype=np.float64))


def double_well_slope(x) -> np.ndarray:
    return _SLOPE(np.asarray(x, dtype=np.float64))


def in_global_basin(x: float) -> bool:
    return float(x) < BARRIER


@dataclass(frozen=True)
class BiasDemoConfig:
    seed: int = 0
    center: float = 2.5
    spread: float = 0.7
    samples: int = 40
    dense: bool = False
    dense_points: int = 201
    grid_points: int = 1001
    hidden_sizes: tuple[int, ...] = (32, 32)
    steps: int = 2000
    learning_rate: float = 1e-2

    def validate(self) -> "BiasDemoConfig":
        if self.samples < 2 or self.dense_points < 2 or self.grid_points < 2:
            raise ConfigError("the bias demo needs at least two samples and grid points")
        if self.spread <= 0 or self.steps < 1 or self.learning_rate <= 0:
            raise ConfigError("spread, steps and learning_rate must be positive")
        return self


@dataclass(frozen=True, eq=False)
class BiasDemoReport:
    config: BiasDemoConfig
    sample_x: np.ndarray
    sample_y: np.ndarray
    grid: np.ndarray
    truth: np.ndarray
    fitted: np.ndarray
    argmin: float
    final_loss: float

    @property
    def in_global_basin(self) -> bool:
        return in_global_basin(self.argmin)

    @property
    def nearest_minimum(self) -> float:
        return GLOBAL_MINIMUM if abs(self.argmin - GLOBAL_MINIMUM) <= abs(self.argmin - LOCAL_MINIMUM) else LOCAL_MINIMUM


def _sample_points(config: BiasDemoConfig, rng: np.random.Generator) -> np.ndarray:
    if config.dense:
        return np.linspace(*DOMAIN, config.dense_points)
    return config.center + config.spread * rng.standard_normal(config.samples)


def fit_regressor(x: np.ndarray, y: np.ndarray, config: BiasDemoConfig, rng: np.random.Generator):
    """Full-batch Adam L2 regression of a ReLU network; returns a predictor on raw ``x``."""
    x_mean, x_std = x.mean(), max(x.std(), 1e-6)
    y_mean, y_std = y.mean(), max(y.std(), 1e-6)
    inputs = ((x - x_mean) / x_std)[:, None]
    targets = ((y - y_mean) / y_std)[:, None]
    net = create_mlp([1, *config.hidden_sizes, 1], rng, hidden_activation="relu")
    state = AdamState.zeros(net.num_params, learning_rate=config.learning_rate)
    loss = float("nan")
    for _ in range(config.steps):
        prediction, cache = mlp_forward(net, inputs)
        error = prediction - targets
        loss = float(np.mean(error ** 2))
        grads = mlp_backward(net, inputs, 2.0 * error / len(x), cache)
        flat, state = adam_step(state, net.flat, grads)
        net = net.with_flat(flat)

    def predict(query) -> np.ndarray:
        query = np.asarray(query, dtype=np.float64)
        scaled = ((query - x_mean) / x_std)[:, None]
        return mlp_apply(net, scaled)[:, 0] * y_std + y_mean

    return predict, loss


def run_bias_demo(config: BiasDemoConfig | None = None) -> BiasDemoReport:
    """Fit the double well from samples and locate the minimum of the fit on a grid over the domain."""
    config = (config or BiasDemoConfig()).validate()
    rng = np.random.default_rng(config.seed)
    sample_x = _sample_points(config, rng)
    sample_y = double_well(sample_x)
    predict, loss = fit_regressor(sample_x, sample_y, config, rng)
    grid = np.linspace(*DOMAIN, config.grid_points)
    fitted = predict(grid)
    return BiasDemoReport(
        config,
        sample_x,
        sample_y,
        grid,
        double_well(grid),
        fitted,
        float(grid[int(np.argmin(fitted))]),
        loss,
    )


def suboptimal_fraction(config: BiasDemoConfig, seeds) -> float:
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("suboptimal_fraction needs at least one seed")
    misses = sum(not run_bias_demo(replace(config, seed=int(seed))).in_global_basin for seed in seeds)
    return misses / len(seeds)


def write_curve_csv(path: Path | str, report: BiasDemoReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["x", "f", "f_hat"])
        for x, f, f_hat in zip(report.grid, report.truth, report.fitted):
            writer.writerow([format(x, ".17g"), format(f, ".17g"), format(f_hat, ".17g")])
    return path
