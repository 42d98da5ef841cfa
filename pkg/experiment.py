from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

import console
from dynamics import Dataset, Episode, ModelEnsemble, ModelTrainingConfig, save_dataset_csv, save_ensemble, train_ensemble
from environments import EnvSpec, evaluate_real_return, make_env, mean_and_stderr, run_episode, sample_initial_states
from errors import ConfigError, MetrpoError
from optimizers import OptimizerConfig, improve_policy, new_adam_state, trpo_update
from policy import GaussianPolicy, create_policy, load_policy, save_policy
from rollout import (
    SAMPLING_MODES,
    ExplorationConfig,
    TrajectoryBatch,
    collect_real_samples,
    estimate_model_return,
    sample_start_states,
    simulate_fictitious,
    split_dataset,
)
from runlog import RUN_LOG, IterationRecord, RunLog, read_run_header
from validation import FIXED_BUDGETS, ValidationConfig, ValidationController

ALGORITHMS: tuple[str, ...] = ("metrpo", "vanilla_bptt", "trpo_real")
ABLATION_AXES: dict[str, str] = {
    "optimizer": "optimizer",
    "K": "models",
    "sampling_mode": "sampling_mode",
    "validation_mode": "validation_mode",
}
SUCCESS_FRACTION = 0.9

DEFAULT_CONFIG: dict[str, object] = {
    "env": "pendulum",
    "env_params": {},
    "algorithm": "metrpo",
    "seed": 0,
    "models": 5,
    "model_hidden_sizes": [256, 256],
    "model_activation": "relu",
    "model_learning_rate": 1e-3,
    "model_batch_size": 1000,
    "model_check_every": 5,
    "model_patience": 25,
    "model_max_passes": 500,
    "model_warm_start": True,
    "policy_hidden_sizes": [32, 32],
    "policy_init_std": 1.0,
    "optimizer": "trpo",
    "trpo_step_size": 0.01,
    "baseline_trpo_step_size": 0.05,
    "fictitious_batch_size": 10000,
    "bptt_learning_rate": 1e-3,
    "bptt_deterministic": False,
    "vpg_learning_rate": 1e-2,
    "clip_norm": 10.0,
    "discount": 0.99,
    "cg_iterations": 10,
    "cg_damping": 0.1,
    "backtrack_ratio": 0.5,
    "max_backtracks": 10,
    "sampling_mode": "step_rand",
    "sampling_member": 0,
    "validation_mode": "ensemble",
    "validation_threshold": 0.7,
    "validation_check_every": 5,
    "validation_patience": 25,
    "validation_starts": 50,
    "max_inner_updates": 200,
    "restore_best_policy": True,
    "exploration_std_low": 0.0,
    "exploration_std_high": 3.0,
    "param_noise_scale": 1.0,
    "timesteps_per_iteration": 3000,
    "model_free_batch_size": 5000,
    "outer_iterations": 10,
    "max_real_steps": 0,
    "target_return": None,
    "eval_episodes": 10,
    "log_real_at_checks": False,
    "workers": 1,
    "out": "runs/default",
}


def default_config_copy() -> dict[str, object]:
    return json.loads(json.dumps(DEFAULT_CONFIG))


def _coerce(key: str, value: object, default: object) -> object:
    if isinstance(value, str) and not isinstance(default, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{key}: cannot parse '{value}'") from exc

    if default is None:
        if value is None or (isinstance(value, (int, float)) and not isinstance(value, bool)):
            return value
    elif isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, list):
        if isinstance(value, list):
            return value
    elif isinstance(default, dict):
        if isinstance(value, dict):
            return value
    elif isinstance(value, str):
        return value
    raise ConfigError(f"{key}: expected {type(default).__name__ if default is not None else 'a number or null'}, got {value!r}")


def merge_config(base: dict[str, object], overrides: dict[str, object] | None) -> dict[str, object]:
    merged = json.loads(json.dumps(base))
    for raw_key, value in (overrides or {}).items():
        key = raw_key.replace("-", "_")
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown config key '{raw_key}'")
        merged[key] = _coerce(key, value, DEFAULT_CONFIG[key])
    return merged


def load_config_dict(path: Path | str | None = None, overrides: dict[str, object] | None = None) -> dict[str, object]:
    config = default_config_copy()
    if path is not None:
        try:
            with Path(path).open("r", encoding="utf-8") as handle:
                loaded = json.load(handle)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"failed to parse config ({path}): {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("configuration root must be an object")
        config = merge_config(config, loaded)
    return merge_config(config, overrides)


def load_config(path: Path | str | None = None, overrides: dict[str, object] | None = None) -> "RunConfig":
    return RunConfig.from_dict(load_config_dict(path, overrides))


def substream(seed: int, *names: str) -> np.random.Generator:
    """Independent generator for a named part of a run, derived from the master seed."""
    key = tuple(zlib.crc32(name.encode("utf-8")) for name in names)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, object]
    env: EnvSpec
    model: ModelTrainingConfig
    optimizer: OptimizerConfig
    exploration: ExplorationConfig
    validation: ValidationConfig

    @classmethod
    def from_dict(cls, values: dict[str, object]) -> "RunConfig":
        values = merge_config(default_config_copy(), values)
        if values["algorithm"] == "vanilla_bptt":
            forced = {"models": 1, "sampling_mode": "one_model", "validation_mode": "one_model", "optimizer": "bptt", "sampling_member": 0}
            changed = [key for key, value in forced.items() if values[key] != value]
            if changed:
                console.dim(f"vanilla_bptt: overriding {', '.join(changed)}")
            values.update(forced)

        env = make_env(str(values["env"]), values["env_params"])
        model = ModelTrainingConfig(
            hidden_sizes=tuple(int(size) for size in values["model_hidden_sizes"]),
            activation=str(values["model_activation"]),
            learning_rate=values["model_learning_rate"],
            batch_size=values["model_batch_size"],
            check_every=values["model_check_every"],
            patience=values["model_patience"],
            max_passes=values["model_max_passes"],
        )
        optimizer = OptimizerConfig(
            kind=values["optimizer"],
            step_size=values["trpo_step_size"],
            batch_size=values["fictitious_batch_size"],
            bptt_learning_rate=values["bptt_learning_rate"],
            vpg_learning_rate=values["vpg_learning_rate"],
            clip_norm=values["clip_norm"],
            discount=values["discount"],
            cg_iterations=values["cg_iterations"],
            cg_damping=values["cg_damping"],
            backtrack_ratio=values["backtrack_ratio"],
            max_backtracks=values["max_backtracks"],
            bptt_deterministic=values["bptt_deterministic"],
        )
        exploration = ExplorationConfig(
            values["exploration_std_low"],
            values["exploration_std_high"],
            values["param_noise_scale"],
            values["timesteps_per_iteration"],
        )
        validation = ValidationConfig(
            values["validation_mode"],
            values["validation_threshold"],
            values["validation_check_every"],
            values["validation_patience"],
        )
        return cls(values, env, model, optimizer, exploration, validation).validate()

    def __getitem__(self, key: str) -> object:
        return self.values[key]

    @property
    def algorithm(self) -> str:
        return str(self.values["algorithm"])

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def models(self) -> int:
        return int(self.values["models"])

    @property
    def steps_per_iteration(self) -> int:
        if self.algorithm == "trpo_real":
            return int(self.values["model_free_batch_size"])
        return self.exploration.timesteps_per_iteration

    @property
    def iteration_budget(self) -> int:
        iterations = int(self.values["outer_iterations"])
        cap = int(self.values["max_real_steps"])
        if cap > 0:
            iterations = min(iterations, cap // self.steps_per_iteration)
        return iterations

    def to_dict(self) -> dict[str, object]:
        return json.loads(json.dumps(self.values))

    def validate(self) -> "RunConfig":
        values = self.values
        horizon = self.env.horizon
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm '{self.algorithm}' (known: {', '.join(ALGORITHMS)})")
        if self.models < 1:
            raise ConfigError(f"ensemble size must be >= 1, got {self.models}")
        if values["sampling_mode"] not in SAMPLING_MODES:
            raise ConfigError(f"unknown sampling mode '{values['sampling_mode']}' (known: {', '.join(SAMPLING_MODES)})")
        if not 0 <= int(values["sampling_member"]) < self.models:
            raise ConfigError(f"sampling_member {values['sampling_member']} outside ensemble of {self.models}")
        self.optimizer.validate(horizon)
        self.validation.validate()
        if self.exploration.timesteps_per_iteration % horizon:
            raise ConfigError(
                f"timesteps_per_iteration ({self.exploration.timesteps_per_iteration}) must be a multiple of the horizon ({horizon})"
            )
        if self.algorithm != "trpo_real" and self.exploration.timesteps_per_iteration // horizon < 3:
            raise ConfigError("each outer iteration must collect at least 3 episodes for the train/validation split")
        batch = int(values["model_free_batch_size"])
        if batch < horizon or batch % horizon:
            raise ConfigError(f"model_free_batch_size ({batch}) must be a positive multiple of the horizon ({horizon})")
        if self["baseline_trpo_step_size"] <= 0:
            raise ConfigError("baseline_trpo_step_size must be positive")
        for key in ("eval_episodes", "validation_starts", "max_inner_updates", "workers", "model_batch_size", "model_check_every"):
            if int(values[key]) < 1:
                raise ConfigError(f"{key} must be at least 1")
        for key in ("outer_iterations", "max_real_steps", "model_patience", "model_max_passes"):
            if int(values[key]) < 0:
                raise ConfigError(f"{key} must be non-negative")
        if not values["model_hidden_sizes"]:
            raise ConfigError("model_hidden_sizes must not be empty")
        if self["policy_init_std"] <= 0:
            raise ConfigError("policy_init_std must be positive")
        return self

    def with_values(self, **overrides: object) -> "RunConfig":
        return RunConfig.from_dict(merge_config(self.values, overrides))


def worker_count(config: RunConfig) -> int:
    requested = int(config["workers"])
    cores = console.physical_core_count()
    if requested > cores:
        console.warn(f"workers capped at {cores} physical core(s)")
        return cores
    return requested


def overfit_iterations(records: Sequence[IterationRecord], initial_return: float | None = None) -> list[int]:
    """Iterations whose predicted return rose during the inner phase while the real return fell."""
    flagged = []
    previous = initial_return
    for record in records:
        rose = record.predicted_mean > record.predicted_start_mean
        if previous is not None and rose and record.real_return_mean < previous:
            flagged.append(record.iteration)
        previous = record.real_return_mean
    return flagged


def _model_returns(config: RunConfig, ensemble: ModelEnsemble, policy: GaussianPolicy, starts: np.ndarray, noise_seed: int) -> np.ndarray:
    env = config.env
    # one noise seed for every estimate in a phase: estimates differ only through the policy
    return np.array(
        [
            estimate_model_return(env, model, policy, starts, env.horizon, np.random.default_rng(noise_seed))
            for model in ensemble
        ]
    )


def _fictitious_return(config: RunConfig, ensemble: ModelEnsemble, policy: GaussianPolicy, starts: np.ndarray, noise_seed: int) -> float:
    """Mean return of one sampling-mode batch from the validation starts."""
    env = config.env
    batch = simulate_fictitious(
        env, ensemble, policy, starts, env.horizon, str(config["sampling_mode"]),
        np.random.default_rng(noise_seed), int(config["sampling_member"]),
    )
    return float(np.mean(batch.returns()))


@dataclass(frozen=True, eq=False)
class InnerPhase:
    policy: GaussianPolicy
    updates: int
    start_returns: np.ndarray
    end_returns: np.ndarray


def _inner_phase(
    config: RunConfig,
    ensemble: ModelEnsemble,
    policy: GaussianPolicy,
    data: Dataset,
    iteration: int,
    log: RunLog | None,
) -> InnerPhase:
    env = config.env
    seed = config.seed
    tag = str(iteration)
    rng = substream(seed, "inner", tag)
    real_rng = substream(seed, "validation-real", tag)
    starts = sample_start_states(data.states("validation"), int(config["validation_starts"]), substream(seed, "validation-starts", tag))
    noise_seed = int(substream(seed, "validation-noise", tag).integers(0, 2**31 - 1))
    train_pool = data.states("train")
    trajectories = config.optimizer.trajectories_per_batch(env.horizon)
    eval_episodes = int(config["eval_episodes"])
    log_real = bool(config["log_real_at_checks"])

    controller = ValidationController(config.validation)
    start_returns = _model_returns(config, ensemble, policy, starts, noise_seed)
    start_real = None
    start_batch = None
    if controller.mode == "real":
        start_real = evaluate_real_return(env, policy, eval_episodes, real_rng)[0]
    elif controller.mode == "trpo_mean":
        start_batch = _fictitious_return(config, ensemble, policy, starts, noise_seed)
    controller.reset(old_returns=start_returns, real_return=start_real, batch_return=start_batch)

    best = policy
    adam_state = new_adam_state(policy, config.optimizer)
    updates = 0
    for _ in range(int(config["max_inner_updates"])):
        init_states = sample_start_states(train_pool, trajectories, rng)
        result = improve_policy(
            env, ensemble, policy, init_states, config.optimizer, adam_state, rng,
            str(config["sampling_mode"]), int(config["sampling_member"]),
        )
        policy, adam_state = result.policy, result.adam_state
        updates += 1

        new_returns = None
        real_return = None
        batch_return = None
        if controller.due:
            new_returns = _model_returns(config, ensemble, policy, starts, noise_seed)
            if controller.mode == "real" or log_real:
                real_return = evaluate_real_return(env, policy, eval_episodes, real_rng)[0]
            if controller.mode == "trpo_mean":
                # the update's own batch was drawn before the step; score the stepped policy
                batch_return = _fictitious_return(config, ensemble, policy, starts, noise_seed)
        verdict = controller.check_and_update(new_returns, real_return=real_return, batch_return=batch_return)
        if verdict.passed:
            best = policy

        diagnostics = result.diagnostics
        if log is not None:
            log.append_update(
                {
                    "iteration": iteration,
                    "update": verdict.update_index,
                    "optimizer": diagnostics.optimizer,
                    "surrogate": diagnostics.surrogate,
                    "kl": diagnostics.kl,
                    "grad_norm": diagnostics.grad_norm,
                    "line_search_steps": diagnostics.line_search_steps,
                    "batch_return": diagnostics.batch_return,
                    "validation_mode": controller.mode,
                    "ratio": verdict.ratio if verdict.checked else None,
                    "continue": verdict.continue_flag,
                    "predicted_mean": float(np.mean(new_returns)) if new_returns is not None else None,
                    "real_return": real_return,
                }
            )
        console.dim(
            f"iteration {iteration} update {verdict.update_index}: batch return {diagnostics.batch_return:.3f}"
            + (f", ratio {verdict.ratio:.2f}" if verdict.checked else "")
        )
        if not verdict.continue_flag:
            break

    if bool(config["restore_best_policy"]) and controller.mode not in FIXED_BUDGETS:
        policy = best
    end_returns = _model_returns(config, ensemble, policy, starts, noise_seed)
    return InnerPhase(policy, updates, start_returns, end_returns)


@dataclass
class RunState:
    policy: GaussianPolicy
    initial_return: float
    ensemble: ModelEnsemble | None = None
    data: Dataset | None = None


def _initial_state(config: RunConfig) -> RunState:
    env = config.env
    policy = create_policy(
        env.state_dim,
        env.action_dim,
        [int(size) for size in config["policy_hidden_sizes"]],
        substream(config.seed, "policy-init"),
        float(config["policy_init_std"]),
    )
    initial, _ = evaluate_real_return(env, policy, int(config["eval_episodes"]), substream(config.seed, "evaluation", "initial"))
    return RunState(policy, initial)


def _reached_target(config: RunConfig, record: IterationRecord) -> bool:
    target = config["target_return"]
    return target is not None and record.real_return_mean >= float(target)


def _run_model_based(config: RunConfig, log: RunLog | None, state: RunState) -> list[IterationRecord]:
    env = config.env
    seed = config.seed
    workers = worker_count(config)
    episodes_per_iteration = config.exploration.timesteps_per_iteration // env.horizon
    previous_policy: GaussianPolicy | None = None
    records: list[IterationRecord] = []

    for iteration in range(config.iteration_budget):
        tag = str(iteration)
        episodes, _ = collect_real_samples(
            env,
            state.policy,
            config.exploration,
            substream(seed, "explore", tag),
            previous_policy,
            first_episode_id=iteration * episodes_per_iteration,
        )
        state.data = split_dataset(episodes, substream(seed, "split", tag), state.data)
        warm = state.ensemble if bool(config["model_warm_start"]) else None
        state.ensemble = train_ensemble(config.models, state.data, config.model, substream(seed, "models", tag), warm, workers)

        phase = _inner_phase(config, state.ensemble, state.policy, state.data, iteration, log)
        previous_policy = state.policy
        state.policy = phase.policy

        mean, stderr = evaluate_real_return(env, state.policy, int(config["eval_episodes"]), substream(seed, "evaluation", tag))
        record = IterationRecord(
            iteration=iteration,
            real_steps=(iteration + 1) * config.exploration.timesteps_per_iteration,
            real_return_mean=mean,
            real_return_stderr=stderr,
            predicted_returns=tuple(float(value) for value in phase.end_returns),
            model_losses=tuple(float(loss) for loss in state.ensemble.validation_losses),
            inner_updates=phase.updates,
            predicted_start=tuple(float(value) for value in phase.start_returns),
        )
        records.append(record)
        if log is not None:
            log.append_iteration(record)
        console.info(
            f"iteration {iteration}: real return {mean:.2f} +/- {stderr:.2f}, "
            f"predicted {record.predicted_mean:.2f}, {phase.updates} inner update(s)"
        )
        if _reached_target(config, record):
            console.success(f"target return reached after {record.real_steps} real steps")
            break
    return records


def run_metrpo(config: RunConfig, log: RunLog | None = None, state: RunState | None = None) -> list[IterationRecord]:
    """Ensemble model-based loop: collect, split, fit the ensemble, optimize in the models, evaluate."""
    if config.algorithm != "metrpo":
        config = config.with_values(algorithm="metrpo")
    return _run_model_based(config, log, state or _initial_state(config))


def run_vanilla(config: RunConfig, log: RunLog | None = None, state: RunState | None = None) -> list[IterationRecord]:
    """Single-model loop with BPTT inner updates and single-model early stopping."""
    if config.algorithm != "vanilla_bptt":
        config = config.with_values(algorithm="vanilla_bptt")
    return _run_model_based(config, log, state or _initial_state(config))


def _real_batch(env: EnvSpec, policy: GaussianPolicy, steps: int, rng: np.random.Generator) -> TrajectoryBatch:
    episodes, raw_actions = [], []
    for episode_id in range(steps // env.horizon):
        s0 = sample_initial_states(env, 1, rng)[0]
        states, raw, rewards = run_episode(env, lambda s, t: policy.sample_action(s, rng), s0)
        episodes.append(Episode(episode_id, states, env.clip_action(raw), rewards))
        raw_actions.append(raw)
    return TrajectoryBatch.from_episodes(episodes, raw_actions)


def run_model_free(config: RunConfig, log: RunLog | None = None, state: RunState | None = None) -> list[IterationRecord]:
    """Real-environment TRPO baseline; every policy sample costs real steps."""
    env = config.env
    state = state or _initial_state(config)
    batch_steps = config.steps_per_iteration
    step_size = float(config["baseline_trpo_step_size"])
    records: list[IterationRecord] = []
    for iteration in range(config.iteration_budget):
        tag = str(iteration)
        batch = _real_batch(env, state.policy, batch_steps, substream(config.seed, "explore", tag))
        result = trpo_update(state.policy, batch, config.optimizer, step_size=step_size)
        state.policy = result.policy
        mean, stderr = evaluate_real_return(env, state.policy, int(config["eval_episodes"]), substream(config.seed, "evaluation", tag))
        record = IterationRecord(iteration, (iteration + 1) * batch_steps, mean, stderr, inner_updates=1)
        records.append(record)
        if log is not None:
            diagnostics = result.diagnostics
            log.append_update(
                {
                    "iteration": iteration,
                    "update": 1,
                    "optimizer": "trpo",
                    "surrogate": diagnostics.surrogate,
                    "kl": diagnostics.kl,
                    "grad_norm": diagnostics.grad_norm,
                    "line_search_steps": diagnostics.line_search_steps,
                    "batch_return": diagnostics.batch_return,
                    "validation_mode": "",
                    "continue": True,
                }
            )
            log.append_iteration(record)
        console.info(f"iteration {iteration}: real return {mean:.2f} +/- {stderr:.2f}")
        if _reached_target(config, record):
            console.success(f"target return reached after {record.real_steps} real steps")
            break
    return records


RUNNERS = {"metrpo": run_metrpo, "vanilla_bptt": run_vanilla, "trpo_real": run_model_free}


def run_experiment(config: RunConfig, out_dir: Path | str | None = None) -> list[IterationRecord]:
    """Run the configured algorithm and persist logs, checkpoints and the summary."""
    out = Path(out_dir if out_dir is not None else str(config["out"]))
    log = RunLog(out, config.to_dict())
    state = _initial_state(config)
    records = RUNNERS[config.algorithm](config, log, state)

    checkpoints = out / "checkpoints"
    metadata = {"env": config["env"], "env_params": config["env_params"], "algorithm": config.algorithm, "seed": config.seed}
    save_policy(checkpoints / "policy", state.policy, metadata)
    if state.ensemble is not None:
        save_ensemble(checkpoints / "ensemble", state.ensemble)
    if state.data is not None:
        save_dataset_csv(out / "dataset.csv", state.data)

    final = records[-1] if records else None
    log.write_summary(
        {
            "algorithm": config.algorithm,
            "env": config["env"],
            "seed": config.seed,
            "initial_return": state.initial_return,
            "iterations": len(records),
            "real_steps": final.real_steps if final else 0,
            "final_return_mean": final.real_return_mean if final else state.initial_return,
            "final_return_stderr": final.real_return_stderr if final else 0.0,
            "overfit_iterations": overfit_iterations(records, state.initial_return),
            "host": console.get_system_info(),
        }
    )
    return records


def _parse_axis_value(axis: str, value: object) -> object:
    if axis == "K":
        try:
            return int(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"ensemble size '{value}' is not an integer") from exc
    return str(value)


def run_ablation(
    base: dict[str, object],
    axis: str,
    values: Sequence[object],
    seeds: Sequence[int],
    out_dir: Path | str,
) -> dict[str, list[dict[str, object]]]:
    """Cross product of ``values`` x ``seeds``; a failing cell is reported and the others still run."""
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis '{axis}' (known: {', '.join(ABLATION_AXES)})")
    if not values:
        raise ConfigError("ablation needs at least one value")
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    parsed = [_parse_axis_value(axis, value) for value in values]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    table: dict[str, list[dict[str, object]]] = {}
    for value in parsed:
        cells = table.setdefault(str(value), [])
        for seed in seeds:
            cell_dir = out / f"{axis}={value}" / f"seed={seed}"
            cell = {"axis": axis, "value": str(value), "seed": int(seed), "status": "ok"}
            try:
                config = RunConfig.from_dict(merge_config(base, {ABLATION_AXES[axis]: value, "seed": int(seed)}))
                records = run_experiment(config, cell_dir)
                cell["curve"] = [(record.real_steps, record.real_return_mean) for record in records]
                cell["final_return_mean"] = records[-1].real_return_mean if records else None
            except (MetrpoError, OSError) as exc:
                console.warn(f"ablation cell {axis}={value} seed={seed} failed: {exc}")
                cell["status"] = f"failed: {exc}"
                cell["curve"] = []
                cell["final_return_mean"] = None
            cells.append(cell)

    with (out / "summary.csv").open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["axis", "value", "seed", "status", "final_return_mean"])
        for cells in table.values():
            for cell in cells:
                final = cell["final_return_mean"]
                writer.writerow([axis, cell["value"], cell["seed"], cell["status"], "" if final is None else format(final, ".17g")])

    summary = {}
    for value, cells in table.items():
        finals = [cell["final_return_mean"] for cell in cells if cell["final_return_mean"] is not None]
        mean, stderr = mean_and_stderr(finals)
        summary[value] = {"final_return_mean": mean if finals else None, "final_return_stderr": stderr, "runs": len(finals)}
    with (out / "summary.json").open("w", encoding="utf-8") as handle:
        json.dump({"axis": axis, "cells": summary}, handle, indent=2, sort_keys=True)
    return table


def evaluate_checkpoint(checkpoint: Path | str, episodes: int = 10, seed: int = 0, deterministic: bool = False) -> tuple[float, float]:
    path = Path(checkpoint)
    if path.is_dir():
        path = path / "checkpoints" / "policy" if (path / "checkpoints").is_dir() else path / "policy"
    policy, metadata = load_policy(path)
    env = make_env(str(metadata.get("env", "pendulum")), metadata.get("env_params") or {})
    return evaluate_real_return(env, policy, episodes, substream(seed, "checkpoint-eval"), deterministic)


def replay_run(log_path: Path | str, out_dir: Path | str) -> tuple[bool, Path]:
    """Re-run the configuration recorded in a run log; True when the new log is byte-identical."""
    values, _ = read_run_header(log_path)
    config = RunConfig.from_dict(values)
    out = Path(out_dir)
    if out.resolve() == Path(log_path).resolve().parent:
        raise ConfigError("replay output directory must differ from the original run")
    run_experiment(config, out)
    replayed = out / RUN_LOG
    return Path(log_path).read_bytes() == replayed.read_bytes(), replayed


def success_threshold(reference: float) -> float:
    """Return a policy must reach to count as a swing-up, relative to the reference controller."""
    # rewards are costs: 90 % of the reference means tolerating ~11 % more cost
    return reference / SUCCESS_FRACTION if reference < 0 else reference * SUCCESS_FRACTION
