from __future__ import annotations

import json

import numpy as np
import pytest

import console
import experiment
from errors import ConfigError
from experiment import (
    DEFAULT_CONFIG,
    RunConfig,
    evaluate_checkpoint,
    load_config,
    load_config_dict,
    merge_config,
    overfit_iterations,
    replay_run,
    run_ablation,
    run_experiment,
    substream,
    success_threshold,
    worker_count,
)
from dynamics import load_ensemble
from environments import make_env
from optimizers import UpdateDiagnostics, UpdateResult
from policy import create_policy
from runlog import IterationRecord, read_records


def test_defaults_are_copied():
    config = load_config_dict()
    config["model_hidden_sizes"].append(7)
    assert DEFAULT_CONFIG["model_hidden_sizes"] == [256, 256]


def test_default_config_is_valid():
    config = load_config()
    assert config.algorithm == "metrpo"
    assert config.models == 5
    assert config.env.horizon == 200
    assert config.optimizer.trajectories_per_batch(200) == 50


def test_overrides_accept_dashes_and_strings():
    merged = merge_config(DEFAULT_CONFIG, {"sampling-mode": "model_mean", "models": "3", "model_hidden_sizes": "[16, 16]", "target_return": "-150"})
    assert merged["sampling_mode"] == "model_mean"
    assert merged["models"] == 3
    assert merged["model_hidden_sizes"] == [16, 16]
    assert merged["target_return"] == -150


@pytest.mark.parametrize("overrides", [{"learning_rate_typo": 1}, {"models": "three"}, {"models": 2.5}, {"restore_best_policy": 1}])
def test_bad_overrides_rejected(overrides):
    with pytest.raises(ConfigError):
        merge_config(DEFAULT_CONFIG, overrides)


def test_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 4, "models": 2}))
    config = load_config(path, {"models": 3})
    assert config.seed == 4
    assert config.models == 3
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(path)


def test_vanilla_forces_single_model(small_run):
    config = RunConfig.from_dict({**small_run, "algorithm": "vanilla_bptt", "models": 4, "sampling_mode": "model_mean"})
    assert config.models == 1
    assert config["sampling_mode"] == "one_model"
    assert config.validation.mode == "one_model"
    assert config.optimizer.kind == "bptt"


@pytest.mark.parametrize("changes", [
    {"timesteps_per_iteration": 25},
    {"timesteps_per_iteration": 20},
    {"model_free_batch_size": 15},
    {"algorithm": "dyna"},
    {"sampling_mode": "model_max"},
    {"sampling_member": 2},
    {"validation_mode": "sometimes"},
    {"fictitious_batch_size": 5},
    {"eval_episodes": 0},
])
def test_invalid_run_configs(small_run, changes):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**small_run, **changes})


def test_model_free_runs_need_no_split(small_run):
    config = RunConfig.from_dict({**small_run, "algorithm": "trpo_real", "timesteps_per_iteration": 10})
    assert config.steps_per_iteration == 20


def test_iteration_budget(small_run):
    assert RunConfig.from_dict(small_run).iteration_budget == 2
    assert RunConfig.from_dict({**small_run, "max_real_steps": 45}).iteration_budget == 1
    assert RunConfig.from_dict({**small_run, "max_real_steps": 10}).iteration_budget == 0


def test_substreams_are_named_and_reproducible():
    first = substream(0, "explore", "1").integers(0, 2**31, size=4)
    again = substream(0, "explore", "1").integers(0, 2**31, size=4)
    other = substream(0, "explore", "2").integers(0, 2**31, size=4)
    reseeded = substream(1, "explore", "1").integers(0, 2**31, size=4)
    assert np.array_equal(first, again)
    assert not np.array_equal(first, other)
    assert not np.array_equal(first, reseeded)


def test_worker_count_capped_by_cores(monkeypatch, small_run):
    monkeypatch.setattr(console, "physical_core_count", lambda: 2)
    assert worker_count(RunConfig.from_dict({**small_run, "workers": 8})) == 2
    assert worker_count(RunConfig.from_dict({**small_run, "workers": 1})) == 1


def test_overfit_iterations():
    records = [
        IterationRecord(0, 30, -50.0, 0.0, predicted_returns=(5.0,), predicted_start=(1.0,)),
        IterationRecord(1, 60, -80.0, 0.0, predicted_returns=(9.0,), predicted_start=(2.0,)),
        IterationRecord(2, 90, -90.0, 0.0, predicted_returns=(1.0,), predicted_start=(2.0,)),
    ]
    assert overfit_iterations(records, initial_return=-100.0) == [1]
    assert overfit_iterations(records) == [1]


def test_success_threshold():
    assert success_threshold(-200.0) == pytest.approx(-222.2222, abs=1e-3)
    assert success_threshold(100.0) == pytest.approx(90.0)


def test_zero_budget_run(tmp_path, small_run):
    config = RunConfig.from_dict({**small_run, "outer_iterations": 0})
    records = run_experiment(config, tmp_path / "run")
    assert records == []
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert summary["iterations"] == 0
    assert summary["real_steps"] == 0
    assert (tmp_path / "run" / "checkpoints" / "policy.json").exists()
    assert not (tmp_path / "run" / "dataset.csv").exists()
    assert read_records(tmp_path / "run" / "run.csv") == []


def test_metrpo_run_writes_everything(tmp_path, small_run):
    out = tmp_path / "run"
    records = run_experiment(RunConfig.from_dict(small_run), out)
    assert [record.real_steps for record in records] == [30, 60]
    assert all(1 <= record.inner_updates <= 6 for record in records)
    assert all(len(record.predicted_returns) == 2 for record in records)
    assert all(np.isfinite(record.real_return_mean) for record in records)
    assert read_records(out / "run.csv")[1].real_steps == 60
    assert len(load_ensemble(out / "checkpoints" / "ensemble")) == 2
    assert (out / "dataset.csv").read_text().count("\n") == 1 + 60
    update_rows = (out / "updates.csv").read_text().splitlines()[1:]
    assert len(update_rows) == sum(record.inner_updates for record in records)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["iterations"] == 2
    assert "host" in summary and "overfit_iterations" in summary

    mean, stderr = evaluate_checkpoint(out, episodes=3, seed=1)
    assert np.isfinite(mean) and stderr >= 0.0


def test_runs_are_reproducible(tmp_path, small_run):
    config = RunConfig.from_dict({**small_run, "outer_iterations": 1})
    run_experiment(config, tmp_path / "first")
    run_experiment(config, tmp_path / "second")
    assert (tmp_path / "first" / "run.csv").read_bytes() == (tmp_path / "second" / "run.csv").read_bytes()
    assert (tmp_path / "first" / "updates.csv").read_bytes() == (tmp_path / "second" / "updates.csv").read_bytes()


def test_replay_reproduces_the_log(tmp_path, small_run):
    run_experiment(RunConfig.from_dict({**small_run, "outer_iterations": 1}), tmp_path / "run")
    identical, replayed = replay_run(tmp_path / "run" / "run.csv", tmp_path / "replay")
    assert identical
    assert replayed == tmp_path / "replay" / "run.csv"
    with pytest.raises(ConfigError):
        replay_run(tmp_path / "run" / "run.csv", tmp_path / "run")


def test_vanilla_run_trains_one_model(tmp_path, small_run):
    records = run_experiment(RunConfig.from_dict({**small_run, "algorithm": "vanilla_bptt", "outer_iterations": 1}), tmp_path / "run")
    assert len(records) == 1
    assert len(records[0].predicted_returns) == 1
    assert len(load_ensemble(tmp_path / "run" / "checkpoints" / "ensemble")) == 1
    rows = (tmp_path / "run" / "updates.csv").read_text().splitlines()[1:]
    assert all(",bptt," in row for row in rows)


def test_model_free_baseline(tmp_path, small_run):
    records = run_experiment(RunConfig.from_dict({**small_run, "algorithm": "trpo_real"}), tmp_path / "run")
    assert [record.real_steps for record in records] == [20, 40]
    assert all(record.inner_updates == 1 for record in records)
    assert not (tmp_path / "run" / "checkpoints" / "ensemble.json").exists()


def test_target_return_ends_run_early(tmp_path, small_run):
    records = run_experiment(RunConfig.from_dict({**small_run, "target_return": -1e9}), tmp_path / "run")
    assert len(records) == 1


@pytest.mark.parametrize("validation_mode", ["one_model", "trpo_mean", "real", "no_early_5"])
def test_inner_phase_validation_modes(tmp_path, small_run, validation_mode):
    config = RunConfig.from_dict({**small_run, "outer_iterations": 1, "validation_mode": validation_mode})
    records = run_experiment(config, tmp_path / validation_mode)
    assert len(records) == 1
    if validation_mode == "no_early_5":
        assert records[0].inner_updates == 5


@pytest.mark.parametrize("optimizer", ["bptt", "vpg"])
def test_other_inner_optimizers(tmp_path, small_run, optimizer):
    records = run_experiment(RunConfig.from_dict({**small_run, "outer_iterations": 1, "optimizer": optimizer}), tmp_path / optimizer)
    assert np.isfinite(records[0].real_return_mean)


def test_ablation_argument_checks(tmp_path, small_run):
    with pytest.raises(ConfigError):
        run_ablation(small_run, "K", [], [0], tmp_path)
    with pytest.raises(ConfigError):
        run_ablation(small_run, "K", [1], [], tmp_path)
    with pytest.raises(ConfigError):
        run_ablation(small_run, "learning_rate", [1], [0], tmp_path)
    with pytest.raises(ConfigError):
        run_ablation(small_run, "K", ["many"], [0], tmp_path)


def test_ablation_runs_every_cell(tmp_path, small_run):
    base = {**small_run, "outer_iterations": 1}
    table = run_ablation(base, "sampling_mode", ["model_mean", "bogus"], [0, 1], tmp_path)
    assert [cell["status"] for cell in table["model_mean"]] == ["ok", "ok"]
    assert all(cell["status"].startswith("failed") for cell in table["bogus"])
    assert (tmp_path / "sampling_mode=model_mean" / "seed=1" / "run.csv").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["cells"]["model_mean"]["runs"] == 2
    assert summary["cells"]["bogus"]["final_return_mean"] is None
    assert (tmp_path / "summary.csv").read_text().count("\n") == 5


def test_ablation_over_ensemble_size(tmp_path, small_run):
    table = run_ablation({**small_run, "outer_iterations": 1}, "K", ["1", "3"], [0], tmp_path)
    assert list(table) == ["1", "3"]
    assert len(load_ensemble(tmp_path / "K=3" / "seed=0" / "checkpoints" / "ensemble")) == 3


def test_every_algorithm_has_a_runner():
    assert set(experiment.RUNNERS) == set(experiment.ALGORITHMS)


class _StaticData:
    def __init__(self, state_dim):
        self.pool = np.zeros((6, state_dim))

    def states(self, split="train"):
        return self.pool


def test_trpo_mean_restores_the_policy_it_scored(monkeypatch, small_run):
    config = RunConfig.from_dict(
        {**small_run, "validation_mode": "trpo_mean", "validation_check_every": 2, "max_inner_updates": 4}
    )
    env = config.env
    start = create_policy(env.state_dim, env.action_dim, [4], np.random.default_rng(0))

    def stepped(env, ensemble, policy, init_states, cfg, adam_state, rng, mode, member):
        return UpdateResult(policy.with_flat(policy.flat + 1.0), adam_state, UpdateDiagnostics("trpo", batch_return=-1.0))

    scores = iter([0.0, 5.0, 3.0])
    scored = []

    def fictitious_return(config, ensemble, policy, starts, noise_seed):
        scored.append(policy)
        return next(scores)

    monkeypatch.setattr(experiment, "improve_policy", stepped)
    monkeypatch.setattr(experiment, "_fictitious_return", fictitious_return)
    monkeypatch.setattr(experiment, "_model_returns", lambda *args: np.zeros(2))

    phase = experiment._inner_phase(config, None, start, _StaticData(env.state_dim), 0, None)
    assert phase.updates == 4
    assert len(scored) == 3
    assert scored[0] is start
    # update 2 scored 5.0 and passed, update 4 scored 3.0 and failed
    assert phase.policy is scored[1]
    assert np.allclose(phase.policy.flat, start.flat + 2.0)


def test_real_batch_keeps_raw_actions_and_scores_clipped_ones():
    env = make_env("pointmass", {"horizon": 10, "max_force": 0.1})
    policy = create_policy(env.state_dim, env.action_dim, [4], np.random.default_rng(0), init_std=1.0)
    batch = experiment._real_batch(env, policy, 30, np.random.default_rng(1))
    assert batch.actions.shape == (3, 10, 2)
    assert np.max(np.abs(batch.actions)) > 0.1
    assert np.allclose(batch.rewards, env.reward(batch.states[:, :-1], env.clip_action(batch.actions)))
