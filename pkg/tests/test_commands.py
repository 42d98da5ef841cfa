from __future__ import annotations

import json

import pytest

import console
import metrpo
from commands import commandHelper
from commands.flags import parse_flags, pop_int, resolve_path, split_list
from errors import ConfigError


@pytest.fixture
def loud():
    console.set_verbosity(console.NORMAL)


@pytest.fixture
def config_file(tmp_path, small_run):
    path = tmp_path / "small.json"
    path.write_text(json.dumps({**small_run, "outer_iterations": 1}))
    return path


def test_parse_flags():
    options, positionals = parse_flags(["--seed", "3", "--dense", "--out=runs/x", "extra", "--", "--literal"], ("dense",))
    assert options == {"seed": "3", "dense": True, "out": "runs/x"}
    assert positionals == ["extra", "--literal"]


def test_parse_flags_errors():
    with pytest.raises(ConfigError):
        parse_flags(["--seed"])
    with pytest.raises(ConfigError):
        parse_flags(["--dense=yes"], ("dense",))


def test_flag_helpers(tmp_path):
    assert split_list("a, b,,c") == ["a", "b", "c"]
    assert resolve_path(str(tmp_path), "runs/a") == str(tmp_path / "runs" / "a")
    assert resolve_path(str(tmp_path), "/abs/path") == "/abs/path"
    options = {"episodes": "4"}
    assert pop_int(options, "episodes", 10) == 4 and options == {}
    assert pop_int(options, "seed", 0) == 0
    with pytest.raises(ConfigError):
        pop_int({"seed": "x"}, "seed", 0)


def test_unknown_command():
    assert commandHelper.run(".", "fly") == (False, 2)


def test_version(capsys, loud):
    assert commandHelper.run(".", "--version") == (True, 0)
    assert console.PROGRAM_VERSION in capsys.readouterr().out


def test_info_lists_host(capsys, loud):
    assert commandHelper.run(".", "info") == (True, 0)
    out = capsys.readouterr().out
    assert "numpy" in out


def test_positional_arguments_rejected(capsys, loud):
    assert commandHelper.run(".", "version", "extra") == (True, 2)


def test_config_errors_exit_with_two(tmp_path, capsys):
    known, code = commandHelper.run(str(tmp_path), "train", "--models", "many")
    assert (known, code) == (True, 2)
    assert "train:" in capsys.readouterr().err


def test_train_and_eval(tmp_path, config_file, capsys, loud):
    assert commandHelper.run(str(tmp_path), "train", "--config", str(config_file), "--out", "run") == (True, 0)
    assert (tmp_path / "run" / "run.csv").exists()
    assert commandHelper.run(str(tmp_path), "eval", "--checkpoint", "run", "--episodes", "2", "--deterministic") == (True, 0)
    assert "real return" in capsys.readouterr().out


def test_eval_missing_checkpoint_fails(tmp_path):
    assert commandHelper.run(str(tmp_path), "evaluate", "--checkpoint", "nowhere") == (True, 1)


def test_eval_rejects_unknown_option(tmp_path):
    assert commandHelper.run(str(tmp_path), "eval", "--checkpoint", "x", "--colour", "red") == (True, 2)


def test_replay_command(tmp_path, config_file):
    commandHelper.run(str(tmp_path), "train", "--config", str(config_file), "--out", "run")
    assert commandHelper.run(str(tmp_path), "replay", "--log", "run/run.csv") == (True, 0)
    assert (tmp_path / "run" / "replay" / "run.csv").exists()


def test_ablate_command(tmp_path, config_file):
    code = commandHelper.run(
        str(tmp_path), "ablate", "--config", str(config_file), "--axis", "K", "--values", "1,2", "--seeds", "0", "--out", "abl"
    )
    assert code == (True, 0)
    assert (tmp_path / "abl" / "summary.json").exists()


def test_ablate_needs_axis_and_values(tmp_path):
    assert commandHelper.run(str(tmp_path), "ablate", "--axis", "K") == (True, 2)


def test_demo_bias_command(tmp_path, capsys, loud):
    assert commandHelper.run(str(tmp_path), "demo-bias", "--seed", "1", "--out", "demo") == (True, 0)
    assert (tmp_path / "demo" / "curve.csv").exists()
    assert "argmin" in capsys.readouterr().out


def test_main_help_and_unknown(capsys):
    assert metrpo.main(["--help"]) == 0
    assert metrpo.main([]) == 2
    assert metrpo.main(["--quiet", "fly"]) == 2
    assert "command not found" in capsys.readouterr().err


def test_main_dispatches(capsys):
    assert metrpo.main(["--verbose", "version"]) == 0
    assert console.get_verbosity() == console.VERBOSE
    assert console.PROGRAM_DISPLAY_NAME in capsys.readouterr().out


def test_console_colours_each_message_kind(monkeypatch, capsys, loud):
    monkeypatch.setattr(console, "_use_color", lambda stream: True)
    console.info("fitting")
    console.success("done")
    console.warn("truncated")
    console.error("broken")
    captured = capsys.readouterr()
    assert captured.out == (
        f"{console.bcolors.INFO}metrpo: fitting{console.bcolors.ENDC}\n"
        f"{console.bcolors.SUCCESS}metrpo: done{console.bcolors.ENDC}\n"
    )
    assert captured.err.splitlines() == [
        f"{console.bcolors.WARNING}metrpo: truncated{console.bcolors.ENDC}",
        f"{console.bcolors.FAIL}metrpo: broken{console.bcolors.ENDC}",
    ]


def test_console_stays_plain_off_a_terminal(capsys, loud):
    console.info("fitting")
    assert capsys.readouterr().out == "metrpo: fitting\n"
