from __future__ import annotations

import csv
import json
import math

import pytest

from errors import CheckpointError
from runlog import (
    RUN_COLUMNS,
    UPDATE_COLUMNS,
    IterationRecord,
    RunLog,
    code_version_hash,
    format_number,
    read_records,
    read_run_header,
)


def test_format_number():
    assert format_number(None) == ""
    assert format_number(True) == "1"
    assert format_number(3) == "3"
    assert format_number(0.1) == "0.10000000000000001"
    assert float(format_number(-123.456)) == -123.456


def test_record_means():
    record = IterationRecord(0, 30, -1.0, 0.0, predicted_returns=(1.0, 3.0), predicted_start=(0.0, 1.0))
    assert record.predicted_mean == 2.0
    assert record.predicted_start_mean == 0.5
    assert math.isnan(IterationRecord(0, 30, -1.0, 0.0).predicted_mean)


def test_run_log_headers(tmp_path):
    config = {"seed": 3, "env": "pendulum"}
    log = RunLog(tmp_path, config, code_hash="abc123")
    lines = log.run_path.read_text().splitlines()
    assert lines[0] == '# config: {"env": "pendulum", "seed": 3}'
    assert lines[1] == "# code: abc123"
    assert lines[2] == ",".join(RUN_COLUMNS)
    assert log.updates_path.read_text().splitlines() == [",".join(UPDATE_COLUMNS)]
    assert read_run_header(log.run_path) == (config, "abc123")


def test_iterations_read_back(tmp_path):
    log = RunLog(tmp_path, {}, code_hash="x")
    written = [
        IterationRecord(0, 30, -12.5, 0.25, (1.0, 2.0), (0.5, 0.75), 6, (0.0, 0.0)),
        IterationRecord(1, 60, -3.0, 0.125, (4.0,), (0.25,), 2, (1.0,)),
    ]
    for record in written:
        log.append_iteration(record)
    records = read_records(log.run_path)
    assert [r.iteration for r in records] == [0, 1]
    assert records[0].predicted_returns == (1.0, 2.0)
    assert records[1].model_losses == (0.25,)
    assert records[0].predicted_start_mean == 0.0
    assert records[1].inner_updates == 2


def test_update_rows(tmp_path):
    log = RunLog(tmp_path, {}, code_hash="x")
    log.append_update({"iteration": 0, "update": 1, "optimizer": "trpo", "kl": 0.005, "continue": True, "validation_mode": "ensemble"})
    with log.updates_path.open() as handle:
        rows = list(csv.DictReader(handle))
    assert rows[0]["optimizer"] == "trpo"
    assert rows[0]["continue"] == "1"
    assert float(rows[0]["kl"]) == 0.005
    assert rows[0]["ratio"] == ""


def test_summary_is_json(tmp_path):
    log = RunLog(tmp_path, {}, code_hash="x")
    path = log.write_summary({"iterations": 2, "final_return_mean": -1.5})
    assert json.loads(path.read_text())["iterations"] == 2


def test_missing_or_headerless_log(tmp_path):
    with pytest.raises(CheckpointError):
        read_run_header(tmp_path / "missing.csv")
    plain = tmp_path / "plain.csv"
    plain.write_text("iteration,real_steps\n")
    with pytest.raises(CheckpointError):
        read_run_header(plain)


def test_code_hash_follows_content(tmp_path):
    source = tmp_path / "module.py"
    source.write_text("VALUE = 1\n")
    first = code_version_hash([source])
    assert code_version_hash([source]) == first
    source.write_text("VALUE = 2\n")
    assert code_version_hash([source]) != first


def test_package_code_hash_is_stable():
    assert code_version_hash() == code_version_hash()
    assert len(code_version_hash()) == 40
