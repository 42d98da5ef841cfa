from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from errors import CheckpointError

PACKAGE_DIR = Path(__file__).resolve().parent
RUN_LOG = "run.csv"
UPDATES_LOG = "updates.csv"
SUMMARY = "summary.json"
CONFIG_PREFIX = "# config: "
CODE_PREFIX = "# code: "

RUN_COLUMNS = [
    "iteration",
    "real_steps",
    "real_return_mean",
    "real_return_stderr",
    "inner_updates",
    "predicted_start_mean",
    "predicted_end_mean",
    "predicted_returns",
    "model_losses",
]
UPDATE_COLUMNS = [
    "iteration",
    "update",
    "optimizer",
    "surrogate",
    "kl",
    "grad_norm",
    "line_search_steps",
    "batch_return",
    "validation_mode",
    "ratio",
    "continue",
    "predicted_mean",
    "real_return",
]
TEXT_COLUMNS = ("optimizer", "validation_mode")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    real_steps: int
    real_return_mean: float
    real_return_stderr: float
    predicted_returns: tuple[float, ...] = ()
    model_losses: tuple[float, ...] = ()
    inner_updates: int = 0
    predicted_start: tuple[float, ...] = ()

    @property
    def predicted_mean(self) -> float:
        return sum(self.predicted_returns) / len(self.predicted_returns) if self.predicted_returns else math.nan

    @property
    def predicted_start_mean(self) -> float:
        return sum(self.predicted_start) / len(self.predicted_start) if self.predicted_start else math.nan


def format_number(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return format(float(value), ".17g")


def _join(values: Iterable[float]) -> str:
    return ";".join(format_number(value) for value in values)


def _split(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(";") if part)


def record_row(record: IterationRecord) -> list[str]:
    return [
        str(record.iteration),
        str(record.real_steps),
        format_number(record.real_return_mean),
        format_number(record.real_return_stderr),
        str(record.inner_updates),
        format_number(record.predicted_start_mean),
        format_number(record.predicted_mean),
        _join(record.predicted_returns),
        _join(record.model_losses),
    ]


def code_version_hash(paths: Sequence[Path] | None = None) -> str:
    """Content hash of the package sources, one git blob hash per file folded into one digest."""
    if paths is None:
        paths = sorted(PACKAGE_DIR.glob("*.py")) + sorted((PACKAGE_DIR / "commands").glob("*.py"))
    digest = hashlib.sha1()
    for path in paths:
        content = Path(path).read_bytes()
        blob = hashlib.sha1(b"blob %d\0" % len(content) + content).hexdigest()
        name = Path(path).relative_to(PACKAGE_DIR).as_posix() if Path(path).is_relative_to(PACKAGE_DIR) else Path(path).name
        digest.update(f"{blob} {name}\n".encode("utf-8"))
    return digest.hexdigest()


class RunLog:
    """Append-only CSV logs of one run; every row is flushed so aborted runs keep a partial log."""

    def __init__(self, out_dir: Path | str, config: dict[str, object], code_hash: str | None = None) -> None:
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.run_path = self.out_dir / RUN_LOG
        self.updates_path = self.out_dir / UPDATES_LOG
        code_hash = code_version_hash() if code_hash is None else code_hash
        header = f"{CONFIG_PREFIX}{json.dumps(config, sort_keys=True)}\n{CODE_PREFIX}{code_hash}\n"
        with self.run_path.open("w", encoding="utf-8", newline="") as handle:
            handle.write(header)
            csv.writer(handle, lineterminator="\n").writerow(RUN_COLUMNS)
        with self.updates_path.open("w", encoding="utf-8", newline="") as handle:
            csv.writer(handle, lineterminator="\n").writerow(UPDATE_COLUMNS)

    def _append(self, path: Path, row: list[str]) -> None:
        with path.open("a", encoding="utf-8", newline="") as handle:
            csv.writer(handle, lineterminator="\n").writerow(row)
            handle.flush()

    def append_iteration(self, record: IterationRecord) -> None:
        self._append(self.run_path, record_row(record))

    def append_update(self, values: dict[str, object]) -> None:
        row = []
        for column in UPDATE_COLUMNS:
            value = values.get(column)
            row.append(str(value or "") if column in TEXT_COLUMNS else format_number(value))
        self._append(self.updates_path, row)

    def write_summary(self, summary: dict[str, object]) -> Path:
        path = self.out_dir / SUMMARY
        with path.open("w", encoding="utf-8") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
        return path


def read_run_header(path: Path | str) -> tuple[dict[str, object], str]:
    config: dict[str, object] | None = None
    code_hash = ""
    try:
        with Path(path).open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.startswith(CONFIG_PREFIX):
                    config = json.loads(line[len(CONFIG_PREFIX):])
                elif line.startswith(CODE_PREFIX):
                    code_hash = line[len(CODE_PREFIX):].strip()
                else:
                    break
    except FileNotFoundError as exc:
        raise CheckpointError(f"run log not found: {path}") from exc
    if config is None:
        raise CheckpointError(f"{path} has no '{CONFIG_PREFIX.strip()}' header line")
    return config, code_hash


def read_records(path: Path | str) -> list[IterationRecord]:
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        rows = [line for line in handle if not line.startswith("#")]
    records = []
    for row in csv.DictReader(rows):
        records.append(
            IterationRecord(
                iteration=int(row["iteration"]),
                real_steps=int(row["real_steps"]),
                real_return_mean=float(row["real_return_mean"]),
                real_return_stderr=float(row["real_return_stderr"]),
                predicted_returns=_split(row["predicted_returns"]),
                model_losses=_split(row["model_losses"]),
                inner_updates=int(row["inner_updates"]),
                predicted_start=_split(row["predicted_start_mean"]) if row["predicted_start_mean"] != "nan" else (),
            )
        )
    return records
