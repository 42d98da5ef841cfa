from __future__ import annotations

import os

import console
from experiment import replay_run

from .flags import parse_flags, resolve_path

aliases = ["replay"]
num_arguments = 0
switches = ()

USAGE = "Usage: metrpo replay --log RUN_CSV [--out DIR]"


def run(working_folder, *args):
    options, positionals = parse_flags(args, switches)
    if positionals or "log" not in options:
        console.plain(USAGE)
        return 2
    log_path = resolve_path(working_folder, str(options["log"]))
    default_out = os.path.join(os.path.dirname(log_path), "replay")
    out = resolve_path(working_folder, str(options.get("out", default_out)))

    identical, replayed = replay_run(log_path, out)
    if identical:
        console.success(f"replay matches: {replayed} is byte-identical to {log_path}")
        return 0
    console.error(f"replay differs: {replayed} does not match {log_path}")
    return 1
