from __future__ import annotations

import console
from experiment import evaluate_checkpoint

from .flags import parse_flags, pop_int, resolve_path

aliases = ["eval", "evaluate"]
num_arguments = 0
switches = ("deterministic",)

USAGE = "Usage: metrpo eval --checkpoint DIR [--episodes N] [--seed S] [--deterministic]"


def run(working_folder, *args):
    options, positionals = parse_flags(args, switches)
    if positionals or "checkpoint" not in options:
        console.plain(USAGE)
        return 2
    checkpoint = resolve_path(working_folder, str(options.pop("checkpoint")))
    episodes = pop_int(options, "episodes", 10)
    seed = pop_int(options, "seed", 0)
    deterministic = bool(options.pop("deterministic", False))
    if options:
        console.error(f"eval: unknown option --{next(iter(options))}")
        return 2

    mean, stderr = evaluate_checkpoint(checkpoint, episodes, seed, deterministic)
    console.plain(f"real return {mean:.3f} +/- {stderr:.3f} over {episodes} episode(s)")
    return 0
