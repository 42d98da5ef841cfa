from __future__ import annotations

import console
from experiment import load_config, run_experiment

from .flags import parse_flags, resolve_path

aliases = ["train"]
num_arguments = 0
switches = ()

USAGE = (
    "Usage: metrpo train [--config FILE] [--algorithm metrpo|vanilla_bptt|trpo_real] [--seed N] [--env ID] "
    "[--models K] [--sampling-mode MODE] [--validation-mode MODE] [--out DIR] [--<config-key> VALUE ...]"
)


def run(working_folder, *args):
    options, positionals = parse_flags(args, switches)
    if positionals:
        console.plain(USAGE)
        return 2

    config_path = options.pop("config", None)
    if config_path is not None:
        config_path = resolve_path(working_folder, config_path)
    config = load_config(config_path, options)
    out = resolve_path(working_folder, str(config["out"]))

    console.info(f"training {config.algorithm} on {config['env']} (seed {config.seed}, {config.models} model(s)) -> {out}")
    records = run_experiment(config, out)
    if records:
        final = records[-1]
        console.success(
            f"done: real return {final.real_return_mean:.2f} +/- {final.real_return_stderr:.2f} "
            f"after {final.real_steps} real steps"
        )
    else:
        console.success("done: no outer iterations in the budget")
    return 0
