from __future__ import annotations

import os

import console
from bias_demo import BiasDemoConfig, run_bias_demo, suboptimal_fraction, write_curve_csv

from .flags import parse_flags, pop_int, resolve_path

aliases = ["demo-bias", "demo_bias"]
num_arguments = 0
switches = ("dense",)

USAGE = "Usage: metrpo demo-bias [--seed S] [--dense] [--seeds N] [--out DIR]"


def run(working_folder, *args):
    options, positionals = parse_flags(args, switches)
    if positionals:
        console.plain(USAGE)
        return 2
    config = BiasDemoConfig(seed=pop_int(options, "seed", 0), dense=bool(options.pop("dense", False)))
    repeats = pop_int(options, "seeds", 0)
    out = resolve_path(working_folder, str(options.pop("out", "runs/bias_demo")))
    if options:
        console.error(f"demo-bias: unknown option --{next(iter(options))}")
        return 2

    report = run_bias_demo(config)
    path = write_curve_csv(os.path.join(out, "curve.csv"), report)
    basin = "global" if report.in_global_basin else "suboptimal"
    console.plain(f"argmin of the fitted model: x = {report.argmin:.3f} ({basin} basin), curve written to {path}")
    if repeats > 0:
        fraction = suboptimal_fraction(config, range(config.seed, config.seed + repeats))
        console.plain(f"suboptimal basin in {fraction:.0%} of {repeats} seed(s)")
    return 0
