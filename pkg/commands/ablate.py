from __future__ import annotations

import console
from errors import ConfigError
from experiment import ABLATION_AXES, load_config_dict, run_ablation

from .flags import parse_flags, resolve_path, split_list

aliases = ["ablate"]
num_arguments = 0
switches = ()

USAGE = (
    f"Usage: metrpo ablate --axis {{{'|'.join(ABLATION_AXES)}}} --values V1,V2,... "
    "[--seeds 0,1,2] [--config FILE] [--out DIR] [--<config-key> VALUE ...]"
)


def run(working_folder, *args):
    options, positionals = parse_flags(args, switches)
    if positionals or "axis" not in options or "values" not in options:
        console.plain(USAGE)
        return 2

    axis = str(options.pop("axis"))
    values = split_list(options.pop("values"))
    try:
        seeds = [int(seed) for seed in split_list(options.pop("seeds", "0,1,2"))]
    except ValueError as exc:
        raise ConfigError(f"--seeds expects comma-separated integers: {exc}") from exc
    config_path = options.pop("config", None)
    if config_path is not None:
        config_path = resolve_path(working_folder, config_path)
    base = load_config_dict(config_path, options)
    out = resolve_path(working_folder, str(base["out"]))

    table = run_ablation(base, axis, values, seeds, out)
    for value, cells in table.items():
        finals = [cell["final_return_mean"] for cell in cells if cell["final_return_mean"] is not None]
        failed = len(cells) - len(finals)
        summary = f"{sum(finals) / len(finals):.2f}" if finals else "n/a"
        console.plain(f"{axis}={value}: mean final return {summary} over {len(finals)} run(s)" + (f", {failed} failed" if failed else ""))
    console.success(f"ablation summary written to {out}")
    return 0
