import json
import os

import console
from errors import ConfigError, MetrpoError

from . import ablate
from . import demo_bias
from . import eval as eval_command
from . import info
from . import replay
from . import train
from . import version
from .flags import parse_flags

COMMANDS = (train, ablate, eval_command, demo_bias, replay, version, info)

USAGE = "Usage: metrpo [--quiet|--verbose] {train|ablate|eval|demo-bias|replay|version|info} [options]"


def _validate_num_arguments(cmd_module, args) -> bool:
    _, positionals = parse_flags(args, cmd_module.switches)
    if cmd_module.num_arguments < len(positionals):
        console.error(
            f"{cmd_module.aliases[0]}: Expected {cmd_module.num_arguments} positional argument, got {len(positionals)} instead."
        )
        return False
    return True


def _dispatch(cmd_module, working_folder, args) -> int:
    if not _validate_num_arguments(cmd_module, args):
        return 2
    return int(cmd_module.run(working_folder, *args) or 0)


def run(working_folder, command, *args):
    """Run one subcommand; returns ``(known, exit_code)``."""
    working_folder_path = os.fspath(working_folder)
    try:
        match command:
            case _ if command in train.aliases:
                return True, _dispatch(train, working_folder_path, args)

            case _ if command in ablate.aliases:
                return True, _dispatch(ablate, working_folder_path, args)

            case _ if command in eval_command.aliases:
                return True, _dispatch(eval_command, working_folder_path, args)

            case _ if command in demo_bias.aliases:
                return True, _dispatch(demo_bias, working_folder_path, args)

            case _ if command in replay.aliases:
                return True, _dispatch(replay, working_folder_path, args)

            case _ if command in version.aliases:
                return True, _dispatch(version, working_folder_path, args)

            case _ if command in info.aliases:
                return True, _dispatch(info, working_folder_path, args)

            case _:
                return False, 2
    except ConfigError as exc:
        console.error(f"{command}: {exc}")
        return True, 2
    except (MetrpoError, OSError, json.JSONDecodeError) as exc:
        console.error(f"{command}: {exc}")
        return True, 1
