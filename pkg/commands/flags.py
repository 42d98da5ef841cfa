from __future__ import annotations

import os

from errors import ConfigError


def parse_flags(args, switches=()) -> tuple[dict[str, object], list[str]]:
    """Split ``--name value`` pairs and ``--switch`` flags from positionals.

    ``--name=value`` is accepted too; names keep their dashes. Everything after
    ``--`` is positional.
    """
    options: dict[str, object] = {}
    positionals: list[str] = []
    parsing_flags = True
    index = 0
    while index < len(args):
        a = args[index]
        index += 1
        if parsing_flags and a == "--":
            parsing_flags = False
            continue
        if parsing_flags and a.startswith("--") and len(a) > 2:
            name, sep, value = a[2:].partition("=")
            if name in switches:
                if sep:
                    raise ConfigError(f"--{name} does not take a value")
                options[name] = True
                continue
            if not sep:
                if index >= len(args):
                    raise ConfigError(f"--{name} expects a value")
                value = args[index]
                index += 1
            options[name] = value
            continue
        positionals.append(a)
    return options, positionals


def resolve_path(working_folder, target: str) -> str:
    target = os.path.expanduser(os.path.expandvars(str(target)))
    if os.path.isabs(target):
        return os.path.normpath(target)
    return os.path.normpath(os.path.join(working_folder, target))


def split_list(raw: object) -> list[str]:
    return [part.strip() for part in str(raw).split(",") if part.strip()]


def pop_int(options: dict[str, object], name: str, default: int) -> int:
    raw = options.pop(name, default)
    try:
        return int(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"--{name} expects an integer, got '{raw}'") from exc
