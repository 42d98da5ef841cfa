from __future__ import annotations

import os
import sys

import console
from commands import commandHelper

GLOBAL_SWITCHES = {"--quiet": console.QUIET, "-q": console.QUIET, "--verbose": console.VERBOSE}


def main(argv: list[str] | None = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    while args and args[0] in GLOBAL_SWITCHES:
        console.set_verbosity(GLOBAL_SWITCHES[args.pop(0)])

    if not args or args[0] in ("-h", "--help", "help"):
        console.plain(console.PROGRAM_DISPLAY_NAME)
        console.plain(commandHelper.USAGE)
        return 0 if args else 2

    command, rest = args[0], args[1:]
    known, code = commandHelper.run(os.getcwd(), command.lower(), *rest)
    if not known:
        console.error(f"{command}: command not found")
        console.plain(commandHelper.USAGE)
    return code


if __name__ == "__main__":
    sys.exit(main())
