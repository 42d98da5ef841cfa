from __future__ import annotations

import os
import platform
import socket
import sys

import numpy as np
import psutil

PROGRAM_NAME = "metrpo"
PROGRAM_VERSION = "0.1.0"
PROGRAM_DISPLAY_NAME = f"{PROGRAM_NAME} v{PROGRAM_VERSION}"

QUIET = 0
NORMAL = 1
VERBOSE = 2

_VERBOSITY = NORMAL


if platform.system() == "Windows":
    try:
        import colorama

        try:
            colorama.just_fix_windows_console()
        except AttributeError:
            colorama.init()
    except Exception:
        pass


class bcolors:
    """ANSI codes for the message kinds metrpo prints."""

    INFO = '\033[96m'
    SUCCESS = '\033[92m'
    WARNING = '\033[93m'
    FAIL = '\033[91m'
    DIM = '\033[2m'
    BOLD = '\033[1m'
    ENDC = '\033[0m'


def set_verbosity(level: int) -> None:
    global _VERBOSITY
    _VERBOSITY = max(QUIET, min(VERBOSE, int(level)))


def get_verbosity() -> int:
    return _VERBOSITY


def _use_color(stream) -> bool:
    if os.environ.get("NO_COLOR"):
        return False
    try:
        return stream.isatty()
    except (AttributeError, ValueError):
        return False


def _emit(message: str, color: str, *, stream=None, prefix: bool = True) -> None:
    target = stream if stream is not None else sys.stdout
    text = f"{PROGRAM_NAME}: {message}" if prefix else message
    if color and _use_color(target):
        text = f"{color}{text}{bcolors.ENDC}"
    print(text, file=target)


def info(message: str) -> None:
    if _VERBOSITY >= NORMAL:
        _emit(message, bcolors.INFO)


def success(message: str) -> None:
    if _VERBOSITY >= NORMAL:
        _emit(message, bcolors.SUCCESS)


def dim(message: str) -> None:
    if _VERBOSITY >= VERBOSE:
        _emit(message, bcolors.DIM)


def warn(message: str) -> None:
    if _VERBOSITY >= NORMAL:
        _emit(message, bcolors.WARNING, stream=sys.stderr)


def error(message: str) -> None:
    _emit(message, bcolors.FAIL, stream=sys.stderr)


def plain(message: str = "") -> None:
    if _VERBOSITY >= NORMAL:
        print(message)


def physical_core_count() -> int:
    try:
        count = psutil.cpu_count(logical=False)
    except Exception:
        count = None
    if not count:
        count = os.cpu_count() or 1
    return int(count)


def get_system_info() -> dict[str, object]:
    try:
        mem = psutil.virtual_memory()
        memory = f"{mem.total / (1024**3):.1f}GiB"
    except Exception:
        memory = "unknown"

    cpu_info = platform.processor() or platform.uname().processor or platform.machine()
    return {
        "host": socket.gethostname().split(".")[0],
        "os": f"{platform.system()} {platform.release()}",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu": cpu_info or "Unknown CPU",
        "physical_cores": physical_core_count(),
        "logical_cores": psutil.cpu_count(logical=True) or 1,
        "memory": memory,
    }
