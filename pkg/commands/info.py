from __future__ import annotations

import console

aliases = ["info"]
num_arguments = 0
switches = ()


def run(working_folder, *args):
    bold, end = console.bcolors.BOLD, console.bcolors.ENDC
    console.plain(f"{bold}{console.PROGRAM_DISPLAY_NAME}{end}")
    console.plain("-----------------")
    for key, value in console.get_system_info().items():
        console.plain(f"{bold}{key}{end}: {value}")
    return 0
