import console

aliases = ["version", "--version", "-version", "-v"]
num_arguments = 0
switches = ()


def run(working_folder, *args):
    console.plain(console.PROGRAM_DISPLAY_NAME)
    return 0
