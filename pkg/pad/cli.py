"""
``python -m pad <subcommand>``: the hyphenated command-line surface over the
management commands.
"""

import os
import sys

SUBCOMMANDS = {
    'synth': 'synth',
    'train': 'train',
    'eval': 'eval',
    'run-protocol': 'run_protocol',
    'gradcheck': 'gradcheck',
    'export-features': 'export_features',
}

USAGE = (
    "usage: pad {" + ','.join(SUBCOMMANDS) + "} [--seed N] [--config PATH] [--out DIR] ...\n"
    "Run 'pad <subcommand> --help' for the options of a subcommand.\n"
)


def main(argv=None):
    """
    Dispatch to the management command behind a subcommand.

    Returns:
        int: 0 on success, 1 for usage or validation errors, 2 for runtime failures
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ('-h', '--help'):
        sys.stderr.write(USAGE)
        return 0 if argv else 1
    command = SUBCOMMANDS.get(argv[0])
    if command is None:
        sys.stderr.write(USAGE)
        sys.stderr.write(f"pad: error: unknown subcommand '{argv[0]}'\n")
        return 1

    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'mvanet_pad.settings')
    from django.core.management import execute_from_command_line

    try:
        execute_from_command_line(['pad', command, *argv[1:]])
    except SystemExit as e:
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else 1
    return 0
