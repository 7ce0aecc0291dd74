import logging
import sys

from django.core.management.base import BaseCommand, CommandError

from pad.config import load_run_config, read_key_values, resolve_against, typed_value
from pad.exceptions import EXIT_RUNTIME, EXIT_VALIDATION, PadError

logger = logging.getLogger(__name__)


class PadCommand(BaseCommand):
    """
    Base class for the pad commands.

    Adds the common ``--seed``, ``--config`` and ``--out`` flags and maps
    failures onto exit codes: 1 for usage and validation errors, 2 for
    runtime failures.
    """

    config_required = False
    requires_system_checks = []

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)

        def usage_error(message):
            if parser.called_from_command_line:
                parser.print_usage(sys.stderr)
                sys.stderr.write(f"{parser.prog}: error: {message}\n")
                sys.exit(EXIT_VALIDATION)
            raise CommandError(f"Error: {message}", returncode=EXIT_VALIDATION)

        parser.error = usage_error
        return parser

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, help='Seed for every random stream (overrides the config file)')
        parser.add_argument(
            '--config', required=self.config_required, help='Run config file (key=value lines)',
        )
        parser.add_argument('--out', help='Output directory (overrides the config file)')

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except CommandError:
            raise
        except PadError as e:
            raise CommandError(f"{type(e).__name__}: {e}", returncode=e.exit_code)
        except Exception as e:
            logger.error(f"Unexpected error in {type(self).__module__}: {type(e).__name__}: {str(e)}")
            raise CommandError(f"{type(e).__name__}: {e}", returncode=EXIT_RUNTIME) from e

    def load_config(self, options):
        return load_run_config(options['config'], seed=options.get('seed'), out=options.get('out'))

    def common_options(self, options, default_seed=0):
        """
        (seed, out) from the flags, falling back on the config file's values
        for commands that do not need a full run config. A relative ``out``
        from the file resolves against the file's directory.
        """
        seed, out = options.get('seed'), options.get('out')
        if options.get('config'):
            env, keys = read_key_values(options['config'])
            if seed is None and 'seed' in keys:
                seed = typed_value(env, 'seed', 'int')
            if out is None and 'out' in keys:
                out = resolve_against(options['config'], typed_value(env, 'out', 'str'))
        return (default_seed if seed is None else seed), out

    def note(self, message):
        self.stderr.write(message, style_func=self.style.SUCCESS)
