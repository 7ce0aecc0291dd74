from django.core.management.base import CommandError

from pad.exceptions import EXIT_RUNTIME
from pad.reports import format_reports
from pad.services import run_protocol

from ._base import PadCommand


class Command(PadCommand):
    help = 'Run every fold of a cross- or intra-database protocol and write the reports'

    config_required = True

    def handle(self, *args, **options):
        config = self.load_config(options)
        result = run_protocol(config)

        self.stdout.write(format_reports(result.reports, result.averages))
        if result.failed:
            failed = ', '.join(f"{fold['fold']} ({fold['error']})" for fold in result.failed)
            raise CommandError(f"{len(result.failed)} fold(s) failed: {failed}", returncode=EXIT_RUNTIME)
        self.note(f"{len(result.folds)} fold(s) finished; reports in {config.out}")
