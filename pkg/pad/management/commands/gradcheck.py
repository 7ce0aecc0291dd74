import csv
import os

from django.conf import settings
from django.core.management.base import CommandError

from pad.diagnostics import DEFAULT_TOLERANCE, LAYER_CASES, run_gradcheck_suite
from pad.exceptions import EXIT_RUNTIME

from ._base import PadCommand


class Command(PadCommand):
    help = 'Check every layer and the small MVANet against central finite differences (f64)'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--instances', type=int, default=20, help='Seeded random instances per case')
        parser.add_argument('--tol', type=float, default=DEFAULT_TOLERANCE, help='Max relative error to pass')
        parser.add_argument(
            '--case', action='append', choices=sorted(LAYER_CASES), help='Only run this layer case (repeatable)',
        )
        parser.add_argument('--skip-model', action='store_true', help='Leave out the full-model check')

    def handle(self, *args, **options):
        seed, out = self.common_options(options, settings.PAD_DEFAULT_SEED)
        results = run_gradcheck_suite(
            instances=options['instances'],
            seed=seed,
            tol=options['tol'],
            cases=options['case'],
            include_model=not options['skip_model'],
        )

        for result in results:
            status = 'ok' if result.passed else 'FAIL'
            self.stdout.write(f"{result.name:<16} {result.max_relative_error:.3e}  {status}")
        if out:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, 'gradcheck.csv'), 'w', newline='') as handle:
                writer = csv.writer(handle, lineterminator='\n')
                writer.writerow(['case', 'instances', 'max_relative_error', 'tol', 'passed'])
                for result in results:
                    writer.writerow([
                        result.name, result.instances, repr(result.max_relative_error), result.tol, result.passed,
                    ])

        failed = [result.name for result in results if not result.passed]
        if failed:
            raise CommandError(f"gradcheck failed for {', '.join(failed)}", returncode=EXIT_RUNTIME)
