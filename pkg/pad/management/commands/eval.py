import os

from pad.checkpoint import load_checkpoint
from pad.data import Manifest, load_manifest
from pad.exceptions import ConfigError
from pad.reports import write_decisions, write_reports_csv, write_reports_text
from pad.services import EvaluationService, decision_file_name

from ._base import PadCommand


class Command(PadCommand):
    help = 'Evaluate a checkpoint on every database of a manifest'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True, help='Checkpoint written by train or run-protocol')
        parser.add_argument(
            '--manifest', action='append', help='Manifest to evaluate; repeat for several (default: from --config)',
        )
        parser.add_argument('--train-db', default='model', help='Name recorded as the training database')

    def manifest(self, options):
        if options['manifest']:
            return Manifest.concat([load_manifest(path) for path in options['manifest']], name='eval')
        if options['config']:
            return self.load_config(options).load_manifest()
        raise ConfigError('eval needs --manifest or --config')

    def handle(self, *args, **options):
        _, out = self.common_options(options)
        if not out:
            raise ConfigError('eval needs --out')
        model = load_checkpoint(options['checkpoint'])
        manifest = self.manifest(options)
        os.makedirs(out, exist_ok=True)

        evaluator = EvaluationService(model)
        train_db = options['train_db']
        reports = []
        for database in manifest.databases:
            test = manifest.subset([s for s in manifest if s.database == database], database)
            report, decisions = evaluator.evaluate(test, train_db=train_db)
            write_decisions(decisions, os.path.join(out, decision_file_name(train_db, database)))
            reports.append(report)
        write_reports_csv(reports, os.path.join(out, 'reports.csv'))
        write_reports_text(reports, os.path.join(out, 'reports.txt'))

        self.note(f"Evaluated {len(manifest)} samples over {len(reports)} database(s) into {out}")
