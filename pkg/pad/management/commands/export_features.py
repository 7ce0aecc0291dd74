from pad.checkpoint import load_checkpoint
from pad.data import Manifest, load_dataset, load_manifest
from pad.exceptions import ConfigError
from pad.features import export_features

from ._base import PadCommand


class Command(PadCommand):
    help = 'Dump conv feature maps, base features or branch embeddings of a checkpoint'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True, help='Checkpoint to load')
        parser.add_argument('--layer', required=True, help="conv1..conv5, base or branch1..branch3")
        parser.add_argument('--manifest', help='Manifest providing the input images (default: from --config)')
        parser.add_argument('--limit', type=int, default=8, help='Number of leading samples to export')

    def handle(self, *args, **options):
        _, out = self.common_options(options)
        if not out:
            raise ConfigError('export-features needs --out')
        if options['limit'] < 1:
            raise ConfigError(f"--limit must be positive, got {options['limit']}")
        if options['manifest']:
            manifest = load_manifest(options['manifest'])
        elif options['config']:
            manifest = self.load_config(options).load_manifest()
        else:
            raise ConfigError('export-features needs --manifest or --config')

        model = load_checkpoint(options['checkpoint'])
        subset = manifest.subset(manifest.samples[:options['limit']], manifest.name)
        dataset = load_dataset(subset, model.spec.input_size, model.dtype)
        written = export_features(model, dataset.images, options['layer'], out)

        self.note(f"Wrote {len(written)} file(s) for {options['layer']} to {out}")
