from django.conf import settings

from pad.exceptions import ConfigError
from pad.synth import PROFILES, REFERENCE_SIZE, synth_generate

from ._base import PadCommand


class Command(PadCommand):
    help = 'Generate synthetic bonafide/attack iris textures and their manifest'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--n', type=int, required=True, help='Images per class and profile')
        parser.add_argument(
            '--profile',
            action='append',
            choices=sorted(PROFILES),
            help='Database profile to emulate; repeat for several (default: all)',
        )
        parser.add_argument('--size', type=int, default=REFERENCE_SIZE, help='Image side in pixels')

    def handle(self, *args, **options):
        seed, out = self.common_options(options, settings.PAD_DEFAULT_SEED)
        if not out:
            raise ConfigError('synth needs --out')
        if options['n'] < 1:
            raise ConfigError(f"--n must be at least 1, got {options['n']}")
        if options['size'] < 8:
            raise ConfigError(f"--size must be at least 8, got {options['size']}")
        profiles = options['profile'] or sorted(PROFILES)

        manifest = synth_generate(options['n'], profiles, seed, out, options['size'])

        self.note(
            f"Wrote {len(manifest)} images for profile(s) {', '.join(profiles)} and {out}/manifest.csv"
        )
