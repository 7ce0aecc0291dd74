import os

from pad.data import split
from pad.services import CHECKPOINT_NAME, TrainingService

from ._base import PadCommand


class Command(PadCommand):
    help = "Train MVANet on the training split of the configured protocol's first fold"

    config_required = True

    def handle(self, *args, **options):
        config = self.load_config(options)
        manifest = config.load_manifest()
        protocol = config.protocols(manifest)[0]
        fold = split(manifest, protocol)

        model, log = TrainingService(config).train_and_save(fold.train, config.out)

        final = f", final loss {log.losses[-1]:.6f}" if log.records else ''
        self.note(
            f"Trained {len(log)} epoch(s) on '{protocol.name}'{final}; "
            f"checkpoint at {os.path.join(config.out, CHECKPOINT_NAME)}"
        )
