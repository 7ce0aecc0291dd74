"""
Feature dumps for external visualization.

Conv block outputs become one PGM per (sample, channel); the base feature
vector becomes a strip PGM plus CSV rows; branch embeddings (the second hidden
FC activation of each branch) become CSV rows.
"""

import csv
import logging
import os

from .autodiff import no_grad
from .exceptions import FeatureExportError
from .images import encode_pgm, min_max_uint8

logger = logging.getLogger(__name__)


def layer_ids(spec):
    return (
        [f'conv{index}' for index in range(1, spec.n_blocks + 1)]
        + ['base']
        + [f'branch{index}' for index in range(1, spec.n_branches + 1)]
    )


def _write_rows(path, rows):
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['sample'] + [f'f{i}' for i in range(rows.shape[1])])
        for index, row in enumerate(rows):
            writer.writerow([index] + [repr(float(v)) for v in row])


def export_features(model, x, layer_id, out_dir):
    """
    Run an eval forward on ``x`` and dump the activations of ``layer_id``.

    Args:
        model: MVANet
        x: input batch [B, C, H, W]
        layer_id: 'conv1'..'convN', 'base' or 'branch1'..'branchN'
        out_dir: directory receiving the files

    Returns:
        list of written file paths
    """
    known = layer_ids(model.spec)
    if layer_id not in known:
        raise FeatureExportError(f"Unknown layer id '{layer_id}', expected one of {', '.join(known)}")
    with no_grad():
        result = model.forward(x, 'eval')
    os.makedirs(out_dir, exist_ok=True)
    written = []

    if layer_id.startswith('conv'):
        maps = result.feature_maps[layer_id].value
        for sample in range(maps.shape[0]):
            for channel in range(maps.shape[1]):
                path = os.path.join(out_dir, f'{layer_id}_s{sample:03d}_c{channel:03d}.pgm')
                encode_pgm(min_max_uint8(maps[sample, channel]), path)
                written.append(path)
    elif layer_id == 'base':
        features = result.base_features.value
        path = os.path.join(out_dir, 'base.pgm')
        encode_pgm(min_max_uint8(features), path)
        written.append(path)
        path = os.path.join(out_dir, 'base.csv')
        _write_rows(path, features)
        written.append(path)
    else:
        path = os.path.join(out_dir, f'{layer_id}.csv')
        _write_rows(path, result.embeddings[layer_id].value)
        written.append(path)

    logger.info(f"Exported {len(written)} file(s) for {layer_id} to {out_dir}")
    return written
