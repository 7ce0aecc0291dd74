"""
Dataset manifests, evaluation protocols and in-memory datasets.

A manifest is a CSV file with the header ``path,label,database,sensor,environment``.
Lines starting with ``#`` carry comments (the synthetic generator records its
configuration there). Relative paths resolve against the manifest's directory.
"""

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng, resolve_dtype
from .exceptions import (
    DuplicateSampleError,
    EmptyManifestError,
    ManifestError,
    MissingColumnError,
    ProtocolError,
    UnknownLabelError,
)
from .images import decode_image
from .labels import CLASS_NAMES, ENVIRONMENTS, label_index

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ('path', 'label', 'database', 'sensor', 'environment')
MANIFEST_FORMAT_VERSION = 1
SYNTH_SCHEME = 'synth://'


@dataclass(frozen=True)
class Sample:
    source: str
    label: str
    database: str
    sensor: str = ''
    environment: str = ''

    @property
    def is_synthetic(self):
        return self.source.startswith(SYNTH_SCHEME)

    @property
    def label_index(self):
        return label_index(self.label)


@dataclass
class Manifest:
    samples: list = field(default_factory=list)
    format_version: int = MANIFEST_FORMAT_VERSION
    comments: list = field(default_factory=list)
    root: str = '.'
    name: str = ''

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def databases(self):
        """Database ids in order of first appearance."""
        return list(dict.fromkeys(sample.database for sample in self.samples))

    @property
    def sources(self):
        return {sample.source for sample in self.samples}

    def class_counts(self):
        counts = dict.fromkeys(CLASS_NAMES, 0)
        for sample in self.samples:
            counts[sample.label] += 1
        return counts

    def subset(self, samples, name):
        return Manifest(list(samples), self.format_version, list(self.comments), self.root, name)

    def resolve(self, sample):
        if sample.is_synthetic or os.path.isabs(sample.source):
            return sample.source
        return os.path.join(self.root, sample.source)

    @classmethod
    def concat(cls, manifests, name=''):
        samples = [sample for manifest in manifests for sample in manifest.samples]
        seen = set()
        for sample in samples:
            if sample.source in seen:
                raise DuplicateSampleError(f"'{sample.source}' appears in more than one manifest")
            seen.add(sample.source)
        root = manifests[0].root if manifests else '.'
        return cls(samples=samples, root=root, name=name)


def _parse_comment(text, manifest):
    key, _, value = text.partition(':')
    if key.strip() == 'format-version':
        try:
            manifest.format_version = int(value)
        except ValueError:
            raise ManifestError(f"Bad format-version comment '{text}'")
        if manifest.format_version != MANIFEST_FORMAT_VERSION:
            raise ManifestError(f"Unsupported manifest format version {manifest.format_version}")
    else:
        manifest.comments.append(text)


def load_manifest(path):
    """
    Parse and validate a manifest CSV file.

    Raises:
        EmptyManifestError: no header or no sample rows
        MissingColumnError: a required column is absent from the header
        UnknownLabelError: a label outside bonafide/attack
        DuplicateSampleError: the same path listed twice
        ManifestError: any other malformed row
    """
    manifest = Manifest(root=os.path.dirname(os.path.abspath(path)),
                        name=os.path.splitext(os.path.basename(path))[0])
    header = None
    first_seen = {}
    with open(path, newline='', encoding='utf-8') as handle:
        for number, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith('#'):
                _parse_comment(text[1:].strip(), manifest)
                continue
            row = [cell.strip() for cell in next(csv.reader([text]))]
            if header is None:
                missing = [column for column in MANIFEST_COLUMNS if column not in row]
                if missing:
                    raise MissingColumnError(f"missing column(s) {', '.join(missing)}", line=number)
                header = row
                continue
            if len(row) != len(header):
                raise ManifestError(f"expected {len(header)} fields, found {len(row)}", line=number)
            record = dict(zip(header, row))
            if record['label'] not in CLASS_NAMES:
                raise UnknownLabelError(
                    f"unknown label '{record['label']}' (expected one of {', '.join(CLASS_NAMES)})", line=number
                )
            if not record['path'] or not record['database']:
                raise ManifestError("path and database must not be empty", line=number)
            if record['environment'] and record['environment'] not in ENVIRONMENTS:
                raise ManifestError(f"unknown environment '{record['environment']}'", line=number)
            if record['path'] in first_seen:
                raise DuplicateSampleError(
                    f"duplicate path '{record['path']}' (first listed on line {first_seen[record['path']]})",
                    line=number,
                )
            first_seen[record['path']] = number
            manifest.samples.append(Sample(
                source=record['path'],
                label=record['label'],
                database=record['database'],
                sensor=record['sensor'],
                environment=record['environment'],
            ))
    if header is None:
        raise EmptyManifestError(f"{path} has no header")
    if not manifest.samples:
        raise EmptyManifestError(f"{path} lists no samples")
    logger.debug(f"Loaded manifest {path}: {len(manifest)} samples, databases {manifest.databases}")
    return manifest


def write_manifest(manifest, path):
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        handle.write(f"# format-version: {manifest.format_version}\n")
        for comment in manifest.comments:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(MANIFEST_COLUMNS)
        for sample in manifest.samples:
            writer.writerow([sample.source, sample.label, sample.database, sample.sensor, sample.environment])


# Protocols

@dataclass(frozen=True)
class CrossDatabase:
    train_db: str

    @property
    def name(self):
        return self.train_db


@dataclass(frozen=True)
class IntraDatabase:
    database: str
    train_fraction: float = 0.5
    seed: int = 0
    sensor: str = None

    @property
    def name(self):
        """The database, or the sensor id such as 'A-s2' when a sensor is chosen."""
        if not self.sensor:
            return self.database
        if self.sensor.startswith(f"{self.database}-"):
            return self.sensor
        return f"{self.database}-{self.sensor}"


@dataclass
class Split:
    train: Manifest
    tests: list

    def assert_disjoint(self):
        train_sources = self.train.sources
        for test in self.tests:
            overlap = train_sources & test.sources
            if overlap:
                raise ProtocolError(
                    f"train and test '{test.name}' share {len(overlap)} sample(s), e.g. '{sorted(overlap)[0]}'"
                )
        return self


def _cross_database(manifest, protocol):
    databases = manifest.databases
    if protocol.train_db not in databases:
        raise ProtocolError(f"training database '{protocol.train_db}' is not in the manifest ({databases})")
    others = sorted(db for db in databases if db != protocol.train_db)
    if not others:
        raise ProtocolError(f"cross-database protocol needs a database other than '{protocol.train_db}'")
    train = manifest.subset([s for s in manifest if s.database == protocol.train_db], protocol.train_db)
    tests = [manifest.subset([s for s in manifest if s.database == db], db) for db in others]
    return Split(train, tests)


def _intra_database(manifest, protocol):
    if not 0 < protocol.train_fraction < 1:
        raise ProtocolError(f"train_fraction must lie in (0, 1), got {protocol.train_fraction}")
    pool = [s for s in manifest if s.database == protocol.database]
    if not pool:
        raise ProtocolError(f"database '{protocol.database}' is not in the manifest ({manifest.databases})")
    if protocol.sensor:
        pool = [s for s in pool if s.sensor == protocol.sensor]
        if not pool:
            raise ProtocolError(f"sensor '{protocol.sensor}' has no samples in database '{protocol.database}'")

    rng = Rng(protocol.seed).split('intra', protocol.database, protocol.sensor or '')
    train_positions = set()
    for label in CLASS_NAMES:
        positions = [i for i, sample in enumerate(pool) if sample.label == label]
        order = rng.split(label).permutation(len(positions))
        keep = int(round(protocol.train_fraction * len(positions)))
        train_positions.update(positions[i] for i in order[:keep])
    train = [s for i, s in enumerate(pool) if i in train_positions]
    test = [s for i, s in enumerate(pool) if i not in train_positions]
    return Split(manifest.subset(train, protocol.name), [manifest.subset(test, protocol.name)])


def split(manifest, protocol):
    """
    Partition ``manifest`` for a protocol.

    Cross-database: train on every sample of ``train_db``, one test manifest per
    remaining database (sorted by id). Intra-database: a seeded split within one
    database (optionally one sensor), stratified by label.
    """
    if isinstance(protocol, CrossDatabase):
        result = _cross_database(manifest, protocol)
        for test in result.tests:
            if protocol.train_db in {s.database for s in test}:
                raise ProtocolError(f"test manifest '{test.name}' contains the training database")
    elif isinstance(protocol, IntraDatabase):
        result = _intra_database(manifest, protocol)
    else:
        raise ProtocolError(f"Unknown protocol {protocol!r}")
    return result.assert_disjoint()


# In-memory datasets

@dataclass
class ArrayDataset:
    images: np.ndarray
    labels: np.ndarray
    samples: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)


def load_sample(manifest, sample, image_size, dtype='f32'):
    if sample.is_synthetic:
        from .synth import render_source
        return render_source(sample.source, image_size).astype(resolve_dtype(dtype))[None, :, :]
    return decode_image(manifest.resolve(sample), image_size, dtype)


def load_dataset(manifest, image_size, dtype='f32', workers=1):
    """
    Decode every sample into an [N, 1, S, S] array; order follows the manifest
    whatever the number of workers.
    """
    dtype = resolve_dtype(dtype)
    samples = list(manifest.samples)
    labels = np.array([sample.label_index for sample in samples], dtype=np.int64)
    if not samples:
        return ArrayDataset(np.zeros((0, 1, image_size, image_size), dtype=dtype), labels, samples)

    def decode(sample):
        return load_sample(manifest, sample, image_size, dtype)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            images = list(executor.map(decode, samples))
    else:
        images = [decode(sample) for sample in samples]
    return ArrayDataset(np.stack(images).astype(dtype), labels, samples)
