"""
Run configuration files.

Config and custom network-spec files are flat ``key=value`` text with ``#``
comments. They are read with django-environ's ``.env`` reader into an isolated
mapping, so nothing leaks into ``os.environ``, and cast with its typed getters.
"""

import dataclasses
import logging
import os
import re
from dataclasses import dataclass, field

import environ
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

from .autodiff import DTYPES
from .data import CrossDatabase, IntraDatabase, Manifest, load_manifest
from .exceptions import ConfigError, SpecError
from .network import NetworkSpec, default_spec, small_spec

logger = logging.getLogger(__name__)

PROTOCOLS = ('cross-database', 'intra-database')
SPEC_CHOICES = ('default', 'small')

RUN_KEYS = {
    'spec', 'manifest', 'protocol', 'train_db', 'database', 'sensor', 'train_fraction', 'epochs',
    'batch_size', 'learning_rate', 'weight_decay', 'seed', 'image_size', 'dtype', 'out',
}

_LINE = re.compile(r'\A(?:export )?[A-Za-z_0-9]+=.*\Z')


def read_key_values(path):
    """
    Parse a key=value file into a django-environ reader over its own mapping.

    Returns:
        tuple: (environ.Env bound to the file's values, set of keys)
    """
    if not os.path.isfile(path):
        raise ConfigError(f"Config file '{path}' does not exist")
    with open(path, encoding='utf-8') as handle:
        for number, line in enumerate(handle, start=1):
            text = line.strip()
            if text and not text.startswith('#') and not _LINE.match(text):
                raise ConfigError(f"{path}, line {number}: expected key=value, found '{text}'")
    scoped = type('ScopedEnv', (environ.Env,), {'ENVIRON': {}})
    scoped.read_env(path, overwrite=True, parse_comments=True)
    return scoped(), set(scoped.ENVIRON)


def typed_value(env, key, cast, **kwargs):
    try:
        return getattr(env, cast)(key, **kwargs)
    except ImproperlyConfigured:
        raise ConfigError(f"Missing required config key '{key}'")
    except (ValueError, TypeError) as e:
        raise ConfigError(f"Config key '{key}' has an invalid value: {e}")


@dataclass
class RunConfig:
    epochs: int
    manifests: list = field(default_factory=list)
    spec: str = 'default'
    protocol: str = 'cross-database'
    train_db: str = None
    database: str = None
    sensor: str = None
    train_fraction: float = 0.5
    batch_size: int = 32
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    seed: int = 0
    image_size: int = None
    dtype: str = 'f32'
    out: str = 'pad-output'

    def validate(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {', '.join(PROTOCOLS)}, got '{self.protocol}'")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate must be positive and weight_decay non-negative")
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got '{self.dtype}'")
        if self.spec not in SPEC_CHOICES and not os.path.isfile(self.spec):
            raise ConfigError(f"spec file '{self.spec}' does not exist")
        for path in self.manifests:
            if not os.path.isfile(path):
                raise ConfigError(f"manifest '{path}' does not exist")
        return self

    def network_spec(self):
        return load_network_spec(self.spec, self.image_size)

    def load_manifest(self):
        if not self.manifests:
            raise ConfigError("No manifest configured")
        return Manifest.concat([load_manifest(path) for path in self.manifests], name='run')

    def protocols(self, manifest):
        """Protocol instances to run, one per fold."""
        if self.protocol == 'cross-database':
            train_dbs = [self.train_db] if self.train_db else sorted(manifest.databases)
            return [CrossDatabase(train_db) for train_db in train_dbs]
        databases = [self.database] if self.database else sorted(manifest.databases)
        return [IntraDatabase(db, self.train_fraction, self.seed, self.sensor) for db in databases]

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def resolve_against(config_path, value):
    """``value`` as given when absolute, else relative to the directory of ``config_path``."""
    if os.path.isabs(value):
        return value
    return os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(config_path)), value))


def load_run_config(path, **overrides):
    """
    Read a run config file; ``overrides`` (e.g. from command-line flags) win
    over file values when not None. Relative paths resolve against the file.
    """
    env, keys = read_key_values(path)
    unknown = keys - RUN_KEYS
    if unknown:
        raise ConfigError(f"Unknown config key(s): {', '.join(sorted(unknown))}")

    def resolve(value):
        return resolve_against(path, value)

    spec = typed_value(env, 'spec', 'str', default='default')
    values = {
        'epochs': typed_value(env, 'epochs', 'int'),
        'manifests': [resolve(p) for p in typed_value(env, 'manifest', 'list', default=[]) if p],
        'spec': spec if spec in SPEC_CHOICES else resolve(spec),
        'protocol': typed_value(env, 'protocol', 'str', default='cross-database'),
        'train_db': typed_value(env, 'train_db', 'str', default=None) or None,
        'database': typed_value(env, 'database', 'str', default=None) or None,
        'sensor': typed_value(env, 'sensor', 'str', default=None) or None,
        'train_fraction': typed_value(env, 'train_fraction', 'float', default=0.5),
        'batch_size': typed_value(env, 'batch_size', 'int', default=32),
        'learning_rate': typed_value(env, 'learning_rate', 'float', default=1e-5),
        'weight_decay': typed_value(env, 'weight_decay', 'float', default=0.01),
        'seed': typed_value(env, 'seed', 'int', default=settings.PAD_DEFAULT_SEED),
        'image_size': typed_value(env, 'image_size', 'int', default=None),
        'dtype': typed_value(env, 'dtype', 'str', default='f32'),
        'out': resolve(typed_value(env, 'out', 'str', default='pad-output')),
    }
    values.update({key: value for key, value in overrides.items() if value is not None})
    config = RunConfig(**values).validate()
    try:
        config.network_spec()
    except SpecError as e:
        raise ConfigError(f"Network spec does not fit image_size: {e}")
    logger.debug(f"Loaded run config {path}: {config}")
    return config


SPEC_CASTS = {
    'input_channels': 'int', 'input_size': 'int', 'base_channels': 'list', 'conv_kernels': 'list',
    'conv_strides': 'list', 'conv_pads': 'list', 'maxpool_after': 'list', 'maxpool_kernel': 'int',
    'maxpool_stride': 'int', 'avgpool_k': 'int', 'branch_widths': 'json', 'n_branches': 'int',
    'dropout_rate': 'float', 'fusion_width': 'int', 'head_out': 'int', 'input_norm': 'str',
}


def read_spec_file(path):
    env, keys = read_key_values(path)
    unknown = keys - set(SPEC_CASTS)
    if unknown:
        raise SpecError(f"Unknown network spec key(s): {', '.join(sorted(unknown))}")
    try:
        values = {key: typed_value(env, key, SPEC_CASTS[key]) for key in keys}
        return NetworkSpec.from_dict(values).validate()
    except ConfigError as e:
        raise SpecError(str(e))


def load_network_spec(choice, image_size=None):
    """
    Resolve 'default', 'small' or a spec file path. ``image_size`` replaces the
    input size (the small spec re-fits its average pool to it).
    """
    if choice == 'small':
        return small_spec(image_size or 64)
    if choice == 'default':
        spec = default_spec()
    else:
        spec = read_spec_file(choice)
    if image_size and image_size != spec.input_size:
        spec = dataclasses.replace(spec, input_size=image_size).validate()
    return spec
