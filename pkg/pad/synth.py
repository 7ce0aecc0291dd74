"""
Deterministic synthetic iris-like textures.

Bonafide images are concentric radial textures with a smooth random angular
modulation; attack images add a rotated periodic dot lattice inside the iris
disc, the kind of print texture a patterned contact lens shows. Each database
profile shifts brightness, blur, noise and lattice pitch to emulate its own
sensors and capture environment.

A sample is a pure function of (generator version, profile, seed, label,
index, size); in-memory sources are written ``synth://<profile>/<seed>/<label>/<index>``.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageFilter

from .autodiff import Rng
from .data import SYNTH_SCHEME, Manifest, Sample, write_manifest
from .exceptions import ManifestError
from .images import encode_pgm, to_uint8
from .labels import ATTACK, CLASS_NAMES

logger = logging.getLogger(__name__)

GENERATOR_VERSION = 2
REFERENCE_SIZE = 64


@dataclass(frozen=True)
class DatabaseProfile:
    name: str
    brightness_offset: float
    blur_radius: float
    noise_sigma: float
    lattice_pitch: float
    sensors: tuple
    environment: str


PROFILES = {
    'A': DatabaseProfile('A', 0.0, 0.6, 0.015, 6.0, ('A-s1', 'A-s2'), 'controlled'),
    'B': DatabaseProfile('B', 0.12, 0.8, 0.03, 5.5, ('B-s1',), 'uncontrolled'),
    'C': DatabaseProfile('C', -0.10, 0.7, 0.025, 6.5, ('C-s1', 'C-s2', 'C-s3'), 'uncontrolled'),
}

PUPIL_LEVEL = 0.15
IRIS_LEVEL = 0.42
SCLERA_LEVEL = 0.70
LATTICE_CONTRAST = 0.45
# mean of the dot lattice over whole periods
LATTICE_MEAN = 0.25


def get_profile(name):
    try:
        return PROFILES[name]
    except KeyError:
        raise ManifestError(f"Unknown synthetic profile '{name}', expected one of {sorted(PROFILES)}")


def _iris(rng, size):
    scale = size / 2.0
    cy, cx = (size - 1) / 2.0 + rng.uniform(-0.04, 0.04, (2,), 'f64') * size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = (yy - cy) / scale, (xx - cx) / scale
    radius = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)

    pupil = rng.uniform(0.18, 0.26, (), 'f64')
    iris = rng.uniform(0.70, 0.85, (), 'f64')
    harmonics = np.arange(1, 7)
    amplitudes = rng.normal((6,), 0.5) / harmonics
    phases = rng.uniform(0, 2 * np.pi, (6,), 'f64')
    modulation = (amplitudes[:, None, None] * np.cos(harmonics[:, None, None] * theta + phases[:, None, None])).sum(0)
    frequency = rng.uniform(2.5, 4.0, (), 'f64')
    texture = np.sin(2 * np.pi * frequency * radius + modulation)

    image = np.full((size, size), SCLERA_LEVEL)
    ring = (radius >= pupil) & (radius < iris)
    image[ring] = IRIS_LEVEL + 0.12 * texture[ring]
    image[radius < pupil] = PUPIL_LEVEL
    return image, dx * scale, dy * scale, radius < iris


def _lattice(rng, dx, dy, pitch):
    angle = rng.uniform(0, np.pi, (), 'f64')
    u = dx * np.cos(angle) + dy * np.sin(angle)
    v = -dx * np.sin(angle) + dy * np.cos(angle)
    return (1 + np.cos(2 * np.pi * u / pitch)) * (1 + np.cos(2 * np.pi * v / pitch)) / 4


def render(profile, label, seed, index, size=REFERENCE_SIZE):
    """
    Render one sample as a [size, size] float array of 8-bit levels / 255.
    """
    profile = get_profile(profile) if isinstance(profile, str) else profile
    if label not in CLASS_NAMES:
        raise ManifestError(f"Unknown label '{label}'")
    rng = Rng(seed).split('synth', GENERATOR_VERSION, profile.name, label, index)
    image, dx, dy, disc = _iris(rng.split('iris'), size)
    if CLASS_NAMES.index(label) == ATTACK:
        dots = _lattice(rng.split('lattice'), dx, dy, profile.lattice_pitch * size / REFERENCE_SIZE)
        image[disc] += LATTICE_CONTRAST * (dots[disc] - LATTICE_MEAN)
    image = image + profile.brightness_offset

    blurred = Image.fromarray(to_uint8(image)).filter(
        ImageFilter.GaussianBlur(profile.blur_radius * size / REFERENCE_SIZE)
    )
    pixels = np.asarray(blurred, dtype=np.float64) / 255.0
    pixels = pixels + rng.split('noise').normal((size, size), profile.noise_sigma)
    return to_uint8(pixels).astype(np.float64) / 255.0


def synth_source(profile, seed, label, index):
    return f"{SYNTH_SCHEME}{profile}/{seed}/{label}/{index}"


def parse_source(source):
    """Split a ``synth://`` source into (profile, seed, label, index)."""
    parts = source[len(SYNTH_SCHEME):].split('/')
    if not source.startswith(SYNTH_SCHEME) or len(parts) != 4:
        raise ManifestError(f"Malformed synthetic source '{source}'")
    profile, seed, label, index = parts
    try:
        return get_profile(profile).name, int(seed), label, int(index)
    except ValueError:
        raise ManifestError(f"Malformed synthetic source '{source}'")


def render_source(source, size=REFERENCE_SIZE):
    profile, seed, label, index = parse_source(source)
    return render(profile, label, seed, index, size)


def _comments(n, profiles, seed, size):
    return [
        f"generator-version: {GENERATOR_VERSION}",
        f"profiles: {','.join(profiles)}",
        f"seed: {seed}",
        f"n-per-class: {n}",
        f"size: {size}",
    ]


def _draws(n, profiles):
    """(profile, label, index, sensor) for every sample, in manifest order."""
    if n < 1:
        raise ManifestError(f"n must be at least 1, got {n}")
    for name in profiles:
        profile = get_profile(name)
        for label in CLASS_NAMES:
            for index in range(n):
                yield profile, label, index, profile.sensors[index % len(profile.sensors)]


def synth_manifest(n, profiles, seed, size=REFERENCE_SIZE):
    """A manifest of in-memory ``synth://`` samples (nothing is written)."""
    samples = [
        Sample(synth_source(profile.name, seed, label, index), label, profile.name, sensor, profile.environment)
        for profile, label, index, sensor in _draws(n, profiles)
    ]
    return Manifest(samples=samples, comments=_comments(n, profiles, seed, size), name='synthetic')


def synth_generate(n, profiles, seed, out_dir, size=REFERENCE_SIZE):
    """
    Write ``n`` images per class for every profile plus ``manifest.csv``.

    Files land in ``<out>/<profile>/<label>/<profile>_<label>_<index>.pgm``.

    Returns:
        Manifest pointing at the written files
    """
    profiles = [get_profile(name).name for name in profiles]
    samples = []
    for profile, label, index, sensor in _draws(n, profiles):
        source = f"{profile.name}/{label}/{profile.name}_{label}_{index:05d}.pgm"
        target = os.path.join(out_dir, source)
        os.makedirs(os.path.dirname(target), exist_ok=True)
        encode_pgm(to_uint8(render(profile, label, seed, index, size)), target)
        samples.append(Sample(source, label, profile.name, sensor, profile.environment))

    manifest = Manifest(
        samples=samples, comments=_comments(n, profiles, seed, size), root=out_dir, name='synthetic'
    )
    write_manifest(manifest, os.path.join(out_dir, 'manifest.csv'))
    logger.info(f"Generated {len(samples)} synthetic images for profiles {','.join(profiles)} in {out_dir}")
    return manifest
