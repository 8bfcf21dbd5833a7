"""Six image-corruption models with sampled strength parameters.

Images are float arrays in [0, 1]; the last two axes are spatial. Every
corruption is drawn from an explicit ``numpy.random.Generator`` so a test set
can be regenerated exactly from ``(seed, kind, image index)``.

Parameter ranges (uniform draws):

==========  =========================  ==============
kind        parameter                  range
==========  =========================  ==============
gaussian    sigma (std)                [0.01, 0.12]
poisson     coeff (photon scale)       [4, 22]
salt_pepper ratio (pixel fraction)     [0.01, 0.18]
speckle     intensity (std)            [0.04, 0.35]
rayleigh    scale                      [0.08, 0.45]
gamma       shape, scale               [1.5, 5.5], [0.08, 0.22]
==========  =========================  ==============
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import ClassVar, Union

import numpy as np

from .errors import InputError
from .metrics import NOISE_ORDER


@dataclass(frozen=True)
class Gaussian:
    kind: ClassVar[str] = "gaussian"
    sigma: float

    def perturb(self, x, rng):
        return x + rng.normal(0.0, self.sigma, x.shape)


@dataclass(frozen=True)
class Poisson:
    """Photon-count noise; smaller ``coeff`` means fewer photons and stronger noise."""

    kind: ClassVar[str] = "poisson"
    coeff: float

    def perturb(self, x, rng):
        return rng.poisson(x * self.coeff) / self.coeff


@dataclass(frozen=True)
class SaltPepper:
    """Replace a fraction ``ratio`` of spatial locations (all channels) by 0 or 1."""

    kind: ClassVar[str] = "salt_pepper"
    ratio: float

    def perturb(self, x, rng):
        h, w = x.shape[-2:]
        n_hit = int(round(self.ratio * h * w))
        flat = rng.choice(h * w, size=n_hit, replace=False)
        values = rng.integers(0, 2, size=n_hit).astype(np.float64)
        out = x.copy().reshape(*x.shape[:-2], h * w)
        out[..., flat] = values
        return out.reshape(x.shape)


@dataclass(frozen=True)
class Speckle:
    """Multiplicative Gaussian noise, ``intensity`` is its standard deviation."""

    kind: ClassVar[str] = "speckle"
    intensity: float

    def perturb(self, x, rng):
        return x + x * rng.normal(0.0, self.intensity, x.shape)


@dataclass(frozen=True)
class Rayleigh:
    """Additive Rayleigh noise shifted to zero mean."""

    kind: ClassVar[str] = "rayleigh"
    scale: float

    def perturb(self, x, rng):
        return x + (rng.rayleigh(self.scale, x.shape) - self.scale * math.sqrt(math.pi / 2))


@dataclass(frozen=True)
class Gamma:
    """Additive Gamma noise shifted to zero mean."""

    kind: ClassVar[str] = "gamma"
    shape: float
    scale: float

    def perturb(self, x, rng):
        return x + (rng.gamma(self.shape, self.scale, x.shape) - self.shape * self.scale)


NoiseSpec = Union[Gaussian, Poisson, SaltPepper, Speckle, Rayleigh, Gamma]

SPEC_TYPES = {cls.kind: cls for cls in (Gaussian, Poisson, SaltPepper, Speckle, Rayleigh, Gamma)}

PARAM_RANGES = {
    "gaussian": {"sigma": (0.01, 0.12)},
    "poisson": {"coeff": (4.0, 22.0)},
    "salt_pepper": {"ratio": (0.01, 0.18)},
    "speckle": {"intensity": (0.04, 0.35)},
    "rayleigh": {"scale": (0.08, 0.45)},
    "gamma": {"shape": (1.5, 5.5), "scale": (0.08, 0.22)},
}


def check_kind(kind: str) -> str:
    if kind not in SPEC_TYPES:
        raise InputError(f"unknown noise kind {kind!r}; valid kinds: {', '.join(NOISE_ORDER)}")
    return kind


def sample_spec(kind: str, rng: np.random.Generator) -> NoiseSpec:
    """Draw each parameter uniformly from its closed range."""
    check_kind(kind)
    params = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in PARAM_RANGES[kind].items()}
    return SPEC_TYPES[kind](**params)


def spec_to_dict(spec: NoiseSpec) -> dict:
    return {"kind": spec.kind, "params": asdict(spec)}


def spec_from_dict(d: dict) -> NoiseSpec:
    return SPEC_TYPES[check_kind(d["kind"])](**d["params"])


def apply_noise(image, spec: NoiseSpec, rng: np.random.Generator, clamp: bool = True) -> np.ndarray:
    """Corrupt ``image`` (values in [0, 1]). ``clamp=False`` exposes the raw perturbed values."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim < 2:
        raise InputError(f"image needs at least 2 spatial axes, got shape {x.shape}")
    if x.size and (x.min() < 0.0 or x.max() > 1.0 or not np.all(np.isfinite(x))):
        raise InputError("image pixels must lie in [0, 1]")
    out = spec.perturb(x, rng)
    return np.clip(out, 0.0, 1.0) if clamp else out


def substream(seed: int, kind: str, index: int) -> list[int]:
    """Entropy for the RNG of one (seed, kind, image) triple."""
    return [int(seed), NOISE_ORDER.index(check_kind(kind)), int(index)]


def corrupt_one(image, kind: str, key: list[int]):
    rng = np.random.default_rng(key)
    spec = sample_spec(kind, rng)
    return apply_noise(image, spec, rng), spec


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    kind: str
    params: dict
    rng_substream: list

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestEntry":
        return cls(**json.loads(line))

    @property
    def spec(self) -> NoiseSpec:
        return spec_from_dict({"kind": self.kind, "params": self.params})


def corrupt_dataset(images, kind: str, seed: int):
    """Corrupt every image with an independently sampled spec.

    Returns ``(corrupted, manifest)`` where ``manifest[i]`` records the spec and
    RNG substream used for image ``i``.
    """
    check_kind(kind)
    if len(images) == 0:
        raise InputError("cannot corrupt an empty image list")
    corrupted, manifest = [], []
    for i, img in enumerate(images):
        key = substream(seed, kind, i)
        out, spec = corrupt_one(img, kind, key)
        corrupted.append(out)
        manifest.append(ManifestEntry(i, kind, asdict(spec), key))
    if isinstance(images, np.ndarray):
        corrupted = np.stack(corrupted)
    return corrupted, manifest


def regenerate(image, entry: ManifestEntry) -> np.ndarray:
    """Reproduce one corrupted image from its manifest entry."""
    out, spec = corrupt_one(image, entry.kind, entry.rng_substream)
    if asdict(spec) != entry.params:
        raise InputError(f"manifest entry {entry.index}: params do not match its substream")
    return out
