"""Deterministic, seeded image-distortion bank.

Seven training distortions plus two held-out ones for robustness sweeps.
Every application is a pure function of (image batch, spec): stochastic
pixels are keyed by (spec seed, image index, pixel index) through the
counter-based generator, so corrupted datasets are bit-reproducible across
platforms and runs. Severity 0 means identity for any kind. Outputs are
always clamped to [0, 1].

Geometric transforms are deliberately absent: a distorted variant must keep
the underlying anatomy of its source image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng

__all__ = [
    "CorruptionError",
    "CorruptionSpec",
    "TRAINING_KINDS",
    "HELD_OUT_KINDS",
    "IDENTITY_KIND",
    "SEVERITIES",
    "apply",
    "sample_training_spec",
    "severity_sweep",
]


class CorruptionError(ValueError):
    """Unknown kind, bad severity, or malformed spec string."""


TRAINING_KINDS = (
    "gaussian_noise",
    "salt_pepper",
    "brightness",
    "contrast",
    "gamma",
    "gaussian_blur",
    "solarize",
)
HELD_OUT_KINDS = ("box_blur", "pixelate")
IDENTITY_KIND = "identity"
SEVERITIES = (1, 2, 3)

# severity -> parameter, index 0 unused (severity 0 is identity)
_NOISE_SIGMA = (None, 0.05, 0.10, 0.20)
_SALT_PEPPER_FRACTION = (None, 0.01, 0.03, 0.08)
_BRIGHTNESS_SHIFT = (None, 0.1, 0.2, 0.35)
_CONTRAST_SCALE = (None, (0.8, 1.25), (0.6, 1.6), (0.4, 2.2))
_GAMMA_EXPONENT = (None, (0.8, 1.25), (0.6, 1.6), (0.5, 2.0))
_BLUR_SIGMA = (None, 0.5, 1.0, 1.5)
_SOLARIZE_THRESHOLD = (None, 0.9, 0.75, 0.6)
_BOX_RADIUS = (None, 1, 2, 3)
_PIXELATE_FACTOR = (None, 2, 4, 7)


def _resolve_params(kind: str, severity: int, seed: int) -> dict[str, float]:
    """Severity table lookup; direction choices (e.g. darker vs brighter)
    are drawn once from the seed so they live in the spec, not the apply."""
    if severity == 0 or kind == IDENTITY_KIND:
        return {}
    pick = int(rng.hash_words(seed, rng.string_hash(kind), 0xD1CE) & np.uint64(1))
    if kind == "gaussian_noise":
        return {"sigma": _NOISE_SIGMA[severity]}
    if kind == "salt_pepper":
        return {"fraction": _SALT_PEPPER_FRACTION[severity]}
    if kind == "brightness":
        sign = 1.0 if pick else -1.0
        return {"shift": sign * _BRIGHTNESS_SHIFT[severity]}
    if kind == "contrast":
        return {"scale": _CONTRAST_SCALE[severity][pick]}
    if kind == "gamma":
        return {"exponent": _GAMMA_EXPONENT[severity][pick]}
    if kind == "gaussian_blur":
        return {"sigma": _BLUR_SIGMA[severity]}
    if kind == "solarize":
        return {"threshold": _SOLARIZE_THRESHOLD[severity]}
    if kind == "box_blur":
        return {"radius": float(_BOX_RADIUS[severity])}
    if kind == "pixelate":
        return {"factor": float(_PIXELATE_FACTOR[severity])}
    raise CorruptionError(f"unknown corruption kind {kind!r}")


@dataclass(frozen=True)
class CorruptionSpec:
    """One deterministic distortion: kind, severity level, and noise seed."""

    kind: str
    severity: int
    seed: int
    params: dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind != IDENTITY_KIND and self.kind not in TRAINING_KINDS + HELD_OUT_KINDS:
            raise CorruptionError(f"unknown corruption kind {self.kind!r}")
        if self.severity not in (0,) + SEVERITIES:
            raise CorruptionError(f"severity {self.severity} outside 0..3")
        if not self.params:
            object.__setattr__(
                self, "params", _resolve_params(self.kind, self.severity, self.seed)
            )

    @property
    def is_identity(self) -> bool:
        return self.kind == IDENTITY_KIND or self.severity == 0

    def to_string(self) -> str:
        return f"{self.kind}:{self.severity}:{self.seed}"

    @classmethod
    def from_string(cls, text: str) -> "CorruptionSpec":
        parts = text.split(":")
        if len(parts) != 3:
            raise CorruptionError(f"malformed spec string {text!r}, want kind:severity:seed")
        kind, severity, seed = parts
        try:
            return cls(kind=kind, severity=int(severity), seed=int(seed))
        except ValueError as exc:
            raise CorruptionError(f"malformed spec string {text!r}: {exc}") from None


# ----------------------------------------------------------------------
# individual distortions (batch in, batch out, all pure)
# ----------------------------------------------------------------------


def _per_pixel_uniform(spec_seed: int, shape: tuple[int, ...], stream: int) -> np.ndarray:
    n = shape[0]
    per_image = int(np.prod(shape[1:]))
    image_idx = np.repeat(np.arange(n, dtype=np.uint64), per_image)
    pixel_idx = np.tile(np.arange(per_image, dtype=np.uint64), n)
    return rng.uniform(spec_seed, stream, image_idx, pixel_idx).reshape(shape)


def _per_pixel_normal(spec_seed: int, shape: tuple[int, ...], stream: int) -> np.ndarray:
    n = shape[0]
    per_image = int(np.prod(shape[1:]))
    image_idx = np.repeat(np.arange(n, dtype=np.uint64), per_image)
    pixel_idx = np.tile(np.arange(per_image, dtype=np.uint64), n)
    return rng.normal(spec_seed, stream, image_idx, pixel_idx).reshape(shape)


def _gaussian_noise(x: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    return x + sigma * _per_pixel_normal(seed, x.shape, 0x6E)


def _salt_pepper(x: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    u = _per_pixel_uniform(seed, x.shape, 0x5E)
    out = x.copy()
    out[u < fraction / 2.0] = 1.0
    out[(u >= fraction / 2.0) & (u < fraction)] = 0.0
    return out


def _brightness(x: np.ndarray, shift: float) -> np.ndarray:
    return x + shift


def _contrast(x: np.ndarray, scale: float) -> np.ndarray:
    mean = x.mean(axis=(1, 2, 3), keepdims=True)
    return mean + scale * (x - mean)


def _gamma(x: np.ndarray, exponent: float) -> np.ndarray:
    return np.power(x, exponent)


def _separable_filter(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Apply a 1-D kernel along H then W with reflect padding."""
    radius = len(kernel) // 2

    def along_last(arr: np.ndarray) -> np.ndarray:
        padded = np.pad(arr, [(0, 0)] * (arr.ndim - 1) + [(radius, radius)], mode="reflect")
        out = np.zeros_like(arr)
        for offset, weight in enumerate(kernel):
            out += weight * padded[..., offset : offset + arr.shape[-1]]
        return out

    x = along_last(x.swapaxes(-1, -2)).swapaxes(-1, -2)  # rows
    return along_last(x)  # columns


def _gaussian_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3.0 * sigma)))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    return _separable_filter(x, kernel)


def _box_blur(x: np.ndarray, radius: int) -> np.ndarray:
    width = 2 * radius + 1
    kernel = np.full(width, 1.0 / width)
    return _separable_filter(x, kernel)


def _solarize(x: np.ndarray, threshold: float) -> np.ndarray:
    return np.where(x > threshold, 1.0 - x, x)


def _pixelate(x: np.ndarray, factor: int) -> np.ndarray:
    h, w = x.shape[-2:]
    out = np.empty_like(x)
    for top in range(0, h, factor):
        for left in range(0, w, factor):
            block = x[..., top : top + factor, left : left + factor]
            out[..., top : top + factor, left : left + factor] = block.mean(
                axis=(-1, -2), keepdims=True
            )
    return out


def apply(images: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Corrupt an (N, C, H, W) batch in [0, 1]; returns a clamped copy."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4:
        raise CorruptionError(f"expected (N, C, H, W) batch, got shape {x.shape}")
    if spec.is_identity:
        return x.copy()
    p = spec.params
    if spec.kind == "gaussian_noise":
        out = _gaussian_noise(x, p["sigma"], spec.seed)
    elif spec.kind == "salt_pepper":
        out = _salt_pepper(x, p["fraction"], spec.seed)
    elif spec.kind == "brightness":
        out = _brightness(x, p["shift"])
    elif spec.kind == "contrast":
        out = _contrast(x, p["scale"])
    elif spec.kind == "gamma":
        out = _gamma(x, p["exponent"])
    elif spec.kind == "gaussian_blur":
        out = _gaussian_blur(x, p["sigma"])
    elif spec.kind == "solarize":
        out = _solarize(x, p["threshold"])
    elif spec.kind == "box_blur":
        out = _box_blur(x, int(p["radius"]))
    elif spec.kind == "pixelate":
        out = _pixelate(x, int(p["factor"]))
    else:
        raise CorruptionError(f"unknown corruption kind {spec.kind!r}")
    return np.clip(out, 0.0, 1.0)


def sample_training_spec(rng_seed: int) -> CorruptionSpec:
    """Uniform draw over the seven training kinds plus identity (1/8 each);
    severity uniform over 1..3. Held-out kinds are never sampled."""
    options = TRAINING_KINDS + (IDENTITY_KIND,)
    kind = options[int(rng.hash_words(rng_seed, 0x01) % np.uint64(len(options)))]
    if kind == IDENTITY_KIND:
        return CorruptionSpec(IDENTITY_KIND, 0, 0)
    severity = 1 + int(rng.hash_words(rng_seed, 0x02) % np.uint64(3))
    seed = int(rng.hash_words(rng_seed, 0x03))
    return CorruptionSpec(kind, severity, seed)


def severity_sweep(
    images: np.ndarray,
    kinds: tuple[str, ...],
    severities: tuple[int, ...] = SEVERITIES,
    base_seed: int = 0,
) -> list[tuple[CorruptionSpec, np.ndarray]]:
    """One corrupted copy of the batch per (kind, severity), with its spec."""
    entries = []
    for kind in kinds:
        for severity in severities:
            seed = int(rng.hash_words(base_seed, rng.string_hash(kind), severity))
            spec = CorruptionSpec(kind, severity, seed)
            entries.append((spec, apply(images, spec)))
    return entries
