"""Counter-based pseudo-randomness built on splitmix64.

Every random decision in this package is a pure function of a 64-bit seed and
a handful of counter words (epoch, image index, pixel index, ...). There is
no sequential generator state, which makes corrupted datasets, parameter
initializations, and shuffles bit-reproducible across platforms and across
resumed training runs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "mix",
    "hash_words",
    "string_hash",
    "uniform",
    "normal",
    "truncated_normal",
    "permutation",
]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_TWO53_INV = 1.0 / float(1 << 53)


def mix(x):
    """splitmix64 finalizer; accepts scalars or uint64 arrays."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):  # modular 2**64 wraparound is the point
        x = (x + _GAMMA).astype(np.uint64)
        x = ((x ^ (x >> _U64(30))) * _M1).astype(np.uint64)
        x = ((x ^ (x >> _U64(27))) * _M2).astype(np.uint64)
        return x ^ (x >> _U64(31))


def hash_words(*words):
    """Fold counter words into one uint64 stream; broadcasting over arrays."""
    state = np.asarray(np.uint64(0))
    for word in words:
        word = np.asarray(word).astype(np.uint64)
        state = mix(state ^ word)
    return state


def string_hash(text: str) -> np.uint64:
    """Stable 64-bit digest of a string (parameter names, corruption kinds)."""
    import hashlib

    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return np.uint64(int.from_bytes(digest, "little"))


def uniform(*words) -> np.ndarray:
    """Uniform draws in [0, 1) keyed by the counter words."""
    bits = hash_words(*words)
    return ((bits >> _U64(11)).astype(np.float64)) * _TWO53_INV


def normal(*words) -> np.ndarray:
    """Standard normal draws via Box-Muller on two derived uniform streams."""
    u1 = (hash_words(*words, np.uint64(0x5A)) >> _U64(11)).astype(np.float64)
    u1 = (u1 + 1.0) * _TWO53_INV  # (0, 1]: keeps log() finite
    u2 = uniform(*words, np.uint64(0xA5))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def truncated_normal(shape: tuple[int, ...], std: float, *words) -> np.ndarray:
    """Normal truncated to +/- 2 sigma via inverse-CDF sampling.

    Deterministic per (words, flat index); used for parameter init.
    """
    from scipy.special import erf, erfinv

    n = int(np.prod(shape)) if shape else 1
    u = uniform(*words, np.arange(n, dtype=np.uint64))
    lo = 0.5 * (1.0 + erf(-2.0 / np.sqrt(2.0)))
    hi = 0.5 * (1.0 + erf(2.0 / np.sqrt(2.0)))
    z = np.sqrt(2.0) * erfinv(2.0 * (lo + u * (hi - lo)) - 1.0)
    return (z * std).reshape(shape)


def permutation(n: int, *words) -> np.ndarray:
    """Deterministic permutation of range(n): argsort of per-index hashes."""
    keys = hash_words(*words, np.arange(n, dtype=np.uint64))
    return np.argsort(keys, kind="stable")
