"""Deterministic random streams.

Raw 64-bit words come from the PCG64 permuted congruential generator, whose
output sequence is fixed by its published definition and does not depend on
platform.  Normal variates are produced from those words with the Box-Muller
transform so that the whole path is reproducible across machines.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_MAX_ELEMENTS = 1 << 48


def element_count(dims):
    n = 1
    for d in dims:
        d = int(d)
        if d < 0:
            raise ValueError(f"negative dimension in {tuple(dims)}")
        n *= d
    if n > _MAX_ELEMENTS:
        raise OverflowError(f"element count of {tuple(dims)} overflows the tensor limit")
    return n


def _bit_generator(seed):
    return np.random.PCG64(int(seed) & _MASK64)


def uniform_words(n, seed):
    """``n`` doubles in [0, 1) built from the top 53 bits of each raw word."""
    raw = _bit_generator(seed).random_raw(n)
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def standard_normal(n, seed):
    """``n`` standard normal doubles via Box-Muller over PCG64 words."""
    if n == 0:
        return np.zeros(0)
    pairs = (n + 1) // 2
    u = uniform_words(2 * pairs, seed)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]


def derive_seed(seed, *keys):
    """Mix integer keys into ``seed`` (splitmix64 finalizer) for per-stream seeds."""
    z = int(seed) & _MASK64
    for k in keys:
        z = (z + 0x9E3779B97F4A7C15 + (int(k) & _MASK64)) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
    return z


def string_key(text):
    """Stable 64-bit key for a string (FNV-1a)."""
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


class Stream:
    """Sequential deterministic draws, used by the synthetic data generator."""

    def __init__(self, seed):
        self._gen = np.random.Generator(_bit_generator(seed))
        self._seed = int(seed) & _MASK64
        self._calls = 0

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high):
        return int(self._gen.integers(low, high))

    def normal(self, size):
        self._calls += 1
        n = int(np.prod(size))
        return standard_normal(n, derive_seed(self._seed, self._calls)).reshape(size)
