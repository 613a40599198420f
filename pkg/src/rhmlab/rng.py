"""Seeded, counter-based random streams.

Every sampling routine in the package takes an explicit ``numpy.random.Generator``
built on the Philox counter-based bit generator. Sub-streams are keyed by a
64-bit mix of the parent seed and an arbitrary tuple of integer stream ids::

    key = splitmix64(seed ^ splitmix64(id_0 ^ splitmix64(id_1 ^ ...)))

so that, e.g., trial 3 of sweep cell 5 always sees the same stream regardless of
how many workers run in parallel.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 finaliser on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(seed: int, *stream: int) -> int:
    """Mix ``seed`` with a path of stream ids into a new 64-bit seed."""
    acc = splitmix64(int(seed) & _MASK)
    for s in stream:
        acc = splitmix64(acc ^ (int(s) & _MASK))
    return acc


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator keyed by ``derive_seed(seed, *stream)``."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *stream)))


def spawn(rng: np.random.Generator, *stream: int) -> np.random.Generator:
    """Independent child stream drawn from ``rng`` (advances ``rng`` by one draw)."""
    base = int(rng.integers(0, 1 << 63, dtype=np.int64))
    return make_rng(base, *stream)


def standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard Gaussians via the Box-Muller transform on uniform draws.

    Uses only ``rng.random`` so the output depends on nothing but the Philox
    counter sequence.
    """
    shape = tuple(np.atleast_1d(shape).astype(int)) if not isinstance(shape, tuple) else shape
    n = int(np.prod(shape, dtype=np.int64))
    k = (n + 1) // 2
    u1 = 1.0 - rng.random(k)  # (0, 1]
    u2 = rng.random(k)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * k)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:n].reshape(shape)
