"""Small serializable random stream shared by Python code and compiled kernels.

xoshiro256** with splitmix64 seeding.  The whole state is four 64-bit
words in a numpy array, so compiled loops advance it in place and a
checkpoint stores it as four integers.  Python callers use
:class:`StreamRng`, which draws from the very same state.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
_DOUBLE_UNIT = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def splitmix64(x):
    z = x + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True)
def next_double(s):
    """Uniform in [0, 1) with 53 random bits."""
    return float(next_u64(s) >> np.uint64(11)) * _DOUBLE_UNIT


@njit(cache=True)
def seed_state(s, x):
    for i in range(4):
        x = splitmix64(x)
        s[i] = x


@njit(cache=True)
def fill_uniform(seed, key, a, b, half, out):
    """Fill ``out`` with uniforms in [-half, half) that depend only on (seed, key, a, b)."""
    z = splitmix64(seed)
    z = splitmix64(z ^ key)
    z = splitmix64(z ^ np.uint64(a))
    z = splitmix64(z ^ np.uint64(b))
    s = np.empty(4, dtype=np.uint64)
    seed_state(s, z)
    for i in range(out.shape[0]):
        out[i] = -half + 2.0 * half * next_double(s)


def as_u64(x: int) -> np.uint64:
    return np.uint64(x & MASK64)


class StreamRng:
    """Python face of the stream; ``state`` is shared with compiled code."""

    def __init__(self, seed: int = 0):
        self.state = np.zeros(4, dtype=np.uint64)
        seed_state(self.state, as_u64(seed))

    def random(self) -> float:
        return next_double(self.state)

    def getstate(self) -> list[int]:
        return [int(x) for x in self.state]

    def setstate(self, words) -> None:
        words = [int(w) for w in words]
        if len(words) != 4 or not any(words):
            raise ValueError("rng state must be four words, not all zero")
        self.state[:] = np.array(words, dtype=np.uint64)
