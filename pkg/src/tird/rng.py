"""Deterministic seeded PRNG used for every random choice in the package.

A counter-based 64-bit xorshift-multiply generator (splitmix64 mixing
function): output i is a pure function of (seed, i), so streams can be
generated scalar-by-scalar or as whole numpy arrays with identical results,
and there is no global state anywhere. Independent substreams are derived
by hashing a string tag into the seed, which keeps consumers order-independent.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = 0xFFFFFFFFFFFFFFFF
# top 53 bits of a u64 give a uniform double in [0, 1)
_INV_2_53 = float(2.0**-53)


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):  # u64 wraparound is the point
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _mix_int(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64_MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64_MASK
    return z ^ (z >> 31)


def _hash_tag(tag: str) -> int:
    h = 0xCBF29CE484222325  # FNV-1a over UTF-8 bytes
    for b in tag.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _U64_MASK
    return h


class Rng:
    """Stateful view over the counter-based stream.

    `fork(tag)` derives an independent generator whose stream depends only on
    (seed, tag), never on how much of the parent stream was consumed.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _U64_MASK
        self._counter = 0

    def fork(self, tag: str) -> "Rng":
        return Rng(_mix_int((self.seed + _hash_tag(tag)) & _U64_MASK))

    def _raw(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = np.arange(self._counter, self._counter + n, dtype=np.uint64)
            states = np.uint64(self.seed) + (idx + np.uint64(1)) * _GOLDEN
            out = _mix(states)
        self._counter += n
        return out

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def uniform(self, lo: float = 0.0, hi: float = 1.0, shape=None) -> np.ndarray | float:
        """Uniform floats in [lo, hi); scalar when shape is None."""
        n = 1 if shape is None else int(np.prod(shape))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        vals = lo + (hi - lo) * u
        if shape is None:
            return float(vals[0])
        return vals.reshape(shape)

    def normal(self, mu: float = 0.0, sigma: float = 1.0, shape=None) -> np.ndarray | float:
        """Gaussian samples via Box-Muller on consecutive uniform pairs."""
        n = 1 if shape is None else int(np.prod(shape))
        m = n + (n & 1)
        u = (self._raw(2 * m) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        u1 = u[:m]
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(1.0 - u1))  # 1-u1 avoids log(0)
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        vals = mu + sigma * z[:n]
        if shape is None:
            return float(vals[0])
        return vals.reshape(shape)

    def integers(self, lo: int, hi: int, shape=None) -> np.ndarray | int:
        """Integers in [lo, hi) by rejection-free modular reduction (tiny bias is fine here)."""
        n = 1 if shape is None else int(np.prod(shape))
        span = np.uint64(hi - lo)
        vals = (self._raw(n) % span).astype(np.int64) + lo
        if shape is None:
            return int(vals[0])
        return vals.reshape(shape)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integers(0, i + 1)
            items[i], items[j] = items[j], items[i]
