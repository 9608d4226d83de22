"""SplitMix64 pseudo-random stream.

Everything seeded in this package (synthetic embeddings, attention dumps,
benchmark manifests, random-pair baselines) draws from this generator so
results can be reproduced bit-for-bit from a 64-bit seed, in any language.

Stream definition::

    state += 0x9E3779B97F4A7C15                    (mod 2**64)
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9        (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB        (mod 2**64)
    output z ^ (z >> 31)

Derived quantities:

* ``uniform()``  -> ``(x >> 11) * 2**-53`` in ``[0, 1)``
* ``randint(lo, hi)`` -> rejection sampling, ``lo + x % r`` for
  ``x < 2**64 - (2**64 % r)``, ``r = hi - lo + 1``
* ``normals(n)`` -> Box-Muller on consecutive output pairs ``(x1, x2)``:
  ``u1 = ((x1 >> 11) + 1) * 2**-53`` (in ``(0, 1]``), ``u2 = (x2 >> 11) * 2**-53``,
  yielding ``r*cos(2*pi*u2)`` then ``r*sin(2*pi*u2)`` with ``r = sqrt(-2 ln u1)``.
"""

from __future__ import annotations

import hashlib

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_TWO_POW_M53 = 2.0 ** -53


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, label: str) -> int:
    """Stable child seed for a named sub-stream (first 8 bytes of SHA-256, big-endian)."""
    digest = hashlib.sha256(f"{seed & _MASK}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class SplitMix64:
    """SplitMix64 generator with scalar and vectorised draws on one stream."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & _MASK
        return _mix(self.state)

    def u64s(self, n: int) -> np.ndarray:
        """Next ``n`` outputs as a uint64 array (same values as ``n`` calls to next_u64)."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            out = _mix_array(states)
        self.state = (self.state + n * GOLDEN_GAMMA) & _MASK
        return out

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * _TWO_POW_M53

    def uniforms(self, n: int) -> np.ndarray:
        return (self.u64s(n) >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        r = hi - lo + 1
        limit = (1 << 64) - ((1 << 64) % r)
        while True:
            x = self.next_u64()
            if x < limit:
                return lo + x % r

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normal variates by Box-Muller (consumes 2*ceil(n/2) outputs)."""
        pairs = (n + 1) // 2
        raw = self.u64s(2 * pairs).reshape(pairs, 2) >> np.uint64(11)
        u1 = (raw[:, 0].astype(np.float64) + 1.0) * _TWO_POW_M53
        u2 = raw[:, 1].astype(np.float64) * _TWO_POW_M53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]
