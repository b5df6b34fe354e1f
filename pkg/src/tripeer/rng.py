"""Deterministic counter-based random number generator.

Built on the SplitMix64 finalizer so that every draw is a pure function of
(seed, stream, counter).  The constants (documented here and in the README
so streams can be reproduced in any language):

    GAMMA = 0x9E3779B97F4A7C15   counter increment (2^64 / golden ratio)
    MIX1  = 0xBF58476D1CE4E5B9   finalizer multiplier 1
    MIX2  = 0x94D049BB133111EB   finalizer multiplier 2

The i-th raw 64-bit word of a generator is

    mix64(key + (i + 1) * GAMMA)          (mod 2^64)
    key = mix64(mix64(seed) ^ (stream * MIX2 mod 2^64))

where mix64 is the SplitMix64 finalizer (xor-shift 30, *MIX1, xor-shift 27,
*MIX2, xor-shift 31).  Uniform doubles take the top 53 bits; normals use
the Box-Muller transform on uniform pairs.  The raw word stream is
bit-identical on every platform; transformed draws (normal, permutation)
additionally depend on the platform's libm rounding, which is stable on
any one machine.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

_U_GAMMA = np.uint64(GAMMA)
_U_MIX1 = np.uint64(MIX1)
_U_MIX2 = np.uint64(MIX2)
_TWO_NEG53 = 2.0 ** -53


def _mix64_int(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _U_MIX1
    z = (z ^ (z >> np.uint64(27))) * _U_MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Seeded stream of reproducible draws.

    Identical (seed, stream) pairs yield identical sequences; distinct
    streams derived from one seed are independent for test purposes.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._key = np.uint64(
            _mix64_int(_mix64_int(self.seed) ^ ((self.stream * MIX2) & MASK64))
        )
        self._counter = 0

    def derive(self, stream: int) -> "Rng":
        """New independent generator from the same seed."""
        return Rng(self.seed, stream)

    def raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words (uint64)."""
        idx = np.arange(self._counter + 1, self._counter + 1 + n, dtype=np.uint64)
        self._counter += n
        return _mix64_array(self._key + idx * _U_GAMMA)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53

    def uniform_range(self, n: int, lo: float, hi: float) -> np.ndarray:
        return lo + self.uniform(n) * (hi - lo)

    def normal(self, n: int, sigma: float = 1.0) -> np.ndarray:
        """n standard-normal draws (Box-Muller), scaled by sigma."""
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1]: keeps log finite
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return out * sigma

    def permutation(self, n: int) -> np.ndarray:
        """Permutation of range(n); order of n uniform keys."""
        return np.argsort(self.uniform(n), kind="stable").astype(np.int64)

    def subset(self, n: int, k: int) -> np.ndarray:
        """k indices drawn from range(n) without replacement."""
        if not 0 <= k <= n:
            raise ValueError(f"subset size {k} not in [0, {n}]")
        return self.permutation(n)[:k]
