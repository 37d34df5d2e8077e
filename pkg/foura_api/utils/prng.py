"""
Reproducible random streams: splitmix64 seed expansion feeding xoshiro256**,
uniforms from the top 53 bits, Gaussians by Box-Muller.

Pure integer arithmetic, so a seed gives the same stream on every platform.
"""
import math
from typing import Tuple

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class SplitMix64:
    """
    SplitMix64 generator, used only to expand a seed into xoshiro state
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_int(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


class Xoshiro256StarStar:
    """
    xoshiro256** generator with Gaussian sampling.

    Parameters:
        -seed: int
            -any integer; reduced modulo 2^64 and expanded with splitmix64
    """

    def __init__(self, seed: int):
        expander = SplitMix64(seed)
        self.state = [expander.next_int() for _ in range(4)]
        self._spare = None

    def next_int(self) -> int:
        s = self.state
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64

        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]

        s[2] ^= t
        s[3] = _rotl(s[3], 45)

        return result

    def uniform(self) -> float:
        """Float in [0, 1) from the top 53 bits."""
        return (self.next_int() >> 11) * (1.0 / (1 << 53))

    def gaussian(self) -> float:
        if self._spare is not None:
            value, self._spare = self._spare, None
            return value
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        radius = math.sqrt(-2.0 * math.log(u1))
        angle = 2.0 * math.pi * u2
        self._spare = radius * math.sin(angle)
        return radius * math.cos(angle)

    def normal(self, shape: Tuple[int, ...], std: float = 1.0) -> np.ndarray:
        count = int(np.prod(shape))
        values = np.fromiter((self.gaussian() for _ in range(count)), dtype=np.float64, count=count)
        return values.reshape(shape) * std

    def uniform_array(self, shape: Tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        values = np.fromiter((self.uniform() for _ in range(count)), dtype=np.float64, count=count)
        return values.reshape(shape)

    def randint(self, high: int) -> int:
        """Integer in [0, high)."""
        return int(self.uniform() * high)

    def orthonormal(self, size: int, cols: int) -> np.ndarray:
        """size x cols matrix with orthonormal columns (QR of a Gaussian draw, signs fixed)."""
        q, r = np.linalg.qr(self.normal((size, cols)))
        signs = np.where(np.diag(r) < 0, -1.0, 1.0)
        return q * signs


def derive_seed(seed: int, *salt: int) -> int:
    """Independent sub-stream seed for (seed, salt...)."""
    mixer = SplitMix64(seed)
    value = mixer.next_int()
    for s in salt:
        mixer = SplitMix64(value ^ ((s * 0x9E3779B97F4A7C15) & MASK64))
        value = mixer.next_int()
    return value
