"""Seeded random streams.

Every random draw in seplab goes through a `RandomStream`. Streams wrap
numpy's PCG64 bit generator seeded from a `SeedSequence`, so equal seeds
give equal sequences on every platform. Parallel or per-example work
derives independent child streams with `spawn(*keys)` instead of sharing
one stream.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

ALGORITHM = "PCG64"


class RandomStream:
    """Single-owner random stream.

    Args:
        seed (int): 64-bit seed.
        keys (Sequence[int], optional): Derivation path from the root seed.
    """

    def __init__(self, seed: int, keys: Sequence[int] = ()) -> None:
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.keys: Tuple[int, ...] = tuple(int(k) for k in keys)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.keys)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def spawn(self, *keys: int) -> "RandomStream":
        """Derive an independent stream; the parent is not advanced."""
        return RandomStream(self.seed, self.keys + tuple(keys))

    def uniform(
        self,
        low: Union[float, np.ndarray] = 0.0,
        high: Union[float, np.ndarray] = 1.0,
        size=None,
    ) -> np.ndarray:
        """Uniform draws on [low, high)."""
        return self.generator.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Integers in the half-open range [low, high)."""
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def bernoulli(self, p: float, size) -> np.ndarray:
        """Boolean draws that are True with probability `p`."""
        return self.generator.random(size) < p

    def normal(self, scale: float = 1.0, size=None) -> np.ndarray:
        """Centered Gaussian draws."""
        return self.generator.normal(0.0, scale, size)

    def derive_seed(self) -> int:
        """Draw a fresh 63-bit seed for a downstream configuration."""
        return int(self.generator.integers(0, 2**63 - 1))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, keys={self.keys})"


def as_stream(rng: Optional[Union[int, RandomStream]]) -> RandomStream:
    """Accept a seed, a stream, or None (seed 0)."""
    if isinstance(rng, RandomStream):
        return rng
    return RandomStream(0 if rng is None else int(rng))
