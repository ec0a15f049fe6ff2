"""Named, seeded random streams.

Every stochastic consumer in the pipeline (weight init, patch sampling,
Poisson noise per slice, interpolation draws per training step) pulls from
its own substream, keyed by a string. Identical (seed, key) always yields
the identical sequence, independent of how many other streams were used,
which is what makes dataset generation parallel-safe and training runs
resumable without serializing raw generator state.
"""

import hashlib

import numpy as np


class RngStream:
    """A seeded PCG64 generator factory with string-keyed substreams."""

    def __init__(self, seed: int, key: str = ""):
        if not isinstance(seed, int) or seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
        self.seed = seed
        self.key = key
        entropy = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF] + _key_words(key)
        self._seq = np.random.SeedSequence(entropy)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def stream(self, key: str) -> "RngStream":
        """Derive an independent substream. Nested keys join with '/'."""
        full = f"{self.key}/{key}" if self.key else key
        return RngStream(self.seed, full)

    # convenience forwards to the underlying generator
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def poisson(self, lam):
        return self.generator.poisson(lam)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key!r})"


def _key_words(key: str) -> list:
    """Stable 32-bit words derived from the key string (blake2s digest)."""
    digest = hashlib.blake2s(key.encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
