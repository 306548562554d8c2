"""Splittable, label-addressed random streams.

Every random draw in the pipeline comes from a :class:`RandomStream` that is
reached from the single master seed by a path of string labels, e.g.
``master -> "collect" -> "traj/17"``.  Stream keys are derived by hashing the
parent key together with the child label (SHA-256, truncated to 128 bits) and
feed a counter-based Philox generator, so any stream is reproducible from the
master seed and its path alone, independent of the order in which sibling
streams are created or consumed.

Test vector (frozen; see tests/test_prng.py)::

    RandomStream.from_seed(0).split("a").key_words == (9822063711699828146, 13863929501743843412)
"""

from __future__ import annotations

import hashlib

import numpy as np

_DOMAIN = b"rotoradapt-prng-v1"


def _derive_key(parent: bytes, label: str) -> bytes:
    return hashlib.sha256(parent + b"/" + label.encode("utf-8")).digest()[:16]


class RandomStream:
    """One node of the stream tree: a Philox generator plus a split method."""

    __slots__ = ("_key", "path", "_gen")

    def __init__(self, key: bytes, path: str):
        if len(key) != 16:
            raise ValueError("stream key must be 16 bytes")
        self._key = key
        self.path = path
        self._gen: np.random.Generator | None = None

    @classmethod
    def from_seed(cls, seed: int) -> "RandomStream":
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        key = _derive_key(_DOMAIN, str(int(seed)))
        return cls(key, path=str(int(seed)))

    def split(self, label: str | int) -> "RandomStream":
        """Derive the child stream for `label`; never advances this stream."""
        label = str(label)
        return RandomStream(_derive_key(self._key, label), path=f"{self.path}/{label}")

    @property
    def key_words(self) -> tuple[int, int]:
        """The 128-bit Philox key as two little-endian uint64 words."""
        return (
            int.from_bytes(self._key[:8], "little"),
            int.from_bytes(self._key[8:], "little"),
        )

    @property
    def gen(self) -> np.random.Generator:
        """The stream's generator; stateful, created on first use."""
        if self._gen is None:
            self._gen = np.random.Generator(np.random.Philox(key=np.array(self.key_words, dtype=np.uint64)))
        return self._gen

    # Convenience draws, all delegating to the cached generator.

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self.gen.uniform(low, high, size)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self.gen.normal(0.0, scale, size)

    def integers(self, high: int, size=None) -> np.ndarray:
        return self.gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """First k entries of a permutation of range(n), sorted for stable order."""
        if k > n:
            raise ValueError(f"cannot choose {k} of {n}")
        return np.sort(self.gen.permutation(n)[:k])

    def glorot_uniform(self, fan_in: int, fan_out: int) -> np.ndarray:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self.gen.uniform(-bound, bound, size=(fan_in, fan_out))

    def beta_scaled(self, a: float, b: float, lo: float, hi: float, size=None) -> np.ndarray:
        """Scaled Beta(a, b) sample on [lo, hi] via the ratio of two Gamma draws."""
        g1 = self.gen.standard_gamma(a, size=size)
        g2 = self.gen.standard_gamma(b, size=size)
        return lo + (hi - lo) * g1 / (g1 + g2)

    def __repr__(self) -> str:
        return f"RandomStream({self.path!r})"
