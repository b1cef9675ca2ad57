"""Deterministic derivation of per-replicate random streams.

Every random draw in the package comes from a numpy ``Generator`` over PCG64
whose 64-bit seed is derived as ``mix64(master_seed, index, tag)``: the master
seed, a replicate/stage index, and a string tag are folded together through
splitmix64 avalanche rounds (public-domain constants).  Two derivations agree
iff all three inputs agree, so worker scheduling cannot change any stream.

A :class:`StreamRegistry` additionally asserts that no two distinct
(index, tag) pairs of one run ever map to the same 64-bit key.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step: add the golden-ratio increment, then avalanche."""
    x = (x + _GOLDEN) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def hash_tag(tag: str) -> int:
    """FNV-1a (64-bit) over the UTF-8 bytes of ``tag``."""
    h = 0xCBF29CE484222325
    for byte in tag.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def mix64(master_seed: int, index: int, tag: str) -> int:
    """64-bit avalanche mix of (master_seed, index, tag); the stream key."""
    key = splitmix64(master_seed & _MASK64)
    key = splitmix64(key ^ splitmix64(index & _MASK64))
    key = splitmix64(key ^ hash_tag(tag))
    return key


def make_stream(master_seed: int, index: int, tag: str) -> np.random.Generator:
    """Fresh PCG64 generator for one (replicate, stage) of a run."""
    return np.random.Generator(np.random.PCG64(mix64(master_seed, index, tag)))


class StreamRegistry:
    """Derives streams for one run and asserts key uniqueness.

    The registry records every derived key; a collision between two distinct
    (index, tag) pairs is a fatal internal error, not a recoverable condition.
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._keys: dict[int, tuple[int, str]] = {}

    def key(self, index: int, tag: str) -> int:
        k = mix64(self.master_seed, index, tag)
        prev = self._keys.get(k)
        if prev is not None and prev != (index, tag):
            raise RuntimeError(
                f"stream key collision: {(index, tag)!r} vs {prev!r} both map to {k:#x}"
            )
        self._keys[k] = (index, tag)
        return k

    def stream(self, index: int, tag: str) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.key(index, tag)))

    def tags(self) -> list[str]:
        """Sorted distinct stage tags derived so far (for run manifests)."""
        return sorted({tag for _, tag in self._keys.values()})

    def __len__(self) -> int:
        return len(self._keys)
