"""Deterministic, replayable random streams.

Every stochastic choice in the package (fire masks, forward noise, batch
indices, sampler noise, weight init) is drawn from a ``torch.Generator``
seeded by mixing one 64-bit master seed with a path of integer/string keys.
Streams are stateless: the same (seed, key path) always yields the same
values, which is what makes checkpoint resume and repeated sampling
bit-exact. Mixing uses splitmix64; string keys are hashed with blake2s so
the derivation does not depend on Python's per-process hash randomization.
"""

from __future__ import annotations

import hashlib

import torch

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _key_to_int(key: int | str) -> int:
    if isinstance(key, bool):
        return int(key)
    if isinstance(key, int):
        return key & _MASK64
    if isinstance(key, str):
        digest = hashlib.blake2s(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream keys must be int or str, got {type(key).__name__}")


class SeedStream:
    """A node in a tree of deterministic random streams."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = _splitmix64(seed & _MASK64)

    def child(self, *keys: int | str) -> "SeedStream":
        node = SeedStream.__new__(SeedStream)
        state = self._state
        for key in keys:
            state = _splitmix64(state ^ _key_to_int(key))
        node._state = state
        return node

    def seed(self) -> int:
        # torch.Generator.manual_seed wants a non-negative int64
        return self._state & ((1 << 63) - 1)

    def generator(self) -> torch.Generator:
        g = torch.Generator()
        g.manual_seed(self.seed())
        return g

    def __repr__(self) -> str:
        return f"SeedStream(0x{self._state:016x})"
