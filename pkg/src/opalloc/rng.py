"""Seeded random streams.

Two kinds of randomness are used:

* scenario generation draws from numpy ``Generator`` objects keyed by a seed
  and a stream name;
* rollouts use a counter-based hash (splitmix64) of
  ``(seed, instance, iteration, t, robot, stream)`` so that every policy
  sees the same environment noise, and the compiled and numpy kernels
  produce identical draws.
"""
from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1
ENV = 0
TIE = 1

_C1 = np.uint64(0x9E3779B97F4A7C15)
_C2 = np.uint64(0xBF58476D1CE4E5B9)
_C3 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


def stream_code(name: str) -> int:
    return zlib.crc32(name.encode())


def generator(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent numpy generator for a named stream."""
    ss = np.random.SeedSequence(entropy=int(seed) & MASK64, spawn_key=(stream_code(name), *extra))
    return np.random.default_rng(ss)


def splitmix(x):
    """splitmix64 finaliser on uint64 arrays (wrapping arithmetic)."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + _C1
        z = (z ^ (z >> np.uint64(30))) * _C2
        z = (z ^ (z >> np.uint64(27))) * _C3
    return z ^ (z >> np.uint64(31))


def splitmix_int(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def iteration_key(seed: int, instance: int, iteration):
    """Per-rollout base key; ``iteration`` may be an array."""
    h = splitmix_int(int(seed) & MASK64)
    h = splitmix_int(h ^ (int(instance) & MASK64))
    return splitmix(np.uint64(h) ^ np.asarray(iteration, dtype=np.uint64))


def uniforms(base, t: int, robots: int, stream: int) -> np.ndarray:
    """Uniforms in [0,1) of shape ``base.shape + (robots,)`` for step ``t``."""
    base = np.asarray(base, dtype=np.uint64)
    h = splitmix(base ^ np.uint64(t))
    lane = (np.arange(robots, dtype=np.uint64) << np.uint64(2)) | np.uint64(stream)
    z = splitmix(h[..., None] ^ lane)
    return (z >> np.uint64(11)).astype(np.float64) * _INV53


class RolloutStream:
    """Scalar view of the counter-based draws for one rollout."""

    def __init__(self, seed: int, instance: int, iteration: int):
        self.base = iteration_key(seed, instance, np.array([iteration], dtype=np.uint64))

    def env(self, t: int, robots: int) -> np.ndarray:
        return uniforms(self.base, t, robots, ENV)[0]

    def tie(self, t: int, robots: int) -> np.ndarray:
        return uniforms(self.base, t, robots, TIE)[0]
