"""Counter-based random streams.

Every random number is a pure function of ``(key, trial, step, lane)``, where
``key`` is derived from the 64-bit master seed plus any grid coordinates.  The
mixing function is the SplitMix64 finalizer applied once per coordinate::

    h = mix64(mix64(mix64(key + trial) + step) + lane)

Because draws never depend on call order, a trial's path is identical whether
it is simulated alone, in a batch of 10**5, or on any worker.  Adding grid
points does not perturb existing ones since each point gets its own key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

# lane ids
NOISE = 0
CHANGEPOINT = 1


def mix64(x):
    """SplitMix64 finalizer on uint64 scalars or arrays (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_key(seed: int, *path: int) -> int:
    """Derive a stream key from a master seed and integer coordinates."""
    if not 0 <= int(seed) <= _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    k = int(mix64(np.uint64(int(seed))))
    for p in path:
        k = int(mix64(np.uint64((k + int(p)) & _MASK64)))
    return k


def _hash(key: int, trial, step, lane: int):
    k = np.uint64(key)
    t = np.asarray(trial, dtype=np.uint64)
    s = np.asarray(step, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = mix64(k + t)
        h = mix64(h + s)
        h = mix64(h + np.uint64(lane))
    return h


def uniform(key: int, trial, step, lane: int = NOISE) -> np.ndarray:
    """Uniform(0, 1) draws, open at both ends; broadcasts over trial and step."""
    h = _hash(key, trial, step, lane)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normal(key: int, trial, step, lane: int = NOISE) -> np.ndarray:
    """Standard normal draws by inverse CDF of :func:`uniform`."""
    return ndtri(uniform(key, trial, step, lane))


@dataclass(frozen=True)
class Stream:
    """A single trial's stream: fixed key and trial index."""

    key: int
    trial: int = 0

    @classmethod
    def from_seed(cls, seed: int, *path: int, trial: int = 0) -> "Stream":
        return cls(derive_key(seed, *path), trial)

    def uniform(self, step, lane: int = NOISE) -> np.ndarray:
        return uniform(self.key, self.trial, step, lane)

    def normal(self, step, lane: int = NOISE) -> np.ndarray:
        return normal(self.key, self.trial, step, lane)
