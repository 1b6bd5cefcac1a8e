"""SplitMix64 finalizer used for every reproducible pseudo-random quantity.

Constants (Steele, Lea & Flood; also used by java.util.SplittableRandom):

    GAMMA = 0x9E3779B97F4A7C15
    M1    = 0xBF58476D1CE4E5B9
    M2    = 0x94D049BB133111EB

``mix64(x)``: ``z = x + GAMMA; z = (z ^ z>>30) * M1; z = (z ^ z>>27) * M2;
return z ^ z>>31`` (all mod 2**64). Tuples are folded left to right with
``h = mix64(h ^ (v mod 2**64))`` starting from ``mix64(seed)``.
"""

from __future__ import annotations

import numpy as np

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB
_UNIT = 2.0 ** -53


def mix64(x: int) -> int:
    z = (x + GAMMA) & MASK
    z = ((z ^ (z >> 30)) * M1) & MASK
    z = ((z ^ (z >> 27)) * M2) & MASK
    return z ^ (z >> 31)


def hash_tuple(seed: int, values) -> int:
    h = mix64(seed & MASK)
    for v in values:
        h = mix64(h ^ (int(v) & MASK))
    return h


def unit(h: int) -> float:
    """Top 53 bits as a float in [0, 1)."""
    return (h >> 11) * _UNIT


def mix64_array(x: np.ndarray) -> np.ndarray:
    # wraparound is intended; numpy only warns for 0-d inputs
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(M2)
    return z ^ (z >> np.uint64(31))


def fold_array(h: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Vectorized ``mix64(h ^ v)``; negative ``v`` wraps mod 2**64."""
    v = np.asarray(values, dtype=np.int64).astype(np.uint64)
    return mix64_array(np.asarray(h, dtype=np.uint64) ^ v)


def unit_array(h: np.ndarray) -> np.ndarray:
    return (np.asarray(h, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * _UNIT
