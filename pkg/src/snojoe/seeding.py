"""Seed derivation and random-generator construction.

All randomness in the toolkit flows through numpy's Philox counter-based
bit generator, keyed with 64-bit seeds derived from a single master seed
via splitmix64. Both generators are fixed, documented algorithms, so a
seed reproduces the same streams on any platform.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; return (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    """Return the ``index``-th (0-based) output of a splitmix64 stream
    seeded with ``master``. Used to give each pipeline stage (data,
    per-ablation-point model init, auxiliary fits) an independent seed.
    """
    if index < 0:
        raise ValueError("seed index must be >= 0")
    state = master & _MASK64
    out = 0
    for _ in range(index + 1):
        state, out = splitmix64(state)
    return out


def make_rng(seed: int) -> np.random.Generator:
    """Philox-backed generator for the given 64-bit seed."""
    return np.random.Generator(np.random.Philox(seed & _MASK64))
