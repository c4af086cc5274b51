"""Deterministic seed derivation for parallel Monte Carlo.

Every random stream in the package is keyed by a 64-bit master seed and a
chain of integer tags (purpose tags, replication indices, draw indices).
Derivation uses the SplitMix64 finalizer, so

    derive(seed, REP, r)            # per-replication seed
    derive(rep_seed, STEP_NOISE)    # per-purpose stream within a replication

is reproducible across processes and independent of worker scheduling.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Purpose tags. Values are arbitrary but frozen: changing them changes every
# simulated path.
REPLICATION = 0x01
STEP_NOISE = 0x02
JUMP_MARKS = 0x03
SIGMA_JUMP_MARKS = 0x04
LIMIT_DRAWS = 0x05
PROBE_POINTS = 0x06
MC_QUADRATURE = 0x07


def splitmix64(z: int) -> int:
    """One round of the SplitMix64 output function (Steele et al.)."""
    z &= _MASK
    z = (z ^ (z >> 30)) * 0xBF58476D1FE64D69 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def derive(seed: int, *tags: int) -> int:
    """Mix ``seed`` with a chain of integer tags into a fresh 64-bit seed.

    Each tag advances the state by the SplitMix64 golden-ratio increment
    scaled by (tag + 1) and applies the finalizer, so distinct tag chains
    give statistically independent seeds.
    """
    state = int(seed) & _MASK
    for tag in tags:
        state = splitmix64((state + _GOLDEN * (int(tag) + 1)) & _MASK)
    return state


def generator(seed: int, *tags: int) -> np.random.Generator:
    """PCG64 generator for the stream identified by (seed, *tags)."""
    return np.random.Generator(np.random.PCG64(derive(seed, *tags)))
