"""Deterministic seed derivation helpers.

All stochastic components draw from explicit ``torch.Generator`` objects whose
seeds are derived from a base seed plus structural coordinates (epoch, sample
index, request fields).  Global RNG state is only touched at model-construction
time, so two runs with the same config are bit-identical.
"""

from __future__ import annotations

import torch

_MASK64 = (1 << 64) - 1


def mix_seed(*parts: int) -> int:
    """Mix integer parts into a single 63-bit seed (splitmix64-style)."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = (h ^ (int(p) & _MASK64)) & _MASK64
        h = (h * 0xBF58476D1CE4E5B9) & _MASK64
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & _MASK64
        h ^= h >> 31
    return h & ((1 << 63) - 1)


def make_generator(*seed_parts: int) -> torch.Generator:
    """CPU generator seeded from the mixed parts."""
    g = torch.Generator()
    g.manual_seed(mix_seed(*seed_parts))
    return g
