"""Deterministic, seedable randomness (PCG64 via numpy Generators)."""

from __future__ import annotations

import numpy as np


def make_rng(seed):
    """PCG64 generator; identical seeds give identical streams on any platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(master_seed, *keys):
    """Stable child seed from a master seed and integer keys (clip index etc.)."""
    ss = np.random.SeedSequence([int(master_seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
