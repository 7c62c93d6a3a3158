"""Seeded random streams.

Every generator is a numpy ``Philox`` (4x64 counter-based) instance keyed by a
``SeedSequence`` built from the run seed plus a spawn key naming its purpose.
The same (seed, purpose, index) triple yields the same stream on any platform
and independently of how many other streams were created before it.
"""

from __future__ import annotations

import secrets

import numpy as np

INIT = 0
SAMPLING = 1
NOISE = 2
DATA = 3
TRIALS = 4

SEED_BITS = 64


def fresh_seed() -> int:
    """A 64-bit seed from OS entropy."""
    return secrets.randbits(SEED_BITS)


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**SEED_BITS:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(purpose, index))
    return np.random.Generator(np.random.Philox(ss))


def child_seeds(master: int, count: int, purpose: int = TRIALS) -> list[int]:
    """Deterministic 64-bit seeds derived from ``master``, e.g. for replayable sweeps."""
    ss = np.random.SeedSequence(check_seed(master), spawn_key=(purpose,))
    words = ss.generate_state(2 * count, dtype=np.uint32).astype(np.uint64)
    return [int((words[2 * i] << np.uint64(32)) | words[2 * i + 1]) for i in range(count)]
