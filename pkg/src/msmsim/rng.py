"""Deterministic per-individual random streams.

Every random quantity belongs to a named substream derived from the root
seed, the individual's id and a stream code, so results never depend on the
order in which individuals are processed or on the number of workers.
Keeping slot-1 covariates, treatment draws, rank jitter, copula noise,
censoring and the match pool on separate streams lets different engines (and
different pool sizes) share exactly the same slot-1 randomness.
"""

from __future__ import annotations

import numpy as np

COV = 0
TRT = 1
JITTER = 2
NOISE = 3
CENSOR = 4
POOL = 5
BOOT = 6
REPLICATE = 7


def substream(root_seed: int, *key: int) -> np.random.Generator:
    """Generator for the substream ``key`` under ``root_seed``.

    Parameters
    ----------
    root_seed : int
        Non-negative root seed.
    *key : int
        Non-negative integers, for example ``(individual_id, stream_code)``.
    """
    ss = np.random.SeedSequence(int(root_seed), spawn_key=tuple(int(v) for v in key))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(root_seed: int, *key: int) -> int:
    """A 63-bit integer seed derived from ``root_seed`` and ``key``."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=tuple(int(v) for v in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def resolve_seed(seed) -> int:
    """Accept an int or the string ``"random"`` and return a concrete seed."""
    if isinstance(seed, str):
        if seed.lower() == "random":
            return int(np.random.SeedSequence().entropy % (1 << 63))
        seed = int(seed)
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return seed
