"""Seedable random streams for every stochastic choice in the pipeline.

All randomness flows through `derive(seed, *key)`, which maps a global seed
plus an integer key path to an independent PCG64 stream. Identical
(seed, key) always reproduces the same draw sequence, on every platform,
and distinct key paths never share state. Batch operations derive one
stream per item so results are independent of processing order.
"""

from __future__ import annotations

import numpy as np

# Key-path namespaces. First key component of every derived stream, so two
# subsystems can never collide even if they use the same item indices.
NS_AUGMENT = 1
NS_MASK = 2
NS_SPLIT = 3
NS_CUTMIX = 4
NS_INIT = 5
NS_SHUFFLE = 6
NS_DEMO = 7
NS_LRFIND = 8


def derive(seed: int, *key: int) -> np.random.Generator:
    """Return a generator for the stream identified by (seed, key path)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def mix_seed(*parts: int) -> int:
    """Hash several integers into one stable 32-bit seed."""
    ss = np.random.SeedSequence(tuple(int(p) for p in parts))
    return int(ss.generate_state(1)[0])
