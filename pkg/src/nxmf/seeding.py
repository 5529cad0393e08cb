"""Counter-split random streams.

All randomness in the package flows from a single 64-bit master seed.  Each
consumer derives an independent Philox stream keyed by (purpose, *counters),
so trajectories are reproducible and stable under changes in agent count,
replica count or batching: the values drawn for (replica r, step s) never
depend on how many other replicas or steps exist.
"""

from __future__ import annotations

import numpy as np

# purpose tags for stream derivation
INIT = 1      # initial particle draws
NOISE = 2     # per-step diffusion increments
BOOTSTRAP = 3 # bootstrap resampling in gap estimators
GRAPH = 4     # random graph sampling


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (master_seed, key).

    Distinct keys give statistically independent Philox streams; the same
    key always reproduces the same stream.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def normal_block(master_seed: int, key: tuple[int, ...], shape) -> np.ndarray:
    """Standard-normal block for one (purpose, counter...) slot.

    Row i of the block is a function of (master_seed, key, i) only, so
    growing the leading dimension extends the block without changing
    earlier rows.
    """
    return stream(master_seed, *key).standard_normal(shape)
