"""Root-seed splitting.

Every random stream is a ``numpy.random.Generator`` over PCG64. A run's seed is
derived from the experiment's root seed with
``SeedSequence(root_seed, spawn_key=(stream_id, run))`` and the first ``uint64``
word of its state, so any single run can be replayed from
``(root_seed, stream, run)`` alone.
"""

from typing import Dict

import numpy as np

PRNG_IDENTITY = "numpy.random.PCG64"
SPLIT_RULE = "SeedSequence(root_seed, spawn_key=(stream_id, run)).generate_state(1, uint64)[0]"

STREAM_IDS: Dict[str, int] = {
    "chain": 1,
    "signflip": 2,
    "block": 3,
    "flattened": 4,
    "span": 5,
    "optimizer": 6,
}


def derive_seed(root_seed: int, stream: str, run: int) -> int:
    """Derive the 64-bit seed of one run of one stream.

    Args:
        root_seed: Experiment root seed
        stream: Stream name, one of ``STREAM_IDS``
        run: Run ordinal within the stream

    Returns:
        Seed usable with ``make_rng``
    """
    if stream not in STREAM_IDS:
        raise KeyError(f"Unknown seed stream '{stream}'. Available: {list(STREAM_IDS)}")
    sequence = np.random.SeedSequence(int(root_seed), spawn_key=(STREAM_IDS[stream], int(run)))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a derived seed."""
    return np.random.Generator(np.random.PCG64(int(seed)))
