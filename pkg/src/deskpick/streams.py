"""Named deterministic RNG substreams derived from one run seed."""

from __future__ import annotations

import numpy as np

STREAMS = {
    "init": 0,
    "scene": 1,
    "policy": 2,
    "value": 3,
    "eval": 4,
    "bc": 5,
    "dataset": 6,
    "worker": 7,
}


def seedseq(run_seed: int, stream: str, *indices) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(run_seed), STREAMS[stream]]
                                  + [int(i) for i in indices])


def generator(run_seed: int, stream: str, *indices) -> np.random.Generator:
    return np.random.default_rng(seedseq(run_seed, stream, *indices))


def derive_int(run_seed: int, stream: str, *indices) -> int:
    """Compact loggable seed for one episode/worker."""
    return int(seedseq(run_seed, stream, *indices).generate_state(1, np.uint64)[0])
