"""Counter-based random streams keyed by (seed, experiment, batch)."""

from __future__ import annotations

import zlib

import numpy as np


def experiment_key(name) -> int:
    """Stable 32-bit key for an experiment name (ints pass through)."""
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed, experiment="default", batch=0) -> np.random.Generator:
    """Philox generator for one (seed, experiment, batch) triple.

    Streams for different triples are independent, and the stream for a
    given batch does not depend on how many batches were drawn before it.
    """
    if seed < 0 or batch < 0:
        raise ValueError("seed and batch must be non-negative")
    ss = np.random.SeedSequence([int(seed), experiment_key(experiment), int(batch)])
    return np.random.Generator(np.random.Philox(ss))
