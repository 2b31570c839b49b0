"""Named random sub-streams derived from one root seed.

Every consumer of randomness (task sampling, DropEdge, initialization,
evaluation, ...) gets its own stream keyed by name, so that changing how
much one consumer draws never shifts another consumer's sequence.
"""

import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Return a generator for sub-stream ``name`` of ``seed``.

    ``extra`` integers further specialise the stream (e.g. an epoch index).
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy = [int(seed), _name_key(name), *(int(e) for e in extra)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
