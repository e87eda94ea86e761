"""Counter-derived random substreams.

Every Monte Carlo task draws from a generator keyed by
``(seed, task, index, ...)`` so results do not depend on how work is split
across workers.
"""
import zlib

import numpy as np


def _key_int(key):
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"substream keys must be nonnegative, got {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported substream key {key!r}")


def substream(seed, *keys):
    """Return an independent ``Generator`` for ``(seed, *keys)``."""
    if seed is None:
        raise ValueError("a seed is required; wall-clock seeding is not supported")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def seed_from(rng):
    """Draw a 63-bit seed from ``rng`` (used when an API receives a Generator)."""
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(0, 2**63 - 1))
