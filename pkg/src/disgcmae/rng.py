"""Seeded Philox streams.

Every stochastic call site receives an explicit ``np.random.Generator``.
Child streams are keyed by integers so that the stream a sample sees does not
depend on how many draws earlier samples consumed.
"""

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def make_rng(seed: int, *path) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(p) for p in path)])
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *path) -> int:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(p) for p in path)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
