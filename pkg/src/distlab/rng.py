"""Seeded random streams.

Every random stream in the package is a numpy ``Generator`` backed by PCG64,
derived from the triple ``(seed, stream name, index)`` through
``numpy.random.SeedSequence``. The stream name is reduced to a 32-bit integer
with CRC32 so the derivation is stable across Python processes (``hash()`` is
salted per process and must not be used here).
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8")) & 0xFFFFFFFF


def make_rng(seed: int, stream: str = "default", index: int = 0) -> np.random.Generator:
    """Return an independent PCG64 generator for ``(seed, stream, index)``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    ss = np.random.SeedSequence([int(seed), stream_key(stream), int(index)])
    return np.random.Generator(np.random.PCG64(ss))
