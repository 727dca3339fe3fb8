"""Seeded random streams.

Every consumer of randomness asks for its own generator, keyed by the master
seed plus a purpose string and integer ids (device index, round, epoch).  The
key goes into ``SeedSequence.spawn_key`` so streams are independent of the
order in which they are requested; serial and threaded runs therefore draw
identical numbers.
"""
from __future__ import annotations

import zlib

import numpy as np


def _token(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream ids must be non-negative, got {part}")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream_key(*parts) -> tuple[int, ...]:
    return tuple(_token(p) for p in parts)


def stream(seed: int, *parts) -> np.random.Generator:
    """Generator for ``(seed, *parts)``, e.g. ``stream(0, "shuffle", "local", 3, 7)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=stream_key(*parts))
    return np.random.Generator(np.random.PCG64(ss))
