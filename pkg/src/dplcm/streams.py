"""Named derivation of independent random streams from one master seed.

A stream is identified by a stage name plus optional integer keys (table
index, replicate number, ...). The same ``(seed, name, *keys)`` always yields
the same generator, independently of which other streams were requested.
"""

from __future__ import annotations

import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def seed_sequence(seed: int | np.random.SeedSequence, name: str, *keys: int) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        entropy, base = seed.entropy, tuple(seed.spawn_key)
    else:
        entropy, base = int(seed), ()
    return np.random.SeedSequence(entropy, spawn_key=base + (_name_key(name),) + tuple(int(k) for k in keys))


def stream(seed: int | np.random.SeedSequence, name: str, *keys: int) -> np.random.Generator:
    """Generator for the stream ``name`` (and keys) under ``seed``."""
    return np.random.default_rng(seed_sequence(seed, name, *keys))
