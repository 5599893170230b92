"""Named random sub-streams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data", "init", "shuffle", "dropout")


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name`` under ``seed``.

    The same (seed, name, extra) always yields the same stream, and changing
    one stream's consumption never shifts another.
    """
    key = (zlib.crc32(name.encode()),) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
