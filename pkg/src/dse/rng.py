"""Counter-based random streams.

Every random draw in the simulator is addressed by
``(master_seed, node_id, purpose, counter)``.  The generator is numpy's
Philox4x64-10: the 128-bit key is derived from ``(master_seed, node_id,
purpose)`` through :class:`numpy.random.SeedSequence`, and the draw index is
written into word 2 of the 256-bit Philox counter.  No state is carried between
draws, so any single draw can be reproduced in isolation.

This mapping is fixed for the 0.x series.
"""
from __future__ import annotations

import zlib
from functools import lru_cache

import numpy as np

# purpose tags
BATCH = "batch"
DATA = "data"
PARTITION = "partition"
INIT = "init"
NOISE = "noise"

_MASK64 = (1 << 64) - 1


def _tag_id(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


@lru_cache(maxsize=4096)
def _key(master_seed: int, node_id: int, purpose: str) -> tuple[int, int]:
    ss = np.random.SeedSequence([master_seed & _MASK64, node_id, _tag_id(purpose)])
    k = ss.generate_state(2, np.uint64)
    return int(k[0]), int(k[1])


def stream(master_seed: int, node_id: int, purpose: str, counter: int = 0) -> np.random.Generator:
    """Return a fresh generator for one addressed draw."""
    if counter < 0:
        raise ValueError("counter must be non-negative")
    bitgen = np.random.Philox(key=_key(master_seed, node_id, purpose), counter=[0, 0, counter, 0])
    return np.random.Generator(bitgen)


class NodeStream:
    """The per-node view of a master seed; immutable, never shared across nodes."""

    __slots__ = ("master_seed", "node_id")

    def __init__(self, master_seed: int, node_id: int):
        self.master_seed = int(master_seed)
        self.node_id = int(node_id)

    def at(self, counter: int, purpose: str = BATCH) -> np.random.Generator:
        return stream(self.master_seed, self.node_id, purpose, counter)

    def __repr__(self) -> str:
        return f"NodeStream(seed={self.master_seed}, node={self.node_id})"
