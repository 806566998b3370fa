"""Deterministic random substreams derived from a single master seed.

Every simulation in the package draws from a generator obtained via
``substream(seed, tag, index)``: the master seed, a purpose tag and a block
index fully determine the stream.  Replications are partitioned into fixed
blocks of ``BLOCK`` replications, one substream per block, so results are
bit-identical no matter how the blocks are distributed over workers.
"""

from __future__ import annotations

import zlib

import numpy as np

BLOCK = 1024


def substream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Generator for block `index` of the stream named `tag` under `seed`."""
    key = zlib.crc32(tag.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key, int(index)))
    return np.random.default_rng(ss)


def blocks(reps: int):
    """Yield (block_index, block_size) pairs covering `reps` replications."""
    if reps <= 0:
        return
    full, rem = divmod(reps, BLOCK)
    for b in range(full):
        yield b, BLOCK
    if rem:
        yield full, rem
