"""Deterministic randomness for the whole repository.

Every stochastic component draws from a 64-bit-seeded counter-based Philox
generator. Counter addressing makes streams chunkable: drawing words
[start, start+n) gives the same values whether the range is produced in one
call or split across calls, which is what makes sharded stress profiling
bit-identical to a single pass.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng", "raw_words", "derive_seed"]


def make_rng(seed: int) -> np.random.Generator:
    """Repo-standard generator: Philox keyed by a single 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))


def raw_words(seed: int, start: int, count: int) -> np.ndarray:
    """Return uint64 words [start, start+count) of the seed's Philox stream."""
    gen = make_rng(seed)
    if start:
        gen.bit_generator.advance(start)
    if count == 0:
        return np.empty(0, dtype=np.uint64)
    return gen.bit_generator.random_raw(count).astype(np.uint64)


def derive_seed(seed: int, *path: int) -> int:
    """Stable 64-bit child seed for (seed, path...) via SeedSequence."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
