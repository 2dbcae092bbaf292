"""Deterministic RNG derivation: one root seed, named substreams.

Every stochastic component (mechanism draws, each player seat, termination,
training batches) pulls from its own named substream so that runs are
reproducible and episodes can be paired across conditions.
"""

from __future__ import annotations

import zlib

import numpy as np


def _path_key(path: tuple) -> tuple[int, ...]:
    return tuple(zlib.crc32(str(part).encode("utf8")) for part in path)


def substream(root_seed: int, *path) -> np.random.Generator:
    """Independent Generator derived from ``root_seed`` and a path of names."""
    seq = np.random.SeedSequence(root_seed, spawn_key=_path_key(path))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(root_seed: int, *path) -> int:
    """Stable 63-bit child seed for handing to a sub-component."""
    seq = np.random.SeedSequence(root_seed, spawn_key=_path_key(path))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)
