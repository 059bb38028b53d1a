"""Deterministic seed derivation.

All randomness in the package flows from a single 64-bit root seed through
counter-based Philox streams.  Child streams are derived from a stable
path of labels, so parallel evaluation order cannot change results.
"""

from __future__ import annotations

import zlib

import numpy as np


def _path_ints(path) -> tuple[int, ...]:
    out = []
    for part in path:
        if isinstance(part, str):
            out.append(zlib.crc32(part.encode("utf-8")))
        else:
            out.append(int(part) & 0xFFFFFFFFFFFFFFFF)
    return tuple(out)


def child_rng(root_seed: int, *path) -> np.random.Generator:
    """Generator for the stream identified by (root_seed, *path)."""
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=_path_ints(path))
    return np.random.Generator(np.random.Philox(seq))
