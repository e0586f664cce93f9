"""Named, hierarchical seed streams so results never depend on scheduling."""

from __future__ import annotations

import zlib

import numpy as np


def _as_entropy(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFFFFFFFFFF


def derive_seed(base: int, *path) -> int:
    """Stable child seed for a named purpose, e.g. derive_seed(s, "fold", 3)."""
    entropy = [_as_entropy(base)] + [_as_entropy(p) for p in path]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def stream(base: int, *path) -> np.random.Generator:
    """Generator for a named purpose, independent of all sibling streams."""
    entropy = [_as_entropy(base)] + [_as_entropy(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
