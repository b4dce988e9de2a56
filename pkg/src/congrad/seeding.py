"""Seed derivation tree.

Every random draw in the package comes from an integer seed derived from the
experiment's master seed by a path of labels, e.g.
``derive_seed(master, "round", 3, "judge")``.  String labels are hashed with
CRC-32 so the derivation is stable across processes and Python versions.
"""
from __future__ import annotations

import zlib

import numpy as np


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"seed path labels must be non-negative, got {label}")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def derive_seed(master: int, *path) -> int:
    """Return a 63-bit integer seed for ``path`` below ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(_label_to_int(p) for p in path))
    words = ss.generate_state(2, dtype=np.uint32)
    return int((int(words[0]) << 31) ^ int(words[1]))


def derive_rng(master: int, *path) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *path))
