"""Named random substreams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(root: int, name: str, *keys: int) -> np.random.Generator:
    """Generator for ``(root, name, *keys)``; independent of which other streams exist."""
    words = [int(root) & 0xFFFFFFFF, int(root) >> 32 & 0xFFFFFFFF, zlib.crc32(name.encode())]
    words += [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(words))


def subseed(root: int, name: str, *keys: int) -> int:
    return int(substream(root, name, *keys).integers(0, 2**63 - 1))
