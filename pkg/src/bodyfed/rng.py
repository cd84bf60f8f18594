"""Named, order-independent random substreams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for ``(name, *indices)`` under ``seed``.

    The stream depends only on its key, so drawing for client 3 before
    client 1 (or in parallel) never changes either stream.
    """
    key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
