"""Named random substreams derived from one run seed."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, stream: str, *index: int) -> np.random.SeedSequence:
    """SeedSequence for ``(seed, stream, *index)``; stable across processes."""
    return np.random.SeedSequence([int(seed), zlib.crc32(stream.encode()), *map(int, index)])


def rng(seed: int, stream: str, *index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, stream, *index))
