"""Deterministic random-number plumbing.

Every stochastic component draws from a named substream derived from a single
64-bit scenario seed.  Identical (seed, substream path) pairs always yield the
identical draw sequence, which is what makes replications replayable and
paired-seed mechanism comparisons meaningful.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _path_entropy(path: tuple[str | int, ...]) -> int:
    digest = hashlib.blake2b("/".join(str(p) for p in path).encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


class SeededRng:
    """A root seed plus named, mutually independent substreams.

    Substreams are backed by PCG64 generators seeded from
    ``SeedSequence((seed, blake2(path)))``; distinct paths give independent
    streams, and a substream is created fresh on every call so two consumers
    never share generator state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def substream(self, *path: str | int) -> np.random.Generator:
        seq = np.random.SeedSequence((self.seed, _path_entropy(path)))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, *path: str | int) -> "SeededRng":
        return SeededRng(self.substream(*path).integers(0, 2**63 - 1))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed})"
