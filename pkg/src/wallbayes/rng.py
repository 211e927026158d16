"""Named, seed-derived random streams.

Every random draw in a run is taken from a generator identified by a
path such as ``prior/member/17`` or ``renka/window/3/iter/2/member/5``.
The generator for a path depends only on the run seed and the path, so
results do not depend on the order in which members are processed or on
how work is split between workers.
"""
from __future__ import annotations

import hashlib
from typing import List, Sequence, Union

import numpy as np


def _path_words(path: str) -> List[int]:
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


class Streams:
    """Factory of named generators rooted at ``seed`` and ``prefix``."""

    def __init__(self, seed: int, prefix: str = ""):
        if int(seed) < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.prefix = prefix.strip("/")

    def _full(self, name: str) -> str:
        name = str(name).strip("/")
        return f"{self.prefix}/{name}" if self.prefix else name

    def child(self, name) -> "Streams":
        return Streams(self.seed, self._full(name))

    def generator(self, name="") -> np.random.Generator:
        path = self._full(name) if name != "" else self.prefix
        seq = np.random.SeedSequence([self.seed, *_path_words(path)])
        return np.random.default_rng(seq)

    def __repr__(self):
        return f"Streams(seed={self.seed}, prefix={self.prefix!r})"


RandomSource = Union[Streams, np.random.Generator, int]


def as_streams(rng: RandomSource) -> Union[Streams, np.random.Generator]:
    if isinstance(rng, (Streams, np.random.Generator)):
        return rng
    return Streams(int(rng))


def member_generators(rng: RandomSource, n: int, name: str = "member") -> Sequence[np.random.Generator]:
    """One generator per ensemble member.

    A :class:`Streams` yields the named streams ``<name>/0 .. <name>/n-1``;
    a plain ``Generator`` is split with ``Generator.spawn``.
    """
    rng = as_streams(rng)
    if isinstance(rng, Streams):
        sub = rng.child(name)
        return [sub.generator(str(j)) for j in range(n)]
    return rng.spawn(n)
