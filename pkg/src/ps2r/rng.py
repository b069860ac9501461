"""Named random substreams derived from one global seed."""
from __future__ import annotations

import zlib
from collections import Counter

import numpy as np

STREAMS = ("corpus", "simulate", "init", "augment", "shuffle", "target", "eval")


def _tag(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream_seed(seed: int, name: str, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(_tag(name),) + tuple(int(k) for k in keys))


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Generator for the stream ``name`` of ``seed``, optionally keyed further."""
    return np.random.default_rng(substream_seed(seed, name, *keys))


def substream_int(seed: int, name: str, *keys: int) -> int:
    """A 63-bit integer seed derived from a named substream."""
    return int(substream_seed(seed, name, *keys).generate_state(1, np.uint64)[0] >> np.uint64(1))


class CountingGenerator:
    """Wraps a Generator and tallies how many variates each method produced.

    The tallies go to a shared ``Counter`` so a whole training run can be audited.
    """

    def __init__(self, gen: np.random.Generator, counter: Counter | None = None):
        self._gen = gen
        self.counts = counter if counter is not None else Counter()

    def _tally(self, name, out):
        self.counts[name] += int(np.size(out))
        return out

    def uniform(self, *args, **kwargs):
        return self._tally("uniform", self._gen.uniform(*args, **kwargs))

    def normal(self, *args, **kwargs):
        return self._tally("normal", self._gen.normal(*args, **kwargs))

    def random(self, *args, **kwargs):
        return self._tally("random", self._gen.random(*args, **kwargs))

    def choice(self, *args, **kwargs):
        return self._tally("choice", self._gen.choice(*args, **kwargs))

    def integers(self, *args, **kwargs):
        return self._tally("integers", self._gen.integers(*args, **kwargs))

    def permutation(self, *args, **kwargs):
        return self._tally("permutation", self._gen.permutation(*args, **kwargs))
