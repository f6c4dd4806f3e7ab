"""Deterministic, key-addressable random streams.

Every stochastic choice in the engine draws from a stream addressed by an
explicit key such as ``(run_seed, sample_index, pass_index)``.  Streams for
distinct keys are statistically independent, and the stream for a given key
never depends on how many other streams exist or in which order they are
created, so worker count and evaluation order cannot change results.
"""

from __future__ import annotations

import operator

import numpy as np

_MASK64 = (1 << 64) - 1


def _as_int(v) -> int:
    # operator.index rejects floats outright — silent truncation could
    # alias two distinct keys onto one stream
    return operator.index(v) & _MASK64


def _as_entropy(value) -> list[int]:
    if isinstance(value, (tuple, list)):
        return [_as_int(v) for v in value]
    return [_as_int(value)]


def substream(entropy, *key: int) -> np.random.Generator:
    """Return an independent Generator for (entropy, *key).

    Parameters
    ----------
    entropy : int or sequence of int
        Root seed material, e.g. a run seed or (provider_seed, run_seed).
    *key : int
        Stream address, e.g. sample index and pass index.
    """
    ss = np.random.SeedSequence(
        entropy=_as_entropy(entropy),
        spawn_key=tuple(_as_int(k) for k in key),
    )
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(entropy, *key: int) -> int:
    """Collapse (entropy, *key) into a single 64-bit integer seed."""
    ss = np.random.SeedSequence(
        entropy=_as_entropy(entropy),
        spawn_key=tuple(_as_int(k) for k in key),
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])
