"""Seed streams.

A seed is an int or a tuple of ints. ``rng(seed, *stream)`` hashes the root
entropy with the stream index through ``numpy.random.SeedSequence`` (the
spawn key is mixed into the pool), so any stream can be rebuilt independently
of how many others were drawn before it or on which worker.
"""

from __future__ import annotations

from typing import Tuple, Union

import numpy as np

Seed = Union[int, Tuple[int, ...]]

# Named stream tags
TRAIN = 1
EVAL = 2
POOLS = 3
LABELS = 4
HELDOUT = 5
RUNS = 6
INIT = 7
TASKS = 8


def _split(seed: Seed) -> Tuple[int, Tuple[int, ...]]:
    if isinstance(seed, (int, np.integer)):
        return int(seed), ()
    seed = tuple(int(s) for s in seed)
    if not seed:
        raise ValueError("empty seed tuple")
    return seed[0], seed[1:]


def child(seed: Seed, *stream: int) -> Tuple[int, ...]:
    """Seed of a sub-stream, usable wherever a seed is accepted."""
    root, key = _split(seed)
    return (root,) + key + tuple(int(s) for s in stream)


def rng(seed: Seed, *stream: int) -> np.random.Generator:
    root, key = _split(seed)
    ss = np.random.SeedSequence(entropy=root, spawn_key=key + tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))
