"""Ordered fan-out over workers and bit-stable reductions."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

import numpy as np

from .errors import ConfigError

T = TypeVar("T")
R = TypeVar("R")


WORKERS_ENV = "FIXPOOL_WORKERS"


def env_workers() -> Optional[int]:
    """Worker count from FIXPOOL_WORKERS, or None when it is unset."""
    env = os.environ.get(WORKERS_ENV, "").strip()
    if not env:
        return None
    try:
        return max(1, int(env))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None


def default_workers() -> int:
    env = env_workers()
    return env if env is not None else os.cpu_count() or 1


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = 1) -> List[R]:
    """Apply fn to every item; results come back in input order."""
    items = list(items)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def pairwise_sum(values: Sequence):
    """Sum in a fixed binary tree over the input order.

    The tree depends only on len(values), so the result is identical no matter
    how (or in what order) the values were produced.
    """
    n = len(values)
    if n == 0:
        raise ValueError("pairwise_sum of an empty sequence")
    if n == 1:
        return values[0] * 1.0
    mid = n // 2
    return pairwise_sum(values[:mid]) + pairwise_sum(values[mid:])


def pairwise_mean(values: Sequence):
    return pairwise_sum(values) / len(values)


def mean_and_std(values: Sequence[float]):
    """Mean and unbiased sample std of scalars using pairwise reductions."""
    arr = np.asarray(values, dtype=np.float64)
    mean = pairwise_mean(list(arr))
    if len(arr) < 2:
        return float(mean), 0.0
    var = pairwise_sum(list((arr - mean) ** 2)) / (len(arr) - 1)
    return float(mean), float(np.sqrt(var))
