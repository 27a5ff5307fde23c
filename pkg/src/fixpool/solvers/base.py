"""Abstract last-layer head."""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, Tuple

import numpy as np

from ..errors import DegeneracyError, DimensionMismatchError
from ..models import HeadKind


class BaseHead(ABC):
    """Fits a classifier on support features and scores query features.

    `forward` returns (logits, cache); `backward` maps dLoss/dlogits back to
    gradients w.r.t. the support and query features.
    """

    head_type = None

    def __init__(self, kind: HeadKind):
        self.kind = kind

    @abstractmethod
    def forward(self, zs: np.ndarray, ys: np.ndarray, zq: np.ndarray, n_way: int) -> Tuple[np.ndarray, Any]:
        ...

    @abstractmethod
    def backward(self, cache: Any, dlogits: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ...

    def logits(self, zs, ys, zq, n_way: int) -> np.ndarray:
        return self.forward(zs, ys, zq, n_way)[0]

    @staticmethod
    def _check(zs: np.ndarray, ys: np.ndarray, zq: np.ndarray, n_way: int) -> np.ndarray:
        if zs.ndim != 2 or zq.ndim != 2 or zs.shape[1] != zq.shape[1]:
            raise DimensionMismatchError("support and query features must be 2-D with equal widths")
        if ys.shape != (zs.shape[0],):
            raise DimensionMismatchError("one support label per support feature required")
        counts = np.bincount(ys, minlength=n_way)
        if counts.size > n_way or np.any(counts[:n_way] == 0):
            raise DegeneracyError("every class needs at least one support example")
        return counts
