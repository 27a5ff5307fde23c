"""Ridge-regression head: one-vs-all least squares onto one-hot targets.

With Φ the support features plus a constant column, B solves
(ΦᵀΦ + λI) B = ΦᵀY and the logits are [Zq, 1] B. The system is SPD for
λ > 0 and is solved through a Cholesky factorization.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ..models import HeadKind, HeadType
from .base import BaseHead


def _augment(z: np.ndarray) -> np.ndarray:
    return np.hstack([z, np.ones((z.shape[0], 1))])


class RidgeHead(BaseHead):
    head_type = HeadType.RIDGE

    def forward(self, zs, ys, zq, n_way):
        zs = np.asarray(zs, dtype=np.float64)
        zq = np.asarray(zq, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.int64)
        self._check(zs, ys, zq, n_way)
        phi = _augment(zs)
        phi_q = _augment(zq)
        Y = np.eye(n_way)[ys]
        K = phi.T @ phi + self.kind.lam * np.eye(phi.shape[1])
        factor = cho_factor(K)
        B = cho_solve(factor, phi.T @ Y)
        return phi_q @ B, (factor, phi, phi_q, Y, B)

    def backward(self, cache, dlogits):
        factor, phi, phi_q, Y, B = cache
        G = np.asarray(dlogits, dtype=np.float64)
        d_phi_q = G @ B.T
        S = cho_solve(factor, phi_q.T @ G)
        d_phi = Y @ S.T - phi @ (S @ B.T + B @ S.T)
        return d_phi[:, :-1], d_phi_q[:, :-1]


def ridge_logits(support_features, support_one_hot, query_features, lam: float = 1.0) -> np.ndarray:
    Y = np.asarray(support_one_hot, dtype=np.float64)
    labels = np.argmax(Y, axis=1)
    return RidgeHead(HeadKind.ridge(lam)).logits(support_features, labels, query_features, Y.shape[1])
