"""Prototypical head: logits are negative squared distances to class means."""

from __future__ import annotations

import numpy as np

from ..models import HeadType
from .base import BaseHead


class ProtoNetHead(BaseHead):
    head_type = HeadType.PROTONET

    def forward(self, zs, ys, zq, n_way):
        zs = np.asarray(zs, dtype=np.float64)
        zq = np.asarray(zq, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.int64)
        counts = self._check(zs, ys, zq, n_way)
        # M averages the support rows of each class: prototypes = M @ zs
        M = np.zeros((n_way, zs.shape[0]))
        M[ys, np.arange(zs.shape[0])] = 1.0
        M /= counts[:, None]
        protos = M @ zs
        diff = zq[:, None, :] - protos[None, :, :]
        logits = -np.einsum("qcd,qcd->qc", diff, diff)
        return logits, (M, zq, protos)

    def backward(self, cache, dlogits):
        M, zq, protos = cache
        G = np.asarray(dlogits, dtype=np.float64)
        row = G.sum(axis=1)
        col = G.sum(axis=0)
        d_zq = -2.0 * (zq * row[:, None] - G @ protos)
        d_protos = 2.0 * (G.T @ zq - protos * col[:, None])
        return M.T @ d_protos, d_zq


def protonet_logits(support_features, support_labels, query_features, n_way=None) -> np.ndarray:
    labels = np.asarray(support_labels, dtype=np.int64)
    n_way = int(labels.max()) + 1 if n_way is None else n_way
    return ProtoNetHead(None).logits(support_features, labels, query_features, n_way)
