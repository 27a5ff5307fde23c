"""Embedding networks over a flat parameter vector, with analytic backprop.

Layout of w: for every affine layer in order, the weight matrix
(fan_out x fan_in, row-major) followed by its bias (fan_out). Hidden layers
apply tanh; the output layer is linear.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from ..errors import DimensionMismatchError
from ..models import EmbeddingKind, EmbeddingSpec

Layer = Tuple[np.ndarray, np.ndarray]


def unpack(w: np.ndarray, spec: EmbeddingSpec) -> List[Layer]:
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.size != spec.n_params:
        raise DimensionMismatchError(f"parameter vector has length {w.size}, spec implies {spec.n_params}")
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes:
        W = w[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        b = w[offset:offset + fan_out]
        offset += fan_out
        layers.append((W, b))
    return layers


def pack(layers: List[Layer]) -> np.ndarray:
    parts = []
    for W, b in layers:
        parts.append(np.asarray(W, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def forward(w: np.ndarray, spec: EmbeddingSpec, X: np.ndarray):
    """Embed a batch of rows. Returns (Z, cache) where cache feeds `backward`."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != spec.input_dim:
        raise DimensionMismatchError(f"inputs have {X.shape[1]} features, embedding expects {spec.input_dim}")
    layers = unpack(w, spec)
    if spec.kind is EmbeddingKind.IDENTITY:
        return X, (layers, [X])
    activations = [X]
    h = X
    for i, (W, b) in enumerate(layers):
        a = h @ W.T + b
        h = np.tanh(a) if i < len(layers) - 1 else a
        activations.append(h)
    return h, (layers, activations)


def backward(spec: EmbeddingSpec, cache, dZ: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. w given dLoss/dZ for the cached batch."""
    layers, activations = cache
    if spec.kind is EmbeddingKind.IDENTITY:
        return np.zeros(0)
    grads: List[Layer] = [None] * len(layers)
    G = np.asarray(dZ, dtype=np.float64)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h_prev = activations[i]
        grads[i] = (G.T @ h_prev, G.sum(axis=0))
        if i > 0:
            G = (G @ W) * (1.0 - h_prev ** 2)
    return pack(grads)


def embed(w: np.ndarray, spec: EmbeddingSpec, x: np.ndarray) -> np.ndarray:
    """Embed a single feature vector (or a batch of rows)."""
    x = np.asarray(x, dtype=np.float64)
    Z, _ = forward(w, spec, x)
    return Z[0] if x.ndim == 1 else Z
