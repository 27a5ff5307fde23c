import numpy as np
import pytest

from fixpool.models import EmbeddingKind, EmbeddingSpec, Episode, TaskConfig
from fixpool.taskspace import generate_gaussian_dataset, split_gaussian_dataset
from fixpool.trainer import init_params


@pytest.fixture
def tiny_dataset():
    """4 classes x 3 examples: every episode and every pool can be enumerated."""
    return generate_gaussian_dataset(4, 3, 2, class_spread=1.0, within_noise=0.5, seed=0)


@pytest.fixture
def tiny_cfg():
    return TaskConfig(n_way=2, k_shot=1, q_query=1)


@pytest.fixture
def splits():
    return split_gaussian_dataset(10, 0, 5, per_class=20, dim=8, class_spread=2.0, within_noise=1.0, seed=0)


@pytest.fixture
def linear_spec():
    return EmbeddingSpec(EmbeddingKind.LINEAR, 8, 8)


@pytest.fixture
def mlp_spec():
    # 8 -> 32 -> 8: 552 parameters
    return EmbeddingSpec(EmbeddingKind.MLP, 8, 8, hidden_dims=(32,))


@pytest.fixture
def tiny_params():
    return init_params(EmbeddingSpec(EmbeddingKind.LINEAR, 2, 2), seed=3)


def central_difference(f, w, h=1e-5):
    """Central-difference gradient of a scalar function of a flat vector."""
    w = np.asarray(w, dtype=np.float64)
    grad = np.zeros_like(w)
    for j in range(w.size):
        step = np.zeros_like(w)
        step[j] = h
        grad[j] = (f(w + step) - f(w - step)) / (2 * h)
    return grad


@pytest.fixture
def fd():
    return central_difference


def reorder_classes(episode, order):
    """The same episode with its classes listed in `order` (old positions)."""
    order = np.asarray(order)
    relabel = np.argsort(order)
    return Episode(
        tuple(episode.classes[i] for i in order),
        episode.support_x,
        relabel[episode.support_y],
        episode.query_x,
        relabel[episode.query_y],
        tuple(episode.support_idx[i] for i in order),
        tuple(episode.query_idx[i] for i in order),
    )


@pytest.fixture
def reorder():
    return reorder_classes
