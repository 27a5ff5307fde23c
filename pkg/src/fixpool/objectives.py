"""Episode losses, their gradients and the ML / FIX-ML estimators."""

from __future__ import annotations

import logging
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from . import seeding, taskspace
from .errors import ConfigError, DimensionMismatchError
from .models import AlgorithmParams, Dataset, Episode, HeadKind, LossEstimate, SupportPool, TaskConfig
from .parallel import map_ordered, mean_and_std, pairwise_sum
from .seeding import Seed
from .solvers import embedding, head_for

logger = logging.getLogger(__name__)

Z_95 = 1.96

# labels = sampler(probs, true_labels, rng); used to draw query labels from the model
LabelSampler = Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy, its gradient w.r.t. the logits, and the softmax probabilities."""
    lse = logsumexp(logits, axis=1)
    rows = np.arange(logits.shape[0])
    loss = float(np.mean(lse - logits[rows, labels]))
    probs = np.exp(logits - lse[:, None])
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return loss, grad / logits.shape[0], probs


def _forward(params: AlgorithmParams, episode: Episode, head_kind: HeadKind):
    if episode.support_x.shape[1] != params.spec.input_dim:
        raise DimensionMismatchError(
            f"episode features have dimension {episode.support_x.shape[1]}, "
            f"embedding expects {params.spec.input_dim}"
        )
    X = np.vstack([episode.support_x, episode.query_x])
    Z, cache = embedding.forward(params.vector, params.spec, X)
    ns = episode.support_x.shape[0]
    head = head_for(head_kind)
    logits, head_cache = head.forward(Z[:ns], episode.support_y, Z[ns:], episode.n_way)
    return logits, (head, head_cache, cache, ns)


def episode_loss(params: AlgorithmParams, episode: Episode, head_kind: HeadKind) -> Tuple[float, float]:
    """(mean query cross-entropy, query accuracy) of one episode."""
    logits, _ = _forward(params, episode, head_kind)
    loss, _, _ = softmax_cross_entropy(logits, episode.query_y)
    acc = float(np.mean(np.argmax(logits, axis=1) == episode.query_y))
    return loss, acc


def episode_loss_and_grad(
    params: AlgorithmParams,
    episode: Episode,
    head_kind: HeadKind,
    label_sampler: Optional[LabelSampler] = None,
    label_seed: Optional[Seed] = None,
) -> Tuple[float, float, np.ndarray]:
    """Loss, accuracy and the exact gradient of the loss w.r.t. w.

    With `label_sampler`, the query labels entering the loss are replaced by
    the sampler's draw (given the model's softmax); accuracy still uses the
    true labels.
    """
    logits, (head, head_cache, cache, ns) = _forward(params, episode, head_kind)
    labels = episode.query_y
    if label_sampler is not None:
        probs = np.exp(logits - logsumexp(logits, axis=1)[:, None])
        labels = np.asarray(label_sampler(probs, episode.query_y, seeding.rng(label_seed or 0)), dtype=np.int64)
    loss, dlogits, _ = softmax_cross_entropy(logits, labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == episode.query_y))
    d_zs, d_zq = head.backward(head_cache, dlogits)
    grad = embedding.backward(params.spec, cache, np.vstack([d_zs, d_zq]))
    return loss, acc, grad


def episode_grad(params: AlgorithmParams, episode: Episode, head_kind: HeadKind) -> np.ndarray:
    return episode_loss_and_grad(params, episode, head_kind)[2]


def sample_from_model(probs: np.ndarray, true_labels: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Draw one label per query from the model's predictive distribution."""
    u = gen.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] > cdf).sum(axis=1), probs.shape[1] - 1)


# ─── Estimators ───


def estimate(
    params: AlgorithmParams,
    episodes: Sequence[Episode],
    head_kind: HeadKind,
    workers: Optional[int] = 1,
) -> LossEstimate:
    """Mean loss/accuracy over the given episodes with a normal 95% half-width."""
    results = map_ordered(lambda ep: episode_loss(params, ep, head_kind), episodes, workers)
    return _summarize([r[0] for r in results], [r[1] for r in results])


def _summarize(losses: List[float], accs: List[float]) -> LossEstimate:
    n = len(losses)
    loss_mean, loss_std = mean_and_std(losses)
    acc_mean, acc_std = mean_and_std(accs)
    return LossEstimate(
        mean=loss_mean,
        half_width_95=Z_95 * loss_std / np.sqrt(n),
        n_episodes=n,
        accuracy_mean=acc_mean,
        accuracy_half_width_95=Z_95 * acc_std / np.sqrt(n),
    )


def episode_seeds(seed: Seed, n_episodes: int) -> List[Tuple[int, ...]]:
    return [seeding.child(seed, i) for i in range(n_episodes)]


def ml_loss_estimate(
    params: AlgorithmParams,
    dataset: Dataset,
    cfg: TaskConfig,
    head_kind: HeadKind,
    n_episodes: int,
    seed: Seed,
    workers: Optional[int] = 1,
    seeds: Optional[Sequence[Seed]] = None,
) -> LossEstimate:
    """Monte Carlo estimate of the ML objective from fresh episodes."""
    seeds = list(seeds) if seeds is not None else episode_seeds(seed, n_episodes)
    if len(seeds) < 2:
        raise ConfigError("an estimate needs at least two episodes")
    episodes = map_ordered(lambda s: taskspace.sample_episode_ml(dataset, cfg, s), seeds, workers)
    return estimate(params, episodes, head_kind, workers)


def fixml_loss_estimate(
    params: AlgorithmParams,
    dataset: Dataset,
    pool: SupportPool,
    cfg: TaskConfig,
    head_kind: HeadKind,
    n_episodes: int,
    seed: Seed,
    workers: Optional[int] = 1,
    seeds: Optional[Sequence[Seed]] = None,
) -> LossEstimate:
    """Monte Carlo estimate of the FIX-ML objective on `pool`."""
    seeds = list(seeds) if seeds is not None else episode_seeds(seed, n_episodes)
    if len(seeds) < 2:
        raise ConfigError("an estimate needs at least two episodes")
    episodes = map_ordered(lambda s: taskspace.sample_episode_from_pool(dataset, pool, cfg, s), seeds, workers)
    return estimate(params, episodes, head_kind, workers)


def batch_loss_and_grad(
    params: AlgorithmParams,
    episodes: Sequence[Episode],
    head_kind: HeadKind,
    workers: Optional[int] = 1,
) -> Tuple[float, np.ndarray]:
    """Mean loss and mean gradient of a task batch, reduced in fixed order."""
    results = map_ordered(lambda ep: episode_loss_and_grad(params, ep, head_kind), episodes, workers)
    loss = pairwise_sum([r[0] for r in results]) / len(results)
    grad = pairwise_sum([r[2] for r in results]) / len(results)
    return float(loss), grad


# ─── Exact objectives on enumerable instances ───


def enumerated_objective(
    params: AlgorithmParams,
    weighted_episodes: Iterable[Tuple[float, Episode]],
    head_kind: HeadKind,
) -> Tuple[float, np.ndarray]:
    """Exact expected loss and gradient over (probability, episode) pairs."""
    losses, grads = [], []
    for prob, episode in weighted_episodes:
        loss, _, grad = episode_loss_and_grad(params, episode, head_kind)
        losses.append(prob * loss)
        grads.append(prob * grad)
    return float(pairwise_sum(losses)), pairwise_sum(grads)


def enumerated_ml_objective(params, dataset, cfg, head_kind) -> Tuple[float, np.ndarray]:
    return enumerated_objective(params, taskspace.enumerate_episodes_ml(dataset, cfg), head_kind)


def enumerated_fixml_objective(params, dataset, pool, cfg, head_kind) -> Tuple[float, np.ndarray]:
    return enumerated_objective(params, taskspace.enumerate_episodes_from_pool(dataset, pool, cfg), head_kind)


def pool_averaged_objective(params, dataset, cfg, head_kind) -> Tuple[float, np.ndarray]:
    """Average of the exact FIX-ML objective over every possible pool."""
    pools = list(taskspace.enumerate_support_pools(dataset, cfg.shots_in_pool))
    parts = [enumerated_fixml_objective(params, dataset, pool, cfg, head_kind) for pool in pools]
    loss = pairwise_sum([p[0] for p in parts]) / len(parts)
    grad = pairwise_sum([p[1] for p in parts]) / len(parts)
    return float(loss), grad
