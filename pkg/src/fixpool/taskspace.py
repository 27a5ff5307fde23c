"""Datasets, support pools, the two episode samplers and task generators.

The ML sampler draws (C, S, Q) directly. The pool sampler first fixes a
support pool S_p (k examples per class) and carves the support of an
episode out of it by class selection. Drawing S_p uniformly and then
sampling from the pool gives the same distribution over (S, Q) as the ML
sampler; freezing S_p at a single realization gives the FIX-ML objective.
"""

from __future__ import annotations

import itertools
import logging
import math
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np
from scipy.special import comb, gammaln

from . import seeding
from .errors import BudgetError, ConfigError, ShotCountError
from .models import (
    Dataset,
    Episode,
    RegressionMetaDistribution,
    RegressionTask,
    Split,
    SupportPool,
    TaskConfig,
    TaskPopulation,
)
from .seeding import Seed

logger = logging.getLogger(__name__)

_LOG10_E = 1.0 / math.log(10.0)


# ─── Synthetic classification data ───


def generate_gaussian_dataset(
    n_classes: int,
    per_class: int,
    dim: int,
    class_spread: float,
    within_noise: float,
    seed: Seed,
    split: Split = Split.TRAIN,
    class_ids: Sequence[int] = (),
) -> Dataset:
    """Gaussian class clusters: mean_c ~ N(0, spread² I), x ~ N(mean_c, noise² I)."""
    if min(n_classes, per_class, dim) < 1:
        raise ConfigError("n_classes, per_class and dim must be positive")
    if class_spread <= 0 or within_noise < 0:
        raise ConfigError("class_spread must be positive and within_noise nonnegative")
    gen = seeding.rng(seed)
    means = class_spread * gen.standard_normal((n_classes, dim))
    noise = gen.standard_normal((n_classes, per_class, dim))
    return Dataset(means[:, None, :] + within_noise * noise, split, tuple(class_ids))


def split_gaussian_dataset(
    n_train: int,
    n_val: int,
    n_test: int,
    per_class: int,
    dim: int,
    class_spread: float,
    within_noise: float,
    seed: Seed,
) -> Dict[Split, Dataset]:
    """One Gaussian class universe cut into disjoint train/val/test class sets."""
    total = n_train + n_val + n_test
    full = generate_gaussian_dataset(total, per_class, dim, class_spread, within_noise, seed)
    splits: Dict[Split, Dataset] = {}
    start = 0
    for split, count in ((Split.TRAIN, n_train), (Split.VAL, n_val), (Split.TEST, n_test)):
        if count > 0:
            ids = tuple(range(start, start + count))
            splits[split] = Dataset(full.features[start:start + count], split, ids)
        start += count
    return splits


# ─── Support pools ───


def sample_support_pool(dataset: Dataset, k: int, seed: Seed) -> SupportPool:
    """Uniform k-subset of every class, independent across classes."""
    if k < 1 or k > dataset.per_class:
        raise ShotCountError(f"cannot take k={k} shots from classes of {dataset.per_class} examples")
    gen = seeding.rng(seed)
    rows = tuple(
        tuple(sorted(int(i) for i in gen.choice(dataset.per_class, size=k, replace=False)))
        for _ in range(dataset.n_classes)
    )
    return SupportPool(k, rows)


def enumerate_support_pools(dataset: Dataset, k: int) -> Iterator[SupportPool]:
    """Every structured pool of the dataset, each equally likely under sample_support_pool."""
    if k < 1 or k > dataset.per_class:
        raise ShotCountError(f"cannot take k={k} shots from classes of {dataset.per_class} examples")
    per_class = list(itertools.combinations(range(dataset.per_class), k))
    for rows in itertools.product(per_class, repeat=dataset.n_classes):
        yield SupportPool(k, rows)


def sample_extra_pools(dataset: Dataset, base: SupportPool, n_pools: int, seed: Seed, max_tries: int = 100) -> List[SupportPool]:
    """`n_pools` pools distinct from `base` and from each other.

    Pool i is drawn from stream (i, attempt); a collision moves on to the next
    attempt.
    """
    if n_pools < 1:
        raise ConfigError("need at least one extra pool")
    seen = {base.indices}
    pools = []
    for i in range(n_pools):
        for attempt in range(max_tries):
            pool = sample_support_pool(dataset, base.shots, seeding.child(seed, i, attempt))
            if pool.indices not in seen:
                break
            logger.debug("extra pool %d collided on attempt %d, resampling", i, attempt)
        else:
            raise BudgetError(f"could not find {n_pools} pools distinct from the base pool")
        seen.add(pool.indices)
        pools.append(pool)
    return pools


def count_support_pools_log10(n_classes: int, per_class: int, k: int) -> float:
    """log10 |P| = n_classes · log10 C(per_class, k), in log space."""
    return n_classes * _log10_binom(per_class, k)


def count_reduction_factor_log10(per_class: int, k: int, n_way: int) -> float:
    """log10 of the number of supports a single fixed pool removes per class set."""
    return n_way * _log10_binom(per_class, k)


def _log10_binom(n: int, k: int) -> float:
    if k < 0 or k > n:
        raise ShotCountError(f"k={k} must lie in 0..{n}")
    value = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return float(value * _LOG10_E)


# ─── Episodes ───


def build_episode(
    dataset: Dataset,
    classes: Sequence[int],
    support_idx: Sequence[Sequence[int]],
    query_idx: Sequence[Sequence[int]],
) -> Episode:
    """Assemble an episode; local label j stands for classes[j]."""
    classes = tuple(int(c) for c in classes)
    support_idx = tuple(tuple(int(i) for i in row) for row in support_idx)
    query_idx = tuple(tuple(int(i) for i in row) for row in query_idx)
    feats = dataset.features
    support_x = np.concatenate([feats[c, list(row)] for c, row in zip(classes, support_idx)])
    query_x = np.concatenate([feats[c, list(row)] for c, row in zip(classes, query_idx)])
    support_y = np.concatenate([np.full(len(row), j, dtype=np.int64) for j, row in enumerate(support_idx)])
    query_y = np.concatenate([np.full(len(row), j, dtype=np.int64) for j, row in enumerate(query_idx)])
    return Episode(classes, support_x, support_y, query_x, query_y, support_idx, query_idx)


def _sample_classes(gen: np.random.Generator, n_classes: int, n_way: int) -> Tuple[int, ...]:
    return tuple(sorted(int(c) for c in gen.choice(n_classes, size=n_way, replace=False)))


def sample_episode_ml(dataset: Dataset, cfg: TaskConfig, seed: Seed) -> Episode:
    """Sample C, then disjoint S and Q within each class of C."""
    cfg.check_against(dataset)
    gen = seeding.rng(seed)
    classes = _sample_classes(gen, dataset.n_classes, cfg.n_way)
    support, query = [], []
    for _ in classes:
        perm = gen.permutation(dataset.per_class)
        support.append(sorted(perm[:cfg.k_shot]))
        query.append(sorted(perm[cfg.k_shot:cfg.k_shot + cfg.q_query]))
    return build_episode(dataset, classes, support, query)


def sample_episode_from_pool(dataset: Dataset, pool: SupportPool, cfg: TaskConfig, seed: Seed) -> Episode:
    """Episode on a fixed pool: the support is S_p restricted to C.

    Queries come from the remaining examples of each class in C (pool
    examples are never queried). With a pool larger than k_shot the support
    is a uniform k_shot-subset of the class's pool entries.
    """
    check_pool(dataset, pool, cfg)
    gen = seeding.rng(seed)
    classes = _sample_classes(gen, dataset.n_classes, cfg.n_way)
    support, query = [], []
    for c in classes:
        members = tuple(sorted(pool.indices[c]))
        if pool.shots == cfg.k_shot:
            support.append(members)
        else:
            support.append(sorted(gen.choice(members, size=cfg.k_shot, replace=False)))
        rest = np.setdiff1d(np.arange(dataset.per_class), members)
        query.append(sorted(gen.choice(rest, size=cfg.q_query, replace=False)))
    return build_episode(dataset, classes, support, query)


def check_pool(dataset: Dataset, pool: SupportPool, cfg: TaskConfig) -> None:
    if cfg.n_way > dataset.n_classes:
        raise BudgetError(f"n_way={cfg.n_way} exceeds the {dataset.n_classes} available classes")
    if pool.shots != cfg.shots_in_pool:
        raise ShotCountError(f"pool has {pool.shots} shots per class, task expects {cfg.shots_in_pool}")
    pool.check_against(dataset)
    if pool.shots + cfg.q_query > dataset.per_class:
        raise BudgetError(
            f"{cfg.q_query} queries do not fit in the {dataset.per_class - pool.shots} non-pool examples per class"
        )


# ─── Exact enumeration ───


def enumerate_episodes_ml(dataset: Dataset, cfg: TaskConfig) -> Iterator[Tuple[float, Episode]]:
    """Every (C, S, Q) the ML sampler can produce, with its exact probability."""
    cfg.check_against(dataset)
    n_pairs = comb(dataset.per_class, cfg.k_shot, exact=True) * comb(
        dataset.per_class - cfg.k_shot, cfg.q_query, exact=True
    )
    class_sets = list(itertools.combinations(range(dataset.n_classes), cfg.n_way))
    prob = 1.0 / (len(class_sets) * n_pairs ** cfg.n_way)
    everything = set(range(dataset.per_class))
    pairs = [
        (s, q)
        for s in itertools.combinations(range(dataset.per_class), cfg.k_shot)
        for q in itertools.combinations(sorted(everything - set(s)), cfg.q_query)
    ]
    for classes in class_sets:
        for choice in itertools.product(pairs, repeat=cfg.n_way):
            yield prob, build_episode(dataset, classes, [p[0] for p in choice], [p[1] for p in choice])


def enumerate_episodes_from_pool(
    dataset: Dataset, pool: SupportPool, cfg: TaskConfig
) -> Iterator[Tuple[float, Episode]]:
    """Every episode the pool sampler can produce from `pool`, with its exact probability."""
    check_pool(dataset, pool, cfg)
    class_sets = list(itertools.combinations(range(dataset.n_classes), cfg.n_way))
    n_support = comb(pool.shots, cfg.k_shot, exact=True)
    n_query = comb(dataset.per_class - pool.shots, cfg.q_query, exact=True)
    prob = 1.0 / (len(class_sets) * (n_support * n_query) ** cfg.n_way)
    for classes in class_sets:
        options = []
        for c in classes:
            members = pool.indices[c]
            rest = sorted(set(range(dataset.per_class)) - set(members))
            options.append([
                (s, q)
                for s in itertools.combinations(sorted(members), cfg.k_shot)
                for q in itertools.combinations(rest, cfg.q_query)
            ])
        for choice in itertools.product(*options):
            yield prob, build_episode(dataset, classes, [p[0] for p in choice], [p[1] for p in choice])


def episode_distribution(pairs) -> Dict[Tuple, float]:
    """Collapse (probability, episode) pairs into a distribution over episode keys."""
    dist: Dict[Tuple, float] = {}
    for prob, episode in pairs:
        dist[episode.key] = dist.get(episode.key, 0.0) + prob
    return dist


def total_variation(p: Dict[Tuple, float], q: Dict[Tuple, float]) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


# ─── Meta linear regression ───


def sample_regression_task(meta: RegressionMetaDistribution, seed: Seed) -> RegressionTask:
    gen = seeding.rng(seed)
    theta = meta.theta_mean + meta.theta_scale * gen.standard_normal(meta.dim)
    if meta.couple_spectrum_to_theta:
        spectrum = np.maximum(np.abs(theta), meta.spectrum_floor)
    else:
        spectrum = gen.uniform(meta.spectrum_low, meta.spectrum_high, size=meta.dim)
    sigma = float(gen.uniform(meta.noise_low, meta.noise_high)) if meta.noise_high > 0 else 0.0
    basis = None if np.array_equal(meta.basis, np.eye(meta.dim)) else meta.basis
    return RegressionTask(theta, spectrum, sigma, basis)


def population_from_meta(meta: RegressionMetaDistribution, n_tasks: int, seed: Seed) -> TaskPopulation:
    """Monte Carlo stand-in for p(τ): n_tasks i.i.d. draws with equal weights."""
    if n_tasks < 1:
        raise ConfigError("a task population needs at least one task")
    return TaskPopulation.uniform(
        sample_regression_task(meta, seeding.child(seed, seeding.TASKS, i)) for i in range(n_tasks)
    )


def correlate_rows(task: RegressionTask, white: np.ndarray) -> np.ndarray:
    """Map standard-normal rows to rows distributed N(0, Σ_τ)."""
    scaled = white * np.sqrt(task.spectrum)
    return scaled if task.basis is None else scaled @ task.basis.T


def sample_regression_data(task: RegressionTask, n: int, seed: Seed) -> Tuple[np.ndarray, np.ndarray]:
    """n rows x ~ N(0, Σ_τ) and responses y = x·θ_τ + ε, ε ~ N(0, σ_τ²)."""
    if n < 1:
        raise ConfigError("need at least one regression sample")
    gen = seeding.rng(seed)
    X = correlate_rows(task, gen.standard_normal((n, task.dim)))
    y = X @ task.theta
    if task.sigma > 0:
        y = y + task.sigma * gen.standard_normal(n)
    return X, y


def sample_population_task(population: TaskPopulation, gen: np.random.Generator) -> RegressionTask:
    return population.tasks[int(gen.choice(len(population.tasks), p=population.weights))]


def shuffled_classes(n_classes: int, seed: Seed) -> List[int]:
    return [int(c) for c in seeding.rng(seed).permutation(n_classes)]
