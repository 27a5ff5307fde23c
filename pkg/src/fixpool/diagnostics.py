"""Generalization diagnostics for trained meta-learners.

Every evaluation here is a Monte Carlo estimate on explicit episode seeds, so
two diagnostics (or a diagnostic and a standalone estimator call) given the
same seed see the same episodes.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import objectives, seeding, taskspace, trainer
from .errors import ConfigError, DegeneracyError, DimensionMismatchError
from .models import (
    AlgorithmParams,
    Dataset,
    Episode,
    GapDecomposition,
    HeadKind,
    InterpolationCurve,
    LossEstimate,
    Objective,
    PoolTrajectoryRow,
    RunComparisonRow,
    StabilityReport,
    SupportPool,
    TaskConfig,
    TicReport,
    TrainConfig,
)
from .parallel import map_ordered, mean_and_std, pairwise_mean
from .seeding import Seed

logger = logging.getLogger(__name__)

MIN_TIC_EPISODES = 100
MIN_TRACE = 1e-12


@dataclass(frozen=True)
class Evaluator:
    """ML-objective estimator bound to a dataset and a fixed seed set."""

    dataset: Dataset
    cfg: TaskConfig
    solver: HeadKind
    n_episodes: int
    seed: Seed
    workers: Optional[int] = 1

    def __call__(self, params: AlgorithmParams) -> LossEstimate:
        return objectives.ml_loss_estimate(
            params, self.dataset, self.cfg, self.solver, self.n_episodes, self.seed, self.workers
        )


# ─── Interpolation ───


def default_alphas(n_points: int = 25, low: float = -0.2, high: float = 1.2) -> Tuple[float, ...]:
    return tuple(float(a) for a in np.linspace(low, high, n_points))


def lerp(w_fml: AlgorithmParams, w_ml: AlgorithmParams, alpha: float) -> AlgorithmParams:
    return w_fml.replace((1.0 - alpha) * w_fml.vector + alpha * w_ml.vector)


def interpolate_losses(
    w_fml: AlgorithmParams,
    w_ml: AlgorithmParams,
    alphas: Optional[Sequence[float]],
    train_eval: Evaluator,
    test_eval: Evaluator,
) -> InterpolationCurve:
    """ML-objective loss along w = (1−α) w_fml + α w_ml on train and test classes."""
    if w_fml.spec != w_ml.spec or w_fml.d != w_ml.d:
        raise DimensionMismatchError("interpolation endpoints must share an embedding architecture")
    alphas = tuple(float(a) for a in (alphas if alphas is not None else default_alphas()))
    train_losses, test_losses = [], []
    for a in alphas:
        w = lerp(w_fml, w_ml, a)
        train_losses.append(train_eval(w).mean)
        test_losses.append(test_eval(w).mean)
        logger.debug("alpha %.3f: train %.4f test %.4f", a, train_losses[-1], test_losses[-1])
    return InterpolationCurve(alphas, tuple(train_losses), tuple(test_losses))


# ─── Multi-pool trajectory ───


def multi_pool_trajectory(
    checkpoints: Sequence[Tuple[int, AlgorithmParams]],
    dataset: Dataset,
    base_pool: SupportPool,
    n_extra_pools: int,
    cfg: TaskConfig,
    solver: HeadKind,
    n_episodes: int,
    seed: Seed,
    extra_pools: Optional[Sequence[SupportPool]] = None,
    workers: Optional[int] = 1,
) -> List[PoolTrajectoryRow]:
    """Per checkpoint: loss on the fixed pool, the ML objective, and each extra pool.

    All estimates share the episode seeds derived from `seed`. `extra_pools`
    replaces the sampled extra pools (no collision check).
    """
    if not checkpoints:
        raise ConfigError("no checkpoints to evaluate")
    if extra_pools is None:
        if n_extra_pools < 1:
            raise ConfigError("n_extra_pools must be at least 1")
        extra_pools = taskspace.sample_extra_pools(
            dataset, base_pool, n_extra_pools, seeding.child(seed, seeding.POOLS)
        )
    rows = []
    for epoch, params in checkpoints:
        fixed = objectives.fixml_loss_estimate(params, dataset, base_pool, cfg, solver, n_episodes, seed, workers)
        ml = objectives.ml_loss_estimate(params, dataset, cfg, solver, n_episodes, seed, workers)
        extra = tuple(
            objectives.fixml_loss_estimate(params, dataset, p, cfg, solver, n_episodes, seed, workers).mean
            for p in extra_pools
        )
        rows.append(PoolTrajectoryRow(epoch, fixed.mean, ml.mean, extra))
        logger.info("checkpoint %d: fixed %.4f ml %.4f", epoch, fixed.mean, ml.mean)
    return rows


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.corrcoef(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))[0, 1])


# ─── Generalization gap ───


def _check_disjoint(train: Dataset, test: Dataset) -> None:
    shared = set(train.class_ids) & set(test.class_ids)
    if shared:
        raise ConfigError(f"train and test splits share classes {sorted(shared)}")


def gap_estimates(
    params: AlgorithmParams,
    dataset_train: Dataset,
    dataset_test: Dataset,
    cfg: TaskConfig,
    solver: HeadKind,
    n_episodes: int,
    seed: Seed,
    workers: Optional[int] = 1,
    allow_overlap: bool = False,
) -> Tuple[LossEstimate, LossEstimate]:
    """(train-class estimate, test-class estimate) on shared episode seeds."""
    if not allow_overlap:
        _check_disjoint(dataset_train, dataset_test)
    train = objectives.ml_loss_estimate(params, dataset_train, cfg, solver, n_episodes, seed, workers)
    test = objectives.ml_loss_estimate(params, dataset_test, cfg, solver, n_episodes, seed, workers)
    return train, test


def generalization_gap(
    params: AlgorithmParams,
    dataset_train: Dataset,
    dataset_test: Dataset,
    cfg: TaskConfig,
    solver: HeadKind,
    n_episodes: int,
    seed: Seed,
    workers: Optional[int] = 1,
    allow_overlap: bool = False,
) -> float:
    """ML-objective loss on test classes minus on train classes."""
    train, test = gap_estimates(
        params, dataset_train, dataset_test, cfg, solver, n_episodes, seed, workers, allow_overlap
    )
    return test.mean - train.mean


def generalization_decomposition(
    params: AlgorithmParams,
    dataset_train: Dataset,
    dataset_test: Dataset,
    pool: SupportPool,
    cfg: TaskConfig,
    solver: HeadKind,
    n_episodes: int,
    seed: Seed,
    workers: Optional[int] = 1,
) -> GapDecomposition:
    """Split the gap into fixed pool vs. all supports (I) and train vs. test classes (II)."""
    _check_disjoint(dataset_train, dataset_test)
    fixed = objectives.fixml_loss_estimate(params, dataset_train, pool, cfg, solver, n_episodes, seed, workers)
    train, test = gap_estimates(params, dataset_train, dataset_test, cfg, solver, n_episodes, seed, workers)
    return GapDecomposition(fixed.mean, train.mean, test.mean)


# ─── TIC ratio ───


def true_labels(probs: np.ndarray, labels: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    return labels


def tic_ratio(
    params: AlgorithmParams,
    dataset: Dataset,
    cfg: TaskConfig,
    solver: HeadKind,
    n_episodes: int,
    seed: Seed,
    label_sampler: objectives.LabelSampler = objectives.sample_from_model,
    workers: Optional[int] = 1,
    gen_gap: float = float("nan"),
) -> TicReport:
    """tr(C)/tr(F) from episode gradients.

    tr(C) is the mean squared norm of episode gradients under the true query
    labels, tr(F) the same with query labels drawn by `label_sampler` from the
    model's softmax. Neither matrix is formed.
    """
    if n_episodes < MIN_TIC_EPISODES:
        raise ConfigError(f"tic_ratio needs at least {MIN_TIC_EPISODES} episodes")
    seeds = objectives.episode_seeds(seed, n_episodes)

    def traces(i: int):
        episode = taskspace.sample_episode_ml(dataset, cfg, seeds[i])
        loss, _, g_true = objectives.episode_loss_and_grad(params, episode, solver)
        _, _, g_model = objectives.episode_loss_and_grad(
            params, episode, solver, label_sampler, seeding.child(seed, seeding.LABELS, i)
        )
        return loss, float(g_true @ g_true), float(g_model @ g_model)

    results = map_ordered(traces, range(n_episodes), workers)
    tr_c = float(pairwise_mean([r[1] for r in results]))
    tr_f = float(pairwise_mean([r[2] for r in results]))
    if tr_f < MIN_TRACE:
        raise DegeneracyError(f"tr(F) = {tr_f:.3e}; the model's predictive distribution is degenerate")
    return TicReport(
        tr_c=tr_c,
        tr_f=tr_f,
        ratio=tr_c / tr_f,
        n_samples=n_episodes,
        gen_gap=gen_gap,
        train_loss=float(pairwise_mean([r[0] for r in results])),
    )


# ─── Stability ───


def _reference_losses(params: AlgorithmParams, references: Sequence[Episode], solver: HeadKind) -> np.ndarray:
    return np.array([objectives.episode_loss(params, ep, solver)[0] for ep in references])


def stability_estimate(
    dataset: Dataset,
    pool: Optional[SupportPool],
    config: TrainConfig,
    n_perturbations: int,
    seed: Seed,
    n_reference: int = 50,
    classes: Optional[Sequence[int]] = None,
) -> StabilityReport:
    """Empirical lower estimate of uniform outer stability.

    Trains once on the full dataset and once per perturbation with one class
    (and every task built on it) removed. Retraining keeps the base run's
    episode stream and redraws only the episodes that use the removed class.
    The removed classes are `classes` when given, otherwise a prefix of a
    seeded class permutation. beta_hat is the largest loss change over the
    perturbations and a fixed set of reference episodes.
    """
    if n_perturbations < 2:
        raise ConfigError("stability_estimate needs at least two perturbations")
    if n_perturbations > dataset.n_classes:
        raise ConfigError("cannot remove more classes than the dataset has")
    if classes is not None and len(classes) != n_perturbations:
        raise ConfigError(f"{len(classes)} classes given for {n_perturbations} perturbations")
    if config.cfg.n_way > dataset.n_classes - 1:
        raise ConfigError("n_way must leave room for a removed class")

    references = [
        taskspace.sample_episode_ml(dataset, config.evaluation_cfg, s)
        for s in objectives.episode_seeds(seeding.child(seed, seeding.HELDOUT), n_reference)
    ]
    base, _ = trainer.train(dataset, pool, config)
    base_losses = _reference_losses(base, references, config.solver)
    if classes is None:
        classes = taskspace.shuffled_classes(dataset.n_classes, seed)[:n_perturbations]
    removed = tuple(int(c) for c in classes)

    def retrain(c: int) -> float:
        params, _ = trainer.train(dataset, pool, config, excluded_classes=(c,))
        return float(np.max(np.abs(_reference_losses(params, references, config.solver) - base_losses)))

    per = tuple(map_ordered(retrain, removed, config.workers))
    logger.info("stability: beta_hat %.4g over %d perturbations", max(per), len(per))
    return StabilityReport(max(per), per, removed)


def _without_support(episode: Episode, row: int) -> Episode:
    keep = np.arange(episode.support_x.shape[0]) != row
    flat = [(c, i) for c, idx in enumerate(episode.support_idx) for i in idx]
    drop_c, drop_i = flat[row]
    support_idx = tuple(
        tuple(i for i in idx if not (c == drop_c and i == drop_i)) for c, idx in enumerate(episode.support_idx)
    )
    return dataclasses.replace(
        episode,
        support_x=episode.support_x[keep],
        support_y=episode.support_y[keep],
        support_idx=support_idx,
    )


def inner_stability_estimate(
    params: AlgorithmParams,
    dataset: Dataset,
    cfg: TaskConfig,
    solver: HeadKind,
    n_episodes: int,
    seed: Seed,
    workers: Optional[int] = 1,
) -> StabilityReport:
    """Largest query-loss change from removing one support example, per episode."""
    if cfg.k_shot < 2:
        raise ConfigError("inner stability removes a support example; needs k_shot >= 2")
    seeds = objectives.episode_seeds(seed, n_episodes)

    def one(s) -> float:
        episode = taskspace.sample_episode_ml(dataset, cfg, s)
        full, _ = objectives.episode_loss(params, episode, solver)
        return max(
            abs(objectives.episode_loss(params, _without_support(episode, r), solver)[0] - full)
            for r in range(episode.support_x.shape[0])
        )

    per = tuple(map_ordered(one, seeds, workers))
    return StabilityReport(max(per), per, ())


# ─── Multi-run comparison ───


def run_seed(seed: Seed, run: int) -> int:
    return int(seeding.rng(seed, seeding.RUNS, run).integers(2 ** 31))


def multi_run_comparison(
    dataset: Dataset,
    test_dataset: Dataset,
    config: TrainConfig,
    n_runs: int,
    n_episodes: int,
    seed: Seed,
) -> List[RunComparisonRow]:
    """Train ML and FIX-ML `n_runs` times each; FIX-ML draws a new pool per run."""
    if n_runs < 1:
        raise ConfigError("n_runs must be positive")
    _check_disjoint(dataset, test_dataset)
    rows = []
    for objective in (Objective.ML, Objective.FIXML):
        for run in range(n_runs):
            cfg = dataclasses.replace(config, objective=objective, seed=run_seed(seed, run))
            pool = None
            if objective is Objective.FIXML:
                pool = taskspace.sample_support_pool(
                    dataset, cfg.cfg.shots_in_pool, seeding.child(cfg.seed, seeding.POOLS)
                )
            params, _ = trainer.train(dataset, pool, cfg)
            eval_seed = seeding.child(seed, seeding.EVAL)
            test = objectives.ml_loss_estimate(
                params, test_dataset, cfg.evaluation_cfg, cfg.solver, n_episodes, eval_seed, cfg.workers
            )
            train = objectives.ml_loss_estimate(
                params, dataset, cfg.cfg, cfg.solver, n_episodes, eval_seed, cfg.workers
            )
            rows.append(RunComparisonRow(objective, run, test.mean, test.accuracy_mean, train.mean))
            logger.info("%s run %d: test acc %.4f", objective.value, run, test.accuracy_mean)
    return rows


def summarize_runs(rows: Sequence[RunComparisonRow]) -> Dict[Objective, Tuple[float, float]]:
    """Per objective: (mean, std) of test accuracy across runs."""
    out = {}
    for objective in Objective:
        accs = [r.test_acc for r in rows if r.objective is objective]
        if accs:
            out[objective] = mean_and_std(accs)
    return out
