"""Episodic SGD with momentum for the ML and FIX-ML objectives."""

from __future__ import annotations

import logging
import math
import time
from typing import Callable, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from . import objectives, seeding, taskspace
from .errors import ConfigError, DivergenceError
from .models import (
    AlgorithmParams,
    Dataset,
    EmbeddingSpec,
    Objective,
    SupportPool,
    TrainConfig,
    TrajectoryLog,
    TrajectoryRecord,
)
from .seeding import Seed

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e3

# progress(record) is called after every trajectory record
Progress = Callable[[TrajectoryRecord], None]


def init_params(spec: EmbeddingSpec, seed: Seed) -> AlgorithmParams:
    """Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)), zero biases."""
    gen = seeding.rng(seed)
    parts: List[np.ndarray] = []
    for fan_in, fan_out in spec.layer_shapes:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        parts.append(gen.uniform(-limit, limit, size=fan_out * fan_in))
        parts.append(np.zeros(fan_out))
    vector = np.concatenate(parts) if parts else np.zeros(0)
    return AlgorithmParams(vector, spec)


def _check_inputs(dataset: Dataset, pool: Optional[SupportPool], config: TrainConfig) -> None:
    if config.embedding.input_dim != dataset.dim:
        raise ConfigError(f"embedding input_dim={config.embedding.input_dim} but features have dim {dataset.dim}")
    if config.objective is Objective.FIXML:
        if pool is None:
            raise ConfigError("objective=fixml needs a support pool")
        taskspace.check_pool(dataset, pool, config.cfg)
    elif pool is not None:
        raise ConfigError("objective=ml trains without a support pool")
    config.cfg.check_against(dataset)


def _draw_episode(dataset, pool, config: TrainConfig, seed: Seed):
    if config.objective is Objective.FIXML:
        return taskspace.sample_episode_from_pool(dataset, pool, config.cfg, seed)
    return taskspace.sample_episode_ml(dataset, config.cfg, seed)


def _sample_train_episode(dataset, pool, config: TrainConfig, seed: Seed, excluded: FrozenSet[int] = frozenset()):
    """Training episode for one slot; episodes touching an excluded class are redrawn.

    Redraws come from sub-streams of the slot seed, so every slot whose first
    draw avoids the excluded classes matches a run without exclusions.
    """
    episode = _draw_episode(dataset, pool, config, seed)
    redraw = 0
    while excluded.intersection(episode.classes):
        redraw += 1
        episode = _draw_episode(dataset, pool, config, seeding.child(seed, redraw))
    return episode


class _Evaluator:
    """Held-out estimates at checkpoints, on seeds disjoint from training."""

    def __init__(self, dataset, pool, config: TrainConfig, eval_dataset: Optional[Dataset]):
        self.dataset = dataset
        self.pool = pool
        self.config = config
        self.eval_dataset = eval_dataset or dataset
        self.seeds = objectives.episode_seeds(seeding.child(config.seed, seeding.EVAL), config.eval_episodes)
        self.extra_pools: List[SupportPool] = []
        if config.extra_pools > 0:
            base = pool or taskspace.sample_support_pool(
                dataset, config.cfg.shots_in_pool, seeding.child(config.seed, seeding.POOLS)
            )
            self.extra_pools = taskspace.sample_extra_pools(
                dataset, base, config.extra_pools, seeding.child(config.seed, seeding.POOLS, 1)
            )

    def ml(self, params: AlgorithmParams):
        return objectives.ml_loss_estimate(
            params, self.eval_dataset, self.config.evaluation_cfg, self.config.solver,
            len(self.seeds), self.config.seed, self.config.workers, seeds=self.seeds,
        )

    def train_objective(self, params: AlgorithmParams) -> float:
        if self.config.objective is Objective.FIXML:
            return self._on_pool(params, self.pool)
        return objectives.ml_loss_estimate(
            params, self.dataset, self.config.cfg, self.config.solver,
            len(self.seeds), self.config.seed, self.config.workers, seeds=self.seeds,
        ).mean

    def _on_pool(self, params: AlgorithmParams, pool: SupportPool) -> float:
        return objectives.fixml_loss_estimate(
            params, self.dataset, pool, self.config.cfg, self.config.solver,
            len(self.seeds), self.config.seed, self.config.workers, seeds=self.seeds,
        ).mean

    def pools(self, params: AlgorithmParams) -> Tuple[float, ...]:
        return tuple(self._on_pool(params, p) for p in self.extra_pools)


def train(
    dataset: Dataset,
    pool: Optional[SupportPool],
    config: TrainConfig,
    eval_dataset: Optional[Dataset] = None,
    progress: Optional[Progress] = None,
    excluded_classes: Sequence[int] = (),
) -> Tuple[AlgorithmParams, TrajectoryLog]:
    """Train an embedding with momentum SGD on task batches.

    Each step averages the loss and gradient of `task_batch` episodes (episode
    seeds come from the TRAIN stream and depend only on (epoch, step, slot)).
    Records are taken at epoch 0, every `eval_every` epochs and at the final
    epoch; epoch-0 train_loss is the train objective at initialization, later
    ones are the mean batch loss over the epoch.

    Training episodes never use a class in `excluded_classes`; held-out
    records still evaluate on every class.
    """
    _check_inputs(dataset, pool, config)
    excluded = frozenset(int(c) for c in excluded_classes)
    if any(not 0 <= c < dataset.n_classes for c in excluded):
        raise ConfigError(f"excluded classes {sorted(excluded)} outside 0..{dataset.n_classes - 1}")
    remaining = dataset.n_classes - len(excluded)
    if remaining < config.cfg.n_way:
        raise ConfigError(f"n_way={config.cfg.n_way} does not fit in the {remaining} remaining classes")
    params = init_params(config.embedding, seeding.child(config.seed, seeding.INIT))
    evaluator = _Evaluator(dataset, pool, config, eval_dataset)
    log = TrajectoryLog()
    started = time.perf_counter()

    def record(epoch: int, train_loss: float) -> None:
        ml = evaluator.ml(params)
        rec = TrajectoryRecord(
            epoch=epoch,
            train_loss=train_loss,
            ml_loss=ml.mean,
            ml_acc=ml.accuracy_mean,
            pool_losses=evaluator.pools(params),
            wall_time=time.perf_counter() - started,
            checkpoint_id=f"epoch-{epoch:04d}",
        )
        log.append(rec, params)
        logger.info("epoch %d: train %.4f, ml %.4f (acc %.3f)", epoch, rec.train_loss, rec.ml_loss, rec.ml_acc)
        if progress is not None:
            progress(rec)

    record(0, evaluator.train_objective(params))
    if config.epochs == 0:
        return params, log

    steps = math.ceil(config.episodes_per_epoch / config.task_batch)
    velocity = np.zeros(params.d)
    initial: Optional[float] = None
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch - 1)
        losses = []
        for step in range(steps):
            episodes = [
                _sample_train_episode(
                    dataset, pool, config, seeding.child(config.seed, seeding.TRAIN, epoch, step, b), excluded
                )
                for b in range(config.task_batch)
            ]
            loss, grad = objectives.batch_loss_and_grad(params, episodes, config.solver, config.workers)
            if initial is None:
                initial = max(loss, 1e-12)
            if not np.isfinite(loss) or loss > DIVERGENCE_FACTOR * initial:
                raise DivergenceError(
                    f"training diverged at epoch {epoch}, step {step}: loss {loss:.4g} (initial {initial:.4g})"
                )
            velocity = config.momentum * velocity + grad
            params = params.replace(params.vector - lr * velocity)
            losses.append(loss)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            record(epoch, float(np.mean(losses)))
    return params, log
