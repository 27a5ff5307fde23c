"""Data structures shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import BudgetError, ConfigError, DimensionMismatchError, ShotCountError
from .parallel import pairwise_sum


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class Objective(Enum):
    ML = "ml"
    FIXML = "fixml"


# ─── Classification task space ───


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled feature vectors, `per_class` of them for each of `n_classes` classes.

    `features[c, i]` is example i of class c. `class_ids` are the global class
    identities (used to check that train/test splits are disjoint); local class
    ids are always 0..N-1.
    """

    features: np.ndarray
    split: Split = Split.TRAIN
    class_ids: Tuple[int, ...] = ()

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 3 or min(feats.shape) < 1:
            raise DimensionMismatchError(
                f"features must have shape (n_classes, per_class, dim), got {feats.shape}"
            )
        object.__setattr__(self, "features", _frozen(feats))
        ids = tuple(int(c) for c in self.class_ids) or tuple(range(feats.shape[0]))
        if len(ids) != feats.shape[0] or len(set(ids)) != len(ids):
            raise ConfigError("class_ids must be distinct, one per class")
        object.__setattr__(self, "class_ids", ids)

    @property
    def n_classes(self) -> int:
        return self.features.shape[0]

    @property
    def per_class(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]


@dataclass(frozen=True)
class SupportPool:
    """Exactly `shots` example indices for every class of a dataset."""

    shots: int
    indices: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        if self.shots < 1:
            raise ShotCountError("a support pool needs at least one shot per class")
        idx = tuple(tuple(int(i) for i in row) for row in self.indices)
        for c, row in enumerate(idx):
            if len(row) != self.shots:
                raise ShotCountError(f"class {c} has {len(row)} pool indices, expected {self.shots}")
            if len(set(row)) != len(row):
                raise ShotCountError(f"class {c} has repeated pool indices")
        object.__setattr__(self, "indices", idx)

    @property
    def n_classes(self) -> int:
        return len(self.indices)

    def check_against(self, dataset: Dataset) -> None:
        if self.n_classes != dataset.n_classes:
            raise ShotCountError(
                f"pool covers {self.n_classes} classes, dataset has {dataset.n_classes}"
            )
        for c, row in enumerate(self.indices):
            if any(i < 0 or i >= dataset.per_class for i in row):
                raise ShotCountError(f"class {c} pool index out of range 0..{dataset.per_class - 1}")


@dataclass(frozen=True)
class TaskConfig:
    n_way: int
    k_shot: int
    q_query: int
    # Shots per class in the support pool; None means exactly k_shot.
    pool_shots: Optional[int] = None

    def __post_init__(self):
        if min(self.n_way, self.k_shot, self.q_query) < 1:
            raise ConfigError("n_way, k_shot and q_query must be positive")
        if self.pool_shots is not None and self.pool_shots < self.k_shot:
            raise ShotCountError("pool_shots must be at least k_shot")

    @property
    def shots_in_pool(self) -> int:
        return self.pool_shots if self.pool_shots is not None else self.k_shot

    def check_against(self, dataset: Dataset) -> None:
        if self.n_way > dataset.n_classes:
            raise BudgetError(f"n_way={self.n_way} exceeds the {dataset.n_classes} available classes")
        if self.k_shot > dataset.per_class:
            raise ShotCountError(f"k_shot={self.k_shot} exceeds per_class={dataset.per_class}")
        if self.k_shot + self.q_query > dataset.per_class:
            raise BudgetError(
                f"k_shot + q_query = {self.k_shot + self.q_query} exceeds per_class={dataset.per_class}"
            )


@dataclass(frozen=True, eq=False)
class Episode:
    """A task (C, S, Q). Labels are local: position of the class in `classes`."""

    classes: Tuple[int, ...]
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    support_idx: Tuple[Tuple[int, ...], ...]
    query_idx: Tuple[Tuple[int, ...], ...]

    @property
    def n_way(self) -> int:
        return len(self.classes)

    @property
    def key(self) -> Tuple:
        """Hashable identity of the (C, S, Q) realization."""
        return (self.classes, self.support_idx, self.query_idx)


# ─── Learned algorithm ───


class EmbeddingKind(Enum):
    IDENTITY = "identity"
    LINEAR = "linear"
    MLP = "mlp"


@dataclass(frozen=True)
class EmbeddingSpec:
    kind: EmbeddingKind
    input_dim: int
    output_dim: int
    hidden_dims: Tuple[int, ...] = ()
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.kind is EmbeddingKind.IDENTITY and self.output_dim != self.input_dim:
            raise DimensionMismatchError("identity embedding requires output_dim == input_dim")
        if self.kind is not EmbeddingKind.MLP and self.hidden_dims:
            raise ConfigError("hidden_dims only apply to the mlp embedding")
        if self.activation != "tanh":
            raise ConfigError(f"unsupported activation {self.activation!r}")

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(fan_in, fan_out) of every affine layer, input to output."""
        if self.kind is EmbeddingKind.IDENTITY:
            return []
        if self.kind is EmbeddingKind.LINEAR:
            return [(self.input_dim, self.output_dim)]
        dims = (self.input_dim,) + self.hidden_dims + (self.output_dim,)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(fan_out * fan_in + fan_out for fan_in, fan_out in self.layer_shapes)


class HeadType(Enum):
    PROTONET = "protonet"
    RIDGE = "ridge"


@dataclass(frozen=True)
class HeadKind:
    type: HeadType
    lam: float = 1.0

    def __post_init__(self):
        if self.type is HeadType.RIDGE and not self.lam > 0:
            raise ConfigError("ridge head needs lambda > 0")

    @classmethod
    def protonet(cls) -> "HeadKind":
        return cls(HeadType.PROTONET)

    @classmethod
    def ridge(cls, lam: float = 1.0) -> "HeadKind":
        return cls(HeadType.RIDGE, lam)


@dataclass(frozen=True, eq=False)
class AlgorithmParams:
    """Flat parameter vector w of the embedding described by `spec`."""

    vector: np.ndarray
    spec: EmbeddingSpec

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64).ravel()
        if vec.size != self.spec.n_params:
            raise DimensionMismatchError(
                f"parameter vector has length {vec.size}, spec implies {self.spec.n_params}"
            )
        object.__setattr__(self, "vector", _frozen(vec))

    @property
    def d(self) -> int:
        return self.vector.size

    def replace(self, vector: np.ndarray) -> "AlgorithmParams":
        return AlgorithmParams(vector, self.spec)


@dataclass(frozen=True)
class LossEstimate:
    mean: float
    half_width_95: float
    n_episodes: int
    accuracy_mean: float = float("nan")
    accuracy_half_width_95: float = 0.0


# ─── Training ───


@dataclass(frozen=True)
class TrainConfig:
    objective: Objective
    epochs: int
    episodes_per_epoch: int
    cfg: TaskConfig
    solver: HeadKind
    embedding: EmbeddingSpec
    task_batch: int = 4
    # Piecewise-constant (start_epoch, learning_rate); first entry starts at 0.
    lr_schedule: Tuple[Tuple[int, float], ...] = ((0, 0.1),)
    momentum: float = 0.9
    seed: int = 0
    eval_every: int = 1
    eval_episodes: int = 200
    eval_cfg: Optional[TaskConfig] = None
    extra_pools: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.episodes_per_epoch < 1 or self.task_batch < 1:
            raise ConfigError("epochs >= 0, episodes_per_epoch >= 1 and task_batch >= 1 required")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        sched = tuple((int(e), float(lr)) for e, lr in self.lr_schedule)
        if not sched or sched[0][0] != 0:
            raise ConfigError("lr_schedule must start at epoch 0")
        if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])):
            raise ConfigError("lr_schedule epochs must be strictly increasing")
        object.__setattr__(self, "lr_schedule", sched)

    def lr_at(self, epoch: int) -> float:
        lr = self.lr_schedule[0][1]
        for start, rate in self.lr_schedule:
            if epoch >= start:
                lr = rate
        return lr

    @property
    def evaluation_cfg(self) -> TaskConfig:
        return self.eval_cfg or self.cfg


def default_schedule(lr: float, epochs: int, drop: float = 0.1) -> Tuple[Tuple[int, float], ...]:
    """One learning-rate drop at 60% of training."""
    at = int(round(0.6 * epochs))
    if at <= 0:
        return ((0, lr),)
    return ((0, lr), (at, lr * drop))


@dataclass
class TrajectoryRecord:
    epoch: int
    train_loss: float
    ml_loss: float
    ml_acc: float
    pool_losses: Tuple[float, ...] = ()
    wall_time: float = 0.0
    checkpoint_id: str = ""


@dataclass
class TrajectoryLog:
    records: List[TrajectoryRecord] = field(default_factory=list)
    checkpoints: Dict[str, AlgorithmParams] = field(default_factory=dict)

    def append(self, record: TrajectoryRecord, params: AlgorithmParams) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("trajectory records must be ordered by epoch")
        self.records.append(record)
        self.checkpoints[record.checkpoint_id] = params

    def ordered_checkpoints(self) -> List[Tuple[int, AlgorithmParams]]:
        return [(r.epoch, self.checkpoints[r.checkpoint_id]) for r in self.records]


# ─── Meta linear regression ───


@dataclass(frozen=True, eq=False)
class RegressionMetaDistribution:
    """Law of tasks (θ_τ, spectrum, σ_τ) for meta linear regression.

    θ_τ ~ N(theta_mean, diag(theta_scale²)); spectrum ~ U[spectrum_low, spectrum_high]
    per coordinate (or |θ_τ| floored at `spectrum_floor` when coupled);
    σ_τ ~ U[noise_low, noise_high]. Σ_τ = basis · diag(spectrum) · basisᵀ.
    """

    dim: int
    theta_mean: np.ndarray
    theta_scale: np.ndarray
    spectrum_low: float = 0.5
    spectrum_high: float = 2.0
    basis: Optional[np.ndarray] = None
    noise_low: float = 0.0
    noise_high: float = 0.0
    couple_spectrum_to_theta: bool = False
    spectrum_floor: float = 1e-3

    def __post_init__(self):
        p = int(self.dim)
        mean = np.broadcast_to(np.asarray(self.theta_mean, dtype=np.float64), (p,))
        scale = np.broadcast_to(np.asarray(self.theta_scale, dtype=np.float64), (p,))
        basis = np.eye(p) if self.basis is None else np.asarray(self.basis, dtype=np.float64)
        if basis.shape != (p, p) or np.max(np.abs(basis.T @ basis - np.eye(p))) > 1e-10:
            raise ConfigError("basis must be a dim x dim orthonormal matrix (to 1e-10)")
        if np.any(scale < 0):
            raise ConfigError("theta_scale must be nonnegative")
        if not (0 < self.spectrum_low <= self.spectrum_high):
            raise ConfigError("spectrum law needs 0 < spectrum_low <= spectrum_high")
        if not (0 <= self.noise_low <= self.noise_high):
            raise ConfigError("noise law needs 0 <= noise_low <= noise_high")
        if not self.spectrum_floor > 0:
            raise ConfigError("spectrum_floor must be positive")
        object.__setattr__(self, "theta_mean", _frozen(mean))
        object.__setattr__(self, "theta_scale", _frozen(scale))
        object.__setattr__(self, "basis", _frozen(basis))


@dataclass(frozen=True, eq=False)
class RegressionTask:
    theta: np.ndarray
    spectrum: np.ndarray
    sigma: float = 0.0
    basis: Optional[np.ndarray] = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).ravel()
        spectrum = np.asarray(self.spectrum, dtype=np.float64).ravel()
        if theta.shape != spectrum.shape:
            raise DimensionMismatchError("theta and spectrum must have the same length")
        if np.any(spectrum <= 0):
            raise ConfigError("task spectrum must be strictly positive")
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")
        object.__setattr__(self, "theta", _frozen(theta))
        object.__setattr__(self, "spectrum", _frozen(spectrum))
        if self.basis is not None:
            object.__setattr__(self, "basis", _frozen(self.basis))

    @property
    def dim(self) -> int:
        return self.theta.size

    @property
    def covariance(self) -> np.ndarray:
        if self.basis is None:
            return np.diag(self.spectrum)
        return (self.basis * self.spectrum) @ self.basis.T


@dataclass(frozen=True, eq=False)
class TaskPopulation:
    """A finite task distribution p(τ): tasks with probability weights."""

    tasks: Tuple[RegressionTask, ...]
    weights: np.ndarray

    def __post_init__(self):
        tasks = tuple(self.tasks)
        if not tasks:
            raise ConfigError("a task population needs at least one task")
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.size != len(tasks) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("population weights must be nonnegative, one per task, summing to 1")
        if len({t.dim for t in tasks}) != 1:
            raise DimensionMismatchError("all tasks in a population must share a dimension")
        object.__setattr__(self, "tasks", tasks)
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, tasks) -> "TaskPopulation":
        tasks = tuple(tasks)
        return cls(tasks, np.full(len(tasks), 1.0 / max(len(tasks), 1)))

    @property
    def dim(self) -> int:
        return self.tasks[0].dim

    def expect(self, fn):
        """Weighted expectation of fn(task) over the population."""
        return pairwise_sum([w * np.asarray(fn(t), dtype=np.float64) for t, w in zip(self.tasks, self.weights)])


@dataclass(frozen=True, eq=False)
class FixedSupport:
    """The fixed support design X_F (n x p) with its cached gram X_Fᵀ X_F."""

    X: np.ndarray
    gram: np.ndarray = field(init=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "gram", _frozen(X.T @ X))

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class ConcentrationReport:
    lambda_min_sum: float
    bernstein_deviation: float
    per_task_cov_errors: Tuple[float, ...]
    sup_theta_dev: float
    variance_norm: float
    kappa_bound: float
    mu_min: float
    l_bound: float
    sigma_f_mean: float
    sigma_f_max: float
    t1: float
    t2: float
    t3: float
    t1_rate: float
    bernstein_bound: float
    chernoff_failure_bound: float
    chernoff_frequency: float
    n_resamples: int
    delta: float = 0.05
    rho: float = 0.05
    epsilon: float = 0.5

    @property
    def chernoff_predicted(self) -> float:
        return max(0.0, 1.0 - self.chernoff_failure_bound)


@dataclass(frozen=True)
class EstimatorStudy:
    """Bias/variance of fixed-support vs. varying-support empirical estimators."""

    theta_star: Tuple[float, ...]
    fixml_bias_sq: float
    fixml_trace_var: float
    ml_bias_sq: float
    ml_trace_var: float
    n_repeats: int


# ─── Diagnostics ───


@dataclass(frozen=True)
class InterpolationCurve:
    alphas: Tuple[float, ...]
    train_losses: Tuple[float, ...]
    test_losses: Tuple[float, ...]
    endpoints: Tuple[str, str] = ("w_fml", "w_ml")

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise ConfigError("interpolation alphas must be strictly increasing")
        if not (len(self.alphas) == len(self.train_losses) == len(self.test_losses)):
            raise DimensionMismatchError("interpolation curves must match the alpha grid")


@dataclass(frozen=True)
class PoolTrajectoryRow:
    epoch: int
    fixed_loss: float
    ml_loss: float
    extra_losses: Tuple[float, ...]


@dataclass(frozen=True)
class TicReport:
    tr_c: float
    tr_f: float
    ratio: float
    n_samples: int
    gen_gap: float = float("nan")
    train_loss: float = float("nan")


@dataclass(frozen=True)
class StabilityReport:
    beta_hat: float
    per_perturbation: Tuple[float, ...]
    removed_classes: Tuple[int, ...]


@dataclass(frozen=True)
class GapDecomposition:
    fixed_pool_loss: float
    ml_train_loss: float
    ml_test_loss: float

    @property
    def term_i(self) -> float:
        return abs(self.fixed_pool_loss - self.ml_train_loss)

    @property
    def term_ii(self) -> float:
        return abs(self.ml_train_loss - self.ml_test_loss)


@dataclass(frozen=True)
class RunComparisonRow:
    objective: Objective
    run: int
    test_loss: float
    test_acc: float
    ml_train_loss: float
