"""Orchestrator: config -> data -> train/evaluate/diagnose -> CSV/SVG in run_dir."""

from __future__ import annotations

import hashlib
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import diagnostics, objectives, oracle, seeding, taskspace, trainer
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config, write_lock
from .dataset_io import load_dataset_csv, read_pools_csv, write_pools_csv
from .errors import ConfigError
from .models import (
    AlgorithmParams,
    Dataset,
    EmbeddingKind,
    EmbeddingSpec,
    FixedSupport,
    HeadKind,
    Objective,
    RegressionMetaDistribution,
    RegressionTask,
    Split,
    SupportPool,
    TaskConfig,
    TaskPopulation,
    TrainConfig,
    default_schedule,
)
from .output import (
    plot_interpolation,
    plot_pool_trajectory,
    plot_trajectory,
    write_decomposition,
    write_eval,
    write_gap,
    write_interpolation,
    write_oracle,
    write_pool_trajectory,
    write_runs,
    write_stability,
    write_tic,
    write_trajectory,
)

logger = logging.getLogger(__name__)

DIAGNOSTICS = ("interpolate", "pools", "tic", "gap", "stability", "decompose", "variance")


def _say(message: str) -> None:
    print(message, file=sys.stderr)


# ─── Building blocks from config ───


def build_datasets(cfg: ExperimentConfig) -> Dict[Split, Dataset]:
    if cfg["dataset_csv"]:
        train = load_dataset_csv(cfg["dataset_csv"], Split.TRAIN)
        splits = {Split.TRAIN: train}
        if cfg["test_dataset_csv"]:
            offset = cfg.get("test_class_offset", train.n_classes)
            splits[Split.TEST] = load_dataset_csv(cfg["test_dataset_csv"], Split.TEST, offset)
        return splits
    return taskspace.split_gaussian_dataset(
        cfg["n_train_classes"],
        cfg["n_val_classes"],
        cfg["n_test_classes"],
        cfg["per_class"],
        cfg["dim"],
        cfg["class_spread"],
        cfg["within_noise"],
        cfg["data_seed"],
    )


def _split(datasets: Dict[Split, Dataset], split: Split) -> Dataset:
    if split not in datasets:
        raise ConfigError(f"no {split.value} classes configured")
    return datasets[split]


def task_config(cfg: ExperimentConfig) -> TaskConfig:
    return TaskConfig(cfg["n_way"], cfg["k_shot"], cfg["q_query"], cfg["pool_shots"])


def eval_task_config(cfg: ExperimentConfig) -> TaskConfig:
    return TaskConfig(
        cfg.get("eval_n_way", cfg["n_way"]),
        cfg.get("eval_k_shot", cfg["k_shot"]),
        cfg.get("eval_q_query", cfg["q_query"]),
    )


def head_kind(cfg: ExperimentConfig) -> HeadKind:
    return HeadKind.ridge(cfg["ridge_lambda"]) if cfg["head"] == "ridge" else HeadKind.protonet()


def embedding_spec(cfg: ExperimentConfig, input_dim: int) -> EmbeddingSpec:
    return EmbeddingSpec(
        EmbeddingKind(cfg["embedding"]),
        input_dim,
        cfg.get("embedding_dim", input_dim),
        cfg["hidden_dims"],
    )


def train_config(cfg: ExperimentConfig, objective: Objective, input_dim: int) -> TrainConfig:
    return TrainConfig(
        objective=objective,
        epochs=cfg["epochs"],
        episodes_per_epoch=cfg["episodes_per_epoch"],
        cfg=task_config(cfg),
        solver=head_kind(cfg),
        embedding=embedding_spec(cfg, input_dim),
        task_batch=cfg["task_batch"],
        lr_schedule=default_schedule(cfg["lr"], cfg["epochs"], cfg["lr_drop"]),
        momentum=cfg["momentum"],
        seed=cfg["seed"],
        eval_every=cfg["eval_every"],
        eval_episodes=cfg["eval_episodes"],
        eval_cfg=eval_task_config(cfg),
        extra_pools=cfg["extra_pools"],
        workers=cfg.workers,
    )


def fixed_pool(cfg: ExperimentConfig, dataset: Dataset) -> SupportPool:
    if cfg["pool_csv"]:
        pool = read_pools_csv(cfg["pool_csv"])[0]
        taskspace.check_pool(dataset, pool, task_config(cfg))
        return pool
    cfg.require("pool_seed")
    return taskspace.sample_support_pool(
        dataset, task_config(cfg).shots_in_pool, seeding.child(cfg["pool_seed"], seeding.POOLS)
    )


def _objective(cfg: ExperimentConfig) -> Objective:
    cfg.require("objective")
    return Objective(cfg["objective"])


def _load(cfg: ExperimentConfig, key: str, dataset: Dataset, default: Optional[Path] = None) -> AlgorithmParams:
    path = cfg[key] or default
    if path is None:
        raise ConfigError(f"missing required config key(s): {key}")
    return load_checkpoint(path, embedding_spec(cfg, dataset.dim))


def _prepare(config_path) -> ExperimentConfig:
    cfg = load_config(config_path)
    write_lock(cfg)
    return cfg


# ─── Subcommands ───


def cmd_train(config_path) -> int:
    cfg = _prepare(config_path)
    objective = _objective(cfg)
    datasets = build_datasets(cfg)
    train_set = _split(datasets, Split.TRAIN)
    pool = fixed_pool(cfg, train_set) if objective is Objective.FIXML else None
    tcfg = train_config(cfg, objective, train_set.dim)

    _say(f"Training {objective.value} for {tcfg.epochs} epochs on {train_set.n_classes} classes...")
    params, log = trainer.train(train_set, pool, tcfg)
    last = log.records[-1]
    _say(f"Final train loss {last.train_loss:.4f}, ML-objective loss {last.ml_loss:.4f} (acc {last.ml_acc:.4f}).")

    out = cfg.run_dir
    write_trajectory(log, out / "trajectory.csv")
    plot_trajectory(log, out / "trajectory.svg")
    save_checkpoint(params, out / "final.ckpt")
    write_pools_csv([pool] if pool is not None else [], out / "pools.csv")
    _say(f"Results written to {out}")
    return 0


def cmd_eval(config_path) -> int:
    cfg = _prepare(config_path)
    datasets = build_datasets(cfg)
    split = Split(cfg["eval_split"])
    dataset = _split(datasets, split)
    params = _load(cfg, "checkpoint", dataset, cfg.run_dir / "final.ckpt")
    estimate = objectives.ml_loss_estimate(
        params, dataset, eval_task_config(cfg), head_kind(cfg), cfg["n_episodes"],
        seeding.child(cfg["seed"], seeding.EVAL), cfg.workers,
    )
    _say(
        f"{split.value}: loss {estimate.mean:.4f} ± {estimate.half_width_95:.4f}, "
        f"acc {estimate.accuracy_mean:.4f} ± {estimate.accuracy_half_width_95:.4f} "
        f"over {estimate.n_episodes} episodes."
    )
    write_eval(split.value, estimate, cfg.run_dir / "eval.csv")
    _say(f"Results written to {cfg.run_dir / 'eval.csv'}")
    return 0


def cmd_diagnose(config_path, which: str) -> int:
    if which not in DIAGNOSTICS:
        raise ConfigError(f"unknown diagnostic {which!r}; choose from {', '.join(DIAGNOSTICS)}")
    cfg = _prepare(config_path)
    datasets = build_datasets(cfg)
    train_set = _split(datasets, Split.TRAIN)
    out = cfg.run_dir
    seed = seeding.child(cfg["seed"], seeding.EVAL)
    n = cfg["n_episodes"]
    solver = head_kind(cfg)
    ecfg = eval_task_config(cfg)

    if which == "interpolate":
        test_set = _split(datasets, Split.TEST)
        w_fml = _load(cfg, "checkpoint_fml", train_set)
        w_ml = _load(cfg, "checkpoint_ml", train_set)
        curve = diagnostics.interpolate_losses(
            w_fml,
            w_ml,
            diagnostics.default_alphas(cfg["n_interp"]),
            diagnostics.Evaluator(train_set, ecfg, solver, n, seed, cfg.workers),
            diagnostics.Evaluator(test_set, ecfg, solver, n, seed, cfg.workers),
        )
        write_interpolation(curve, out / "interpolate.csv")
        plot_interpolation(curve, out / "interpolate.svg")
    elif which == "pools":
        pool = fixed_pool(cfg, train_set)
        _, log = trainer.train(train_set, pool, train_config(cfg, Objective.FIXML, train_set.dim))
        rows = diagnostics.multi_pool_trajectory(
            log.ordered_checkpoints(), train_set, pool, cfg["n_extra_pools"], task_config(cfg), solver,
            n, seed, workers=cfg.workers,
        )
        r = diagnostics.pearson([x.fixed_loss for x in rows], [x.ml_loss for x in rows]) if len(rows) > 2 else float("nan")
        _say(f"{len(rows)} checkpoints; fixed-pool vs ML-objective correlation {r:.4f}.")
        write_pool_trajectory(rows, out / "pools_trajectory.csv")
        plot_pool_trajectory(rows, out / "pools_trajectory.svg")
    elif which == "tic":
        params = _load(cfg, "checkpoint", train_set, out / "final.ckpt")
        gap = float("nan")
        if Split.TEST in datasets:
            gap = diagnostics.generalization_gap(params, train_set, datasets[Split.TEST], ecfg, solver, n, seed, cfg.workers)
        report = diagnostics.tic_ratio(
            params, train_set, task_config(cfg), solver, cfg["tic_episodes"],
            seeding.child(cfg["seed"], seeding.HELDOUT), workers=cfg.workers, gen_gap=gap,
        )
        _say(f"tr(C)/tr(F) = {report.ratio:.4f} (train loss {report.train_loss:.4f}, gap {report.gen_gap:.4f}).")
        write_tic(report, out / "tic.csv")
    elif which == "gap":
        params = _load(cfg, "checkpoint", train_set, out / "final.ckpt")
        train_est, test_est = diagnostics.gap_estimates(
            params, train_set, _split(datasets, Split.TEST), ecfg, solver, n, seed, cfg.workers
        )
        _say(f"Generalization gap {test_est.mean - train_est.mean:.4f}.")
        write_gap(train_est, test_est, out / "gap.csv")
    elif which == "stability":
        objective = _objective(cfg)
        pool = fixed_pool(cfg, train_set) if objective is Objective.FIXML else None
        report = diagnostics.stability_estimate(
            train_set, pool, train_config(cfg, objective, train_set.dim), cfg["n_perturbations"],
            seeding.child(cfg["seed"], seeding.HELDOUT),
        )
        _say(f"Empirical stability (lower estimate of the sup): {report.beta_hat:.4g}.")
        write_stability(report, out / "stability.csv")
    elif which == "decompose":
        params = _load(cfg, "checkpoint", train_set, out / "final.ckpt")
        pool = fixed_pool(cfg, train_set)
        gap = diagnostics.generalization_decomposition(
            params, train_set, _split(datasets, Split.TEST), pool, task_config(cfg), solver, n, seed, cfg.workers
        )
        inner = diagnostics.inner_stability_estimate(params, train_set, task_config(cfg), solver, n, seed, cfg.workers)
        _say(f"Term I {gap.term_i:.4f}, term II {gap.term_ii:.4f}, inner stability {inner.beta_hat:.4g}.")
        write_decomposition(gap, inner.beta_hat, out / "decompose.csv")
    else:
        base = train_config(cfg, Objective.ML, train_set.dim)
        rows = diagnostics.multi_run_comparison(
            train_set, _split(datasets, Split.TEST), base, cfg["n_runs"], n, cfg["seed"]
        )
        for objective, (mean, std) in diagnostics.summarize_runs(rows).items():
            _say(f"  {objective.value}: test acc {mean:.4f} ± {std:.4f} over {cfg['n_runs']} runs")
        write_runs(rows, out / "variance.csv")

    _say(f"Results written to {out}")
    return 0


# ─── Linear-regression oracle ───

OracleRow = Tuple[str, str, str, float]


def _inputs_hash(*inputs) -> str:
    digest = hashlib.sha256()
    for item in inputs:
        digest.update(repr(np.asarray(item).tolist()).encode())
    return digest.hexdigest()[:16]


def _rows(operation: str, key: str, outputs: Dict[str, object]) -> List[OracleRow]:
    rows = []
    for name, value in outputs.items():
        arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
        if arr.size == 1:
            rows.append((operation, key, name, float(arr[0])))
        else:
            rows.extend((operation, key, f"{name}[{i}]", float(v)) for i, v in enumerate(arr))
    return rows


def two_task_population() -> TaskPopulation:
    return TaskPopulation.uniform([
        RegressionTask(theta=[1.0, 0.0], spectrum=[1.0, 2.0]),
        RegressionTask(theta=[0.0, 1.0], spectrum=[3.0, 4.0]),
    ])


def oracle_rows(cfg: ExperimentConfig) -> List[OracleRow]:
    seed = cfg["seed"]
    p = cfg["oracle_dim"]
    alpha = cfg["oracle_alpha"]
    n_support = cfg["oracle_n_support"]
    meta = RegressionMetaDistribution(dim=p, theta_mean=np.zeros(p), theta_scale=np.ones(p))
    population = taskspace.population_from_meta(meta, cfg["oracle_tasks"], seed)
    X_F = FixedSupport(seeding.rng(seed, seeding.HELDOUT, 1).standard_normal((n_support, p)))
    key = _inputs_hash(seed, p, alpha, n_support, cfg["oracle_tasks"])
    rows: List[OracleRow] = []

    logger.info("oracle: optimal solutions")
    fml = oracle.theta_star_fml(alpha, X_F, population)
    ml = oracle.theta_star_ml(alpha, population, n_support, cfg["oracle_mc_budget"], seed)
    sgd = oracle.descend(
        lambda t: oracle.fixml_population_objective(t, alpha, X_F, population),
        np.zeros(p), lr=0.1, steps=5000, momentum=0.9, tol=1e-12,
    )
    h_fml, h_ml = oracle.hessians(alpha, X_F, population, n_support, cfg["oracle_mc_budget"], seed)
    rows += _rows("opt-sol", key, {
        "theta_star_fml": fml,
        "theta_star_ml": ml,
        "descend_distance": np.linalg.norm(sgd - fml),
        "h_fml_lambda_min": np.linalg.eigvalsh(h_fml)[0],
        "h_ml_lambda_min": np.linalg.eigvalsh(h_ml)[0],
    })

    logger.info("oracle: two-task diagonal population")
    two = two_task_population()
    diag_fml = oracle.theta_star_fml(alpha, np.eye(2), two)
    mean_s, mean_st, var_s = oracle.diagonal_moments(two)
    grams = seeding.rng(seed, seeding.HELDOUT, 2).uniform(0.1, 5.0, size=(10, 2))
    base = oracle.theta_star_diag(alpha, grams[0], mean_s, mean_st)
    deviation = max(np.max(np.abs(oracle.theta_star_diag(alpha, g, mean_s, mean_st) - base)) for g in grams)
    rows += _rows("diagonal", _inputs_hash(alpha, mean_s, mean_st, grams), {
        "theta_star_fml": diag_fml,
        "theta_star_diag": base,
        "gram_invariance_max_dev": deviation,
    })

    logger.info("oracle: optimal fixed support")
    kappa2 = cfg["oracle_kappa2"]
    af = oracle.optimal_af(alpha, mean_s, kappa2)
    rows += _rows("optimal-af", _inputs_hash(alpha, mean_s, kappa2), {
        "af": af,
        "variance_objective": oracle.af_variance_objective(af, var_s),
        "variance_norm": oracle.diagonal_variance_norm(af, var_s),
    })

    logger.info("oracle: empirical minimizer")
    gen = seeding.rng(seed, seeding.HELDOUT, 3)
    batches = []
    for _ in range(cfg["oracle_m"]):
        task = taskspace.sample_population_task(population, gen)
        X_s, y_s = taskspace.sample_regression_data(task, n_support, tuple(gen.integers(2 ** 31, size=2)))
        X_q, y_q = taskspace.sample_regression_data(task, cfg["oracle_n_query"], tuple(gen.integers(2 ** 31, size=2)))
        batches.append((X_s, y_s, X_q, y_q))
    theta_hat = oracle.theta_hat_ml_empirical(batches, alpha)
    _, grad = oracle.empirical_ml_objective(theta_hat, batches, alpha)
    rows += _rows("empirical-sol", key, {"theta_hat": theta_hat, "grad_norm": np.linalg.norm(grad)})

    logger.info("oracle: concentration")
    report = oracle.concentration_report(
        population, cfg["oracle_m"], X_F, alpha, cfg["oracle_n_query"],
        seed=seed, n_resamples=cfg["oracle_resamples"],
    )
    rows += _rows("concentration", key, {
        "lambda_min_sum": report.lambda_min_sum,
        "bernstein_deviation": report.bernstein_deviation,
        "bernstein_bound": report.bernstein_bound,
        "max_task_cov_error": max(report.per_task_cov_errors),
        "sup_theta_dev": report.sup_theta_dev,
        "variance_norm": report.variance_norm,
        "kappa_bound": report.kappa_bound,
        "mu_min": report.mu_min,
        "l_bound": report.l_bound,
        "sigma_f_mean": report.sigma_f_mean,
        "sigma_f_max": report.sigma_f_max,
        "t1": report.t1,
        "t1_rate": report.t1_rate,
        "t2": report.t2,
        "t3": report.t3,
        "chernoff_predicted": report.chernoff_predicted,
        "chernoff_frequency": report.chernoff_frequency,
    })

    logger.info("oracle: fixed vs fresh support estimators")
    study = oracle.fixed_support_study(
        population, cfg["oracle_m"], X_F, alpha, cfg["oracle_n_query"], cfg["oracle_repeats"], seed, cfg.workers
    )
    rows += _rows("estimator-study", key, {
        "fixml_bias_sq": study.fixml_bias_sq,
        "fixml_trace_var": study.fixml_trace_var,
        "ml_bias_sq": study.ml_bias_sq,
        "ml_trace_var": study.ml_trace_var,
    })
    return rows


def cmd_oracle(config_path) -> int:
    cfg = _prepare(config_path)
    rows = oracle_rows(cfg)
    path = cfg.run_dir / "oracle.csv"
    write_oracle(rows, path)
    _say(f"{len(rows)} oracle values written to {path}")
    return 0


def cmd_count_pools(n_classes: int, per_class: int, k: int, n_way: int) -> int:
    """Print log10 of the pool count and of the per-class-set reduction factor."""
    pools = taskspace.count_support_pools_log10(n_classes, per_class, k)
    reduction = taskspace.count_reduction_factor_log10(per_class, k, n_way)
    print(f"{pools:.1f}")
    print(f"{reduction:.1f}")
    return 0
