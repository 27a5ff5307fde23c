"""CSV tables and SVG line plots."""

from __future__ import annotations

import csv
import logging
import sys
from pathlib import Path
from typing import IO, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .models import (  # noqa: E402
    GapDecomposition,
    InterpolationCurve,
    LossEstimate,
    PoolTrajectoryRow,
    RunComparisonRow,
    StabilityReport,
    TicReport,
    TrajectoryLog,
)

logger = logging.getLogger(__name__)

# Fixed ids in the SVG so identical inputs give identical bytes
matplotlib.rcParams["svg.hashsalt"] = "fixpool"

BLUE = "tab:blue"
RED = "tab:red"
GREEN = "tab:green"

TRAJECTORY_COLUMNS = ["epoch", "train_loss", "ml_loss", "ml_acc"]
EVAL_COLUMNS = ["split", "n_episodes", "loss", "loss_hw95", "acc", "acc_hw95"]
INTERPOLATION_COLUMNS = ["alpha", "train_loss", "test_loss"]
POOL_TRAJECTORY_COLUMNS = ["epoch", "fixed_loss", "ml_loss"]
TIC_COLUMNS = ["tr_c", "tr_f", "ratio", "n_samples", "gen_gap", "train_loss"]
GAP_COLUMNS = ["train_loss", "train_hw95", "test_loss", "test_hw95", "gap"]
STABILITY_COLUMNS = ["perturbation", "removed_class", "loss_change"]
DECOMPOSE_COLUMNS = ["fixed_pool_loss", "ml_train_loss", "ml_test_loss", "term_i", "term_ii", "inner_beta"]
VARIANCE_COLUMNS = ["objective", "run", "test_loss", "test_acc", "ml_train_loss"]
ORACLE_COLUMNS = ["operation", "inputs_hash", "output", "value"]

Dest = Union[str, Path, IO[str], None]


def write_table(columns: Sequence[str], rows: Iterable[Sequence], dest: Dest = None) -> None:
    """Write a header and rows as CSV. If dest is None, write to stdout."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="", encoding="utf-8") as f:
            write_table(columns, rows, f)
        return
    writer = csv.writer(dest or sys.stdout, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(row)


def trajectory_columns(n_pools: int) -> List[str]:
    return TRAJECTORY_COLUMNS + [f"pool_{i}_loss" for i in range(n_pools)]


def write_trajectory(log: TrajectoryLog, dest: Dest = None) -> None:
    """Wall time is left out so reruns produce identical bytes."""
    n_pools = max((len(r.pool_losses) for r in log.records), default=0)
    rows = [[r.epoch, r.train_loss, r.ml_loss, r.ml_acc, *r.pool_losses] for r in log.records]
    write_table(trajectory_columns(n_pools), rows, dest)


def write_eval(split: str, estimate: LossEstimate, dest: Dest = None) -> None:
    write_table(EVAL_COLUMNS, [[
        split,
        estimate.n_episodes,
        estimate.mean,
        estimate.half_width_95,
        estimate.accuracy_mean,
        estimate.accuracy_half_width_95,
    ]], dest)


def write_interpolation(curve: InterpolationCurve, dest: Dest = None) -> None:
    write_table(INTERPOLATION_COLUMNS, zip(curve.alphas, curve.train_losses, curve.test_losses), dest)


def pool_trajectory_columns(n_extra: int) -> List[str]:
    return POOL_TRAJECTORY_COLUMNS + [f"extra_{i}_loss" for i in range(n_extra)]


def write_pool_trajectory(rows: Sequence[PoolTrajectoryRow], dest: Dest = None) -> None:
    n_extra = len(rows[0].extra_losses) if rows else 0
    write_table(
        pool_trajectory_columns(n_extra),
        [[r.epoch, r.fixed_loss, r.ml_loss, *r.extra_losses] for r in rows],
        dest,
    )


def write_tic(report: TicReport, dest: Dest = None) -> None:
    write_table(TIC_COLUMNS, [[
        report.tr_c, report.tr_f, report.ratio, report.n_samples, report.gen_gap, report.train_loss,
    ]], dest)


def write_gap(train: LossEstimate, test: LossEstimate, dest: Dest = None) -> None:
    write_table(GAP_COLUMNS, [[
        train.mean, train.half_width_95, test.mean, test.half_width_95, test.mean - train.mean,
    ]], dest)


def write_stability(report: StabilityReport, dest: Dest = None) -> None:
    write_table(
        STABILITY_COLUMNS,
        [[i, c, v] for i, (c, v) in enumerate(zip(report.removed_classes, report.per_perturbation))],
        dest,
    )


def write_decomposition(gap: GapDecomposition, inner_beta: float, dest: Dest = None) -> None:
    write_table(DECOMPOSE_COLUMNS, [[
        gap.fixed_pool_loss, gap.ml_train_loss, gap.ml_test_loss, gap.term_i, gap.term_ii, inner_beta,
    ]], dest)


def write_runs(rows: Sequence[RunComparisonRow], dest: Dest = None) -> None:
    write_table(
        VARIANCE_COLUMNS,
        [[r.objective.value, r.run, r.test_loss, r.test_acc, r.ml_train_loss] for r in rows],
        dest,
    )


def write_oracle(rows: Sequence[Tuple[str, str, str, float]], dest: Dest = None) -> None:
    write_table(ORACLE_COLUMNS, rows, dest)


# ─── Plots ───

# name -> (values, color)
Series = Dict[str, Tuple[Sequence[float], Optional[str]]]


def plot_lines(
    path: Union[str, Path],
    x: Sequence[float],
    series: Series,
    xlabel: str,
    ylabel: str,
    title: str = "",
) -> Path:
    """Standalone SVG line plot, one line per series."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (values, color) in series.items():
        ax.plot(list(x), list(values), label=name, color=color)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug("plot written to %s", path)
    return path


def plot_interpolation(curve: InterpolationCurve, path: Union[str, Path]) -> Path:
    return plot_lines(
        path,
        curve.alphas,
        {"train": (curve.train_losses, BLUE), "test": (curve.test_losses, RED)},
        xlabel="alpha (0 = w_fml, 1 = w_ml)",
        ylabel="ML-objective loss",
    )


def plot_pool_trajectory(rows: Sequence[PoolTrajectoryRow], path: Union[str, Path]) -> Path:
    epochs = [r.epoch for r in rows]
    series: Series = {
        "blue: fixed pool": ([r.fixed_loss for r in rows], BLUE),
        "red: ML objective": ([r.ml_loss for r in rows], RED),
    }
    n_extra = len(rows[0].extra_losses) if rows else 0
    for i in range(n_extra):
        series[f"green: pool {i}"] = ([r.extra_losses[i] for r in rows], GREEN)
    return plot_lines(path, epochs, series, xlabel="epoch", ylabel="loss")


def plot_trajectory(log: TrajectoryLog, path: Union[str, Path]) -> Path:
    epochs = [r.epoch for r in log.records]
    series: Series = {
        "blue: train objective": ([r.train_loss for r in log.records], BLUE),
        "red: ML objective": ([r.ml_loss for r in log.records], RED),
    }
    n_pools = max((len(r.pool_losses) for r in log.records), default=0)
    for i in range(n_pools):
        series[f"green: pool {i}"] = ([r.pool_losses[i] for r in log.records], GREEN)
    return plot_lines(path, epochs, series, xlabel="epoch", ylabel="loss")
