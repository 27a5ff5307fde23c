"""Dataset CSV ingestion and support-pool CSV files.

Dataset format: a header line "n_classes,per_class,dim" followed by one row
"class_id,f_0,...,f_{dim-1}" per example. Rows may come in any order, class ids
must be exactly 0..n_classes-1 and every class must have exactly per_class rows.
A loaded class c gets the global id class_offset + c, so two files loaded with
different offsets describe disjoint classes.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from .errors import DataFormatError, FixpoolError
from .models import Dataset, Split, SupportPool
from .output import write_table

logger = logging.getLogger(__name__)

POOL_COLUMNS = ["pool", "class", "index"]


def _ints(fields: Sequence[str], path: Path, line: int) -> List[int]:
    try:
        return [int(f) for f in fields]
    except ValueError:
        raise DataFormatError(f"{path}:{line}: expected integers, got {','.join(fields)!r}") from None


def _read_rows(path: Path) -> List[List[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as f:
            return list(csv.reader(f))
    except UnicodeDecodeError as e:
        raise DataFormatError(f"{path}: not valid UTF-8 (byte {e.start})") from None
    except csv.Error as e:
        raise DataFormatError(f"{path}: {e}") from None


def load_dataset_csv(path: Union[str, Path], split: Split = Split.TRAIN, class_offset: int = 0) -> Dataset:
    path = Path(path)
    rows = [r for r in _read_rows(path) if r and any(x.strip() for x in r)]
    if not rows:
        raise DataFormatError(f"{path}: empty dataset file")
    header = _ints(rows[0], path, 1)
    if len(header) != 3 or min(header) < 1:
        raise DataFormatError(f"{path}:1: header must be three positive integers n_classes,per_class,dim")
    n_classes, per_class, dim = header

    by_class: Dict[int, List[np.ndarray]] = {}
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != dim + 1:
            raise DataFormatError(f"{path}:{line}: expected {dim + 1} fields, found {len(row)}")
        (class_id,) = _ints(row[:1], path, line)
        if not 0 <= class_id < n_classes:
            raise DataFormatError(f"{path}:{line}: class id {class_id} outside 0..{n_classes - 1}")
        try:
            feats = np.array([float(x) for x in row[1:]])
        except ValueError:
            raise DataFormatError(f"{path}:{line}: non-numeric feature") from None
        if not np.all(np.isfinite(feats)):
            raise DataFormatError(f"{path}:{line}: non-finite feature")
        by_class.setdefault(class_id, []).append(feats)

    missing = sorted(set(range(n_classes)) - set(by_class))
    if missing:
        raise DataFormatError(f"{path}: header declares {n_classes} classes, no rows for class(es) {missing}")
    for class_id, examples in by_class.items():
        if len(examples) != per_class:
            raise DataFormatError(f"{path}: class {class_id} has {len(examples)} rows, expected {per_class}")
    features = np.stack([np.stack(by_class[c]) for c in range(n_classes)])
    try:
        dataset = Dataset(features, split, tuple(class_offset + c for c in range(n_classes)))
    except FixpoolError as e:
        raise DataFormatError(f"{path}: {e}") from e
    logger.info("loaded %s: %d classes x %d examples, dim %d", path, n_classes, per_class, dim)
    return dataset


def write_pools_csv(pools: Sequence[SupportPool], path: Union[str, Path]) -> None:
    """Long format: one row per (pool, class, example index); pool 0 is the base pool."""
    rows = [
        [p, c, i]
        for p, pool in enumerate(pools)
        for c, row in enumerate(pool.indices)
        for i in row
    ]
    write_table(POOL_COLUMNS, rows, path)


def read_pools_csv(path: Union[str, Path]) -> List[SupportPool]:
    path = Path(path)
    rows = _read_rows(path)
    if not rows or rows[0] != POOL_COLUMNS:
        raise DataFormatError(f"{path}: expected header {','.join(POOL_COLUMNS)}")
    grouped: Dict[int, Dict[int, List[int]]] = {}
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(POOL_COLUMNS):
            raise DataFormatError(f"{path}:{line}: expected {len(POOL_COLUMNS)} fields, found {len(row)}")
        p, c, i = _ints(row, path, line)
        grouped.setdefault(p, {}).setdefault(c, []).append(i)
    if not grouped:
        raise DataFormatError(f"{path}: no pool rows")
    pools = []
    for p in sorted(grouped):
        classes = grouped[p]
        if sorted(classes) != list(range(len(classes))):
            raise DataFormatError(f"{path}: pool {p} classes must be 0..N-1")
        rows_ = [tuple(classes[c]) for c in range(len(classes))]
        try:
            pools.append(SupportPool(len(rows_[0]), tuple(rows_)))
        except FixpoolError as e:
            raise DataFormatError(f"{path}: pool {p}: {e}") from e
    return pools
