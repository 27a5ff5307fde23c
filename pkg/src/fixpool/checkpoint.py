"""Binary checkpoints: b"FXML", u32 version, u64 d, then d little-endian float64."""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DataFormatError
from .models import AlgorithmParams, EmbeddingSpec

logger = logging.getLogger(__name__)

MAGIC = b"FXML"
VERSION = 1
HEADER = struct.Struct("<4sIQ")


def checkpoint_size(d: int) -> int:
    return HEADER.size + 8 * d


def save_checkpoint(params: AlgorithmParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = np.ascontiguousarray(params.vector, dtype="<f8").tobytes()
    path.write_bytes(HEADER.pack(MAGIC, VERSION, params.d) + body)
    logger.info("checkpoint written to %s (d=%d)", path, params.d)
    return path


def read_vector(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise DataFormatError(f"{path}: truncated checkpoint header")
    magic, version, d = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    if len(data) != checkpoint_size(d):
        raise DataFormatError(f"{path}: expected {checkpoint_size(d)} bytes for d={d}, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=HEADER.size, count=d).astype(np.float64)


def load_checkpoint(path: Union[str, Path], spec: EmbeddingSpec) -> AlgorithmParams:
    """Read a checkpoint for an embedding of the given architecture."""
    vector = read_vector(path)
    if vector.size != spec.n_params:
        raise DataFormatError(f"{path}: checkpoint has d={vector.size}, embedding needs {spec.n_params}")
    return AlgorithmParams(vector, spec)
