"""Flat `key = value` experiment configuration.

Every key is declared once in KEYS with its type and default. Relative paths
resolve against the directory of the config file. `write_lock` dumps the
fully resolved configuration, which is itself a loadable config file.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

from .errors import ConfigError
from .parallel import default_workers, env_workers

logger = logging.getLogger(__name__)

LOCK_NAME = "config.lock"


def _int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    parse.__name__ = "|".join(options)
    return parse


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any = None
    help: str = ""
    is_path: bool = False


KEYS: Dict[str, Key] = {
    # run
    "run_dir": Key(str, "run", "output directory", is_path=True),
    "seed": Key(int, 0, "root seed of every stream"),
    "workers": Key(int, None, "parallel workers (FIXPOOL_WORKERS overrides; default cpu count)"),
    # data
    "dataset_csv": Key(str, None, "training classes from a dataset CSV", is_path=True),
    "test_dataset_csv": Key(str, None, "held-out classes from a dataset CSV", is_path=True),
    "test_class_offset": Key(int, None, "global id of the first held-out class (default: after the training classes)"),
    "n_train_classes": Key(int, 10, "synthetic training classes"),
    "n_val_classes": Key(int, 0, "synthetic validation classes"),
    "n_test_classes": Key(int, 5, "synthetic test classes"),
    "per_class": Key(int, 20, "synthetic examples per class"),
    "dim": Key(int, 8, "synthetic feature dimension"),
    "class_spread": Key(float, 2.0, "std of synthetic class means"),
    "within_noise": Key(float, 1.0, "std of synthetic examples around their mean"),
    "data_seed": Key(int, 0, "seed of the synthetic class universe"),
    # tasks
    "n_way": Key(int, 5),
    "k_shot": Key(int, 1),
    "q_query": Key(int, 5),
    "pool_shots": Key(int, None, "shots per class in the fixed pool (default k_shot)"),
    "pool_seed": Key(int, None, "seed of the fixed support pool; required for fixml unless pool_csv is set"),
    "pool_csv": Key(str, None, "fixed support pool read from a pools CSV (pool 0)", is_path=True),
    "eval_n_way": Key(int, None),
    "eval_k_shot": Key(int, None),
    "eval_q_query": Key(int, None),
    # learner
    "objective": Key(_choice("ml", "fixml"), None, "training objective"),
    "head": Key(_choice("protonet", "ridge"), "protonet"),
    "ridge_lambda": Key(float, 1.0),
    "embedding": Key(_choice("identity", "linear", "mlp"), "linear"),
    "embedding_dim": Key(int, None, "output dimension (default: input dim)"),
    "hidden_dims": Key(_int_list, (), "mlp hidden layer widths"),
    # optimizer
    "epochs": Key(int, 60),
    "episodes_per_epoch": Key(int, 100),
    "task_batch": Key(int, 4),
    "lr": Key(float, 0.1),
    "lr_drop": Key(float, 0.1, "learning-rate factor applied at 60% of epochs"),
    "momentum": Key(float, 0.9),
    "eval_every": Key(int, 1),
    "eval_episodes": Key(int, 200, "episodes per trajectory estimate"),
    "extra_pools": Key(int, 0, "extra pools tracked in the trajectory"),
    # evaluation and diagnostics
    "checkpoint": Key(str, None, "checkpoint to evaluate (default run_dir/final.ckpt)", is_path=True),
    "checkpoint_fml": Key(str, None, "interpolation endpoint at alpha=0", is_path=True),
    "checkpoint_ml": Key(str, None, "interpolation endpoint at alpha=1", is_path=True),
    "eval_split": Key(_choice("train", "val", "test"), "test"),
    "n_episodes": Key(int, 2000, "episodes per evaluation"),
    "n_extra_pools": Key(int, 10),
    "n_interp": Key(int, 25),
    "tic_episodes": Key(int, 500),
    "n_perturbations": Key(int, 3),
    "n_runs": Key(int, 5),
    # linear-regression oracle
    "oracle_dim": Key(int, 2),
    "oracle_tasks": Key(int, 5),
    "oracle_alpha": Key(float, 0.1),
    "oracle_n_support": Key(int, 4),
    "oracle_n_query": Key(int, 20),
    "oracle_m": Key(int, 8),
    "oracle_kappa2": Key(float, 0.25),
    "oracle_resamples": Key(int, 200),
    "oracle_repeats": Key(int, 50),
    "oracle_mc_budget": Key(int, None, "Monte Carlo draws for the ML inner expectation (default: exact)"),
}


class ExperimentConfig:
    """Resolved configuration: every KEYS entry has a value (possibly None)."""

    def __init__(self, values: Dict[str, Any], source: Optional[Path] = None):
        self.values = values
        self.source = source

    def __getitem__(self, key: str) -> Any:
        if key not in KEYS:
            raise KeyError(key)
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        value = self[key]
        return default if value is None else value

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if self.values.get(k) is None]
        if missing:
            raise ConfigError(f"missing required config key(s): {', '.join(missing)}")

    @property
    def run_dir(self) -> Path:
        return Path(self.values["run_dir"])

    @property
    def workers(self) -> int:
        env = env_workers()
        if env is not None:
            return env
        return self.values["workers"] or default_workers()

    def with_values(self, **overrides: Any) -> "ExperimentConfig":
        unknown = set(overrides) - set(KEYS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return ExperimentConfig({**self.values, **overrides}, self.source)


def parse_config(text: str, base_dir: Union[str, Path] = ".", source: Optional[Path] = None) -> ExperimentConfig:
    base = Path(base_dir)
    values: Dict[str, Any] = {name: key.default for name, key in KEYS.items()}
    seen = set()
    where = source or "<config>"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value'")
        name, value = (part.strip() for part in line.split("=", 1))
        if name not in KEYS:
            raise ConfigError(f"{where}:{lineno}: unknown config key {name!r}")
        if name in seen:
            raise ConfigError(f"{where}:{lineno}: duplicate config key {name!r}")
        seen.add(name)
        key = KEYS[name]
        if value == "":
            values[name] = key.default
            continue
        try:
            parsed = key.parse(value)
        except ValueError as e:
            raise ConfigError(f"{where}:{lineno}: bad value for {name}: {e}") from None
        if key.is_path:
            parsed = str((base / parsed).resolve())
        values[name] = parsed
    if values["run_dir"] is not None and not Path(values["run_dir"]).is_absolute():
        values["run_dir"] = str((base / values["run_dir"]).resolve())
    return ExperimentConfig(values, source)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError(f"{path}: not valid UTF-8 (byte {e.start})") from None
    return parse_config(text, path.parent, path)


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(config: ExperimentConfig) -> str:
    return "".join(f"{name} = {_format(config.values[name])}\n" for name in KEYS)


def write_lock(config: ExperimentConfig) -> Path:
    """Write config.lock into run_dir."""
    config.run_dir.mkdir(parents=True, exist_ok=True)
    path = config.run_dir / LOCK_NAME
    path.write_text(dump_config(config), encoding="utf-8")
    logger.info("resolved config written to %s", path)
    return path
