from pathlib import Path

import pytest

from fixpool.config import KEYS, dump_config, load_config, parse_config, write_lock
from fixpool.errors import ConfigError


def test_defaults_fill_every_key():
    cfg = parse_config("")
    assert set(cfg.values) == set(KEYS)
    assert cfg["n_way"] == 5 and cfg["embedding"] == "linear"
    assert cfg["objective"] is None


def test_values_comments_and_blanks(tmp_path):
    cfg = parse_config(
        "# experiment\n\nobjective = fixml  # trailing\nlr = 0.05\nhidden_dims = 16, 8\npool_seed =\n",
        base_dir=tmp_path,
    )
    assert cfg["objective"] == "fixml"
    assert cfg["lr"] == 0.05
    assert cfg["hidden_dims"] == (16, 8)
    assert cfg["pool_seed"] is None


def test_paths_resolve_against_the_config_directory(tmp_path):
    cfg = parse_config("dataset_csv = data/train.csv\n", base_dir=tmp_path)
    assert cfg["dataset_csv"] == str((tmp_path / "data" / "train.csv").resolve())
    assert cfg.run_dir == (tmp_path / "run").resolve()


@pytest.mark.parametrize("text, message", [
    ("nway = 5\n", "unknown config key"),
    ("seed = 1\nseed = 2\n", "duplicate"),
    ("seed = one\n", "bad value for seed"),
    ("head = svm\n", "bad value for head"),
    ("just words\n", "expected 'key = value'"),
])
def test_rejects_bad_lines(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text)


def test_require_names_missing_keys():
    with pytest.raises(ConfigError, match="pool_seed"):
        parse_config("").require("objective", "pool_seed")


def test_lock_file_reloads_to_the_same_values(tmp_path):
    source = tmp_path / "exp.cfg"
    source.write_text("run_dir = out\nobjective = ml\nlr = 0.3\nhidden_dims = 4\nworkers = 2\n")
    cfg = load_config(source)
    lock = write_lock(cfg)
    assert lock == Path(cfg.run_dir) / "config.lock"
    assert load_config(lock).values == cfg.values
    assert lock.read_text() == dump_config(cfg)


def test_with_values_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        parse_config("").with_values(learning_rate=1.0)
    assert parse_config("").with_values(seed=7)["seed"] == 7


def test_non_utf8_config_is_a_config_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_bytes(b"seed = \xff\xfe\n")
    with pytest.raises(ConfigError, match="UTF-8"):
        load_config(path)


def test_workers_environment_overrides_the_key(monkeypatch):
    cfg = parse_config("workers = 2\n")
    monkeypatch.delenv("FIXPOOL_WORKERS", raising=False)
    assert cfg.workers == 2
    monkeypatch.setenv("FIXPOOL_WORKERS", "4")
    assert cfg.workers == 4


def test_workers_default_without_key_or_environment(monkeypatch):
    monkeypatch.delenv("FIXPOOL_WORKERS", raising=False)
    monkeypatch.setattr("os.cpu_count", lambda: 3)
    assert parse_config("").workers == 3


def test_bad_workers_environment_is_a_config_error(monkeypatch):
    monkeypatch.setenv("FIXPOOL_WORKERS", "many")
    with pytest.raises(ConfigError, match="FIXPOOL_WORKERS"):
        parse_config("workers = 2\n").workers
