import pytest

from fixpool import cli
from fixpool.taskspace import generate_gaussian_dataset

SMALL = """\
run_dir = out
objective = {objective}
n_train_classes = 6
n_test_classes = 5
per_class = 10
dim = 4
epochs = 2
episodes_per_epoch = 8
eval_episodes = 10
n_episodes = 20
workers = 1
"""


def run(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    return exc.value.code


@pytest.fixture
def config(tmp_path):
    def make(objective="ml", extra=""):
        path = tmp_path / f"{objective}.cfg"
        path.write_text(SMALL.format(objective=objective) + extra)
        return path

    return make


def test_count_pools(capsys):
    assert run(["count-pools", "64", "600", "5", "5"]) == 0
    assert capsys.readouterr().out.split() == ["755.5", "59.0"]


def test_train_then_eval(config, tmp_path):
    path = config()
    assert run(["-q", "train", str(path)]) == 0
    out = tmp_path / "out"
    for name in ("trajectory.csv", "trajectory.svg", "final.ckpt", "pools.csv", "config.lock"):
        assert (out / name).exists()
    assert (out / "trajectory.csv").read_text().splitlines()[0] == "epoch,train_loss,ml_loss,ml_acc"
    assert run(["-q", "eval", str(path)]) == 0
    lines = (out / "eval.csv").read_text().splitlines()
    assert lines[0] == "split,n_episodes,loss,loss_hw95,acc,acc_hw95"
    assert lines[1].startswith("test,20,")


def test_train_is_reproducible(config, tmp_path):
    path = config()
    run(["-q", "train", str(path)])
    first = (tmp_path / "out" / "trajectory.csv").read_bytes()
    run(["-q", "train", str(path)])
    assert (tmp_path / "out" / "trajectory.csv").read_bytes() == first


def test_fixml_train_writes_its_pool(config, tmp_path):
    assert run(["-q", "train", str(config("fixml", "pool_seed = 3\n"))]) == 0
    rows = (tmp_path / "out" / "pools.csv").read_text().splitlines()
    assert rows[0] == "pool,class,index"
    assert len(rows) == 1 + 6


def test_fixml_without_pool_seed_is_a_config_error(config, capsys):
    assert run(["train", str(config("fixml"))]) == 2
    assert "pool_seed" in capsys.readouterr().err


def test_missing_checkpoint_is_an_io_error(config):
    assert run(["eval", str(config(extra="checkpoint = nowhere.ckpt\n"))]) == 3


def test_missing_config_is_an_io_error(tmp_path):
    assert run(["train", str(tmp_path / "absent.cfg")]) == 3


def test_oracle_suites(config, tmp_path):
    path = config(extra="oracle_resamples = 5\noracle_repeats = 3\n")
    assert run(["-q", "oracle", str(path)]) == 0
    lines = (tmp_path / "out" / "oracle.csv").read_text().splitlines()
    assert lines[0] == "operation,inputs_hash,output,value"
    operations = {line.split(",")[0] for line in lines[1:]}
    assert operations == {"opt-sol", "diagonal", "optimal-af", "empirical-sol", "concentration", "estimator-study"}


def test_count_pools_rejects_too_many_shots(capsys):
    assert run(["count-pools", "4", "3", "5", "2"]) == 2
    assert "Error" in capsys.readouterr().err


def test_rerun_from_lock_reproduces_outputs(config, tmp_path):
    assert run(["-q", "train", str(config())]) == 0
    out = tmp_path / "out"
    first = {name: (out / name).read_bytes() for name in ("trajectory.csv", "final.ckpt")}
    lock = tmp_path / "rerun.cfg"
    lock.write_bytes((out / "config.lock").read_bytes().replace(b"workers = 1", b"workers = 3"))
    assert run(["-q", "train", str(lock)]) == 0
    assert {name: (out / name).read_bytes() for name in first} == first


def test_diagnose_after_training(config, tmp_path):
    out = tmp_path / "out"
    extra = f"checkpoint_fml = {out / 'final.ckpt'}\ncheckpoint_ml = {out / 'final.ckpt'}\nn_interp = 3\ntic_episodes = 100\n"
    path = config(extra=extra)
    assert run(["-q", "train", str(path)]) == 0
    for which in ("gap", "tic", "interpolate"):
        assert run(["-q", "diagnose", which, str(path)]) == 0
    assert (out / "gap.csv").read_text().startswith("train_loss,train_hw95,test_loss,test_hw95,gap\n")
    assert (out / "interpolate.svg").read_text().lstrip().startswith("<?xml")
    assert len((out / "interpolate.csv").read_text().splitlines()) == 4


def test_interpolate_needs_both_checkpoints(config):
    assert run(["diagnose", "interpolate", str(config())]) == 2


def csv_text(dataset):
    lines = [f"{dataset.n_classes},{dataset.per_class},{dataset.dim}"]
    for c in range(dataset.n_classes):
        lines += [",".join([str(c), *(repr(float(v)) for v in x)]) for x in dataset.features[c]]
    return "\n".join(lines) + "\n"


def test_dataset_files_get_disjoint_class_ids(config, tmp_path):
    (tmp_path / "train.csv").write_text(csv_text(generate_gaussian_dataset(6, 10, 4, 2.0, 1.0, seed=1)))
    (tmp_path / "test.csv").write_text(csv_text(generate_gaussian_dataset(5, 10, 4, 2.0, 1.0, seed=2)))
    path = config(extra="dataset_csv = train.csv\ntest_dataset_csv = test.csv\n")
    assert run(["-q", "train", str(path)]) == 0
    assert run(["-q", "diagnose", "gap", str(path)]) == 0


def test_overlapping_test_class_offset_is_rejected(config, tmp_path, capsys):
    (tmp_path / "train.csv").write_text(csv_text(generate_gaussian_dataset(6, 10, 4, 2.0, 1.0, seed=1)))
    (tmp_path / "test.csv").write_text(csv_text(generate_gaussian_dataset(5, 10, 4, 2.0, 1.0, seed=2)))
    extra = "dataset_csv = train.csv\ntest_dataset_csv = test.csv\ntest_class_offset = 0\n"
    path = config(extra=extra)
    assert run(["-q", "train", str(path)]) == 0
    assert run(["diagnose", "gap", str(path)]) == 2
    assert "share classes" in capsys.readouterr().err


def test_non_utf8_dataset_exits_with_format_error(config, tmp_path):
    (tmp_path / "bad.csv").write_bytes(b"1,1,1\n0,\xff\xfe\n")
    assert run(["train", str(config(extra="dataset_csv = bad.csv\n"))]) == 3


def test_dataset_with_gapped_class_ids_exits_with_format_error(config, tmp_path):
    (tmp_path / "gap.csv").write_text("2,1,1\n0,1.0\n5,2.0\n")
    assert run(["train", str(config(extra="dataset_csv = gap.csv\n"))]) == 3


def test_non_utf8_config_is_a_config_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_bytes(b"seed = \xff\n")
    assert run(["train", str(path)]) == 2


def test_fixml_can_reuse_a_saved_pool(config, tmp_path):
    out = tmp_path / "out"
    assert run(["-q", "train", str(config("fixml", "pool_seed = 3\n"))]) == 0
    first = (out / "trajectory.csv").read_bytes()
    saved = tmp_path / "saved_pools.csv"
    saved.write_bytes((out / "pools.csv").read_bytes())
    assert run(["-q", "train", str(config("fixml", "pool_csv = saved_pools.csv\n"))]) == 0
    assert (out / "trajectory.csv").read_bytes() == first
    assert (out / "pools.csv").read_bytes() == saved.read_bytes()
