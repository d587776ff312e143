"""The command-line driver on a tiny configuration."""

import subprocess
import sys

import pytest

from bridgedistill.cli import main
from bridgedistill.config import SCHEMA

TINY = """
dataset.identities = 12
dataset.private_fraction = 0.3333333333333333
dataset.public_fraction = 0.4166666666666667
dataset.target_fraction = 0.25
dataset.samples_per_identity = 8
dataset.seed = 3
degrade.count = 2
teacher.d_t = 32
teacher.epochs = 1
distill.epochs_pretrain = 1
distill.epochs_main = 1
distill.epochs_adapter = 2
distill.epochs_head = 2
eval.n_pos = 10
eval.n_neg = 10
eval.k_list = 1,2
eval.gallery_per_identity = 5
eval.probe_head_epochs = 2
bench.duration_s = 0.2
bench.batch = 4
grid.resolutions = 16
grid.modes = c,sc
grid.seeds = 0,1
"""


def write_config(root, name="tiny"):
    path = root / f"{name}.cfg"
    path.write_text(f"run.out = {root / 'out'}\nrun.name = {name}\n" + TINY)
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A run directory that has gone through every stage once."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root)
    for verb in ("gen-data", "train-teacher", "adapt", "distill", "eval"):
        assert main([verb, "--config", cfg]) == 0, verb
    return root, cfg


class TestStages:
    def test_artifacts(self, trained):
        root, _ = trained
        run = root / "out" / "tiny"
        for name in ("teacherV", "adapter-V-seed0", "pretrain-S-16-sc-V-seed0", "S-16-sc-V-seed0"):
            assert (run / "checkpoints" / f"{name}.bdck").exists()
        line = (run / "reports" / "eval-S-16-sc-V-seed0.txt").read_text()
        assert line.startswith("model=S-16-sc-V seed=0 acc=") and "top2=" in line
        assert (run / "reports" / "roc-S-16-sc-V-seed0.txt").read_text().startswith("0.000000 0.000000")
        assert "private_test_acc=" in (run / "reports" / "teacherV.txt").read_text()

    def test_gen_data_is_byte_identical(self, trained, tmp_path):
        root, _ = trained
        cfg = write_config(tmp_path)
        assert main(["gen-data", "--config", cfg]) == 0
        a, b = root / "out" / "tiny" / "data", tmp_path / "out" / "tiny" / "data"
        assert (a / "manifest").read_bytes() == (b / "manifest").read_bytes()
        for f in (a / "images").iterdir():
            assert f.read_bytes() == (b / "images" / f.name).read_bytes()

    def test_distill_resumes_from_pretraining(self, trained):
        root, cfg = trained
        ck = root / "out" / "tiny" / "checkpoints" / "S-16-sc-V-seed0.bdck"
        before = ck.read_bytes()
        assert main(["distill", "--config", cfg]) == 0
        assert "resuming from" in (root / "out" / "tiny" / "logs" / "distill.log").read_text()
        assert ck.read_bytes() == before

    def test_ablation_report(self, trained, capsys):
        root, cfg = trained
        assert main(["adapt", "--config", cfg, "--ablation", "--seed", "1"]) == 0
        lines = (root / "out" / "tiny" / "reports" / "ablation-V-seed1.txt").read_text().splitlines()
        assert [l.split()[0] for l in lines] == [f"case={k}" for k in "1234"]

    def test_bench(self, trained, capsys):
        _, cfg = trained
        assert main(["bench", "--config", cfg]) == 0
        assert "throughput ratio" in capsys.readouterr().out


class TestErrors:
    def test_eval_before_distill(self, trained, capsys):
        _, cfg = trained
        assert main(["eval", "--config", cfg, "--seed", "9"]) == 2
        err = capsys.readouterr().err
        assert "missing" in err and "bridgedistill distill" in err

    def test_adapt_without_teacher(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["gen-data", "--config", cfg]) == 0
        assert main(["adapt", "--config", cfg]) == 2
        assert "train-teacher" in capsys.readouterr().err

    def test_distill_without_data(self, tmp_path, capsys):
        assert main(["distill", "--config", write_config(tmp_path)]) == 2
        assert "gen-data" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        assert main(["bench", "--config", write_config(tmp_path), "--set", "distill.typo=1"]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_invalid_combination(self, tmp_path, capsys):
        assert main(["distill", "--config", write_config(tmp_path), "--mode", "sc", "--teacher", "O"]) != 0
        assert "error" in capsys.readouterr().err


def test_help_lists_every_key():
    out = subprocess.run([sys.executable, "-m", "bridgedistill.cli", "--help"], capture_output=True, text=True).stdout
    for k in SCHEMA:
        assert k.name in out


def test_grid_writes_table(trained):
    root, cfg = trained
    run = root / "out" / "tiny"
    res = subprocess.run([sys.executable, "-m", "bridgedistill.cli", "grid", "--config", cfg, "--jobs", "2",
                          "--set", "run.name=grid", "--set", f"dataset.dir={run / 'data'}",
                          "--set", f"teacher.dir={run / 'checkpoints'}"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    lines = (root / "out" / "grid" / "reports" / "grid.txt").read_text().splitlines()
    cells = [l for l in lines if l.startswith("model=")]
    assert len(cells) == 4
    assert {l.split()[0] for l in cells} == {"model=S-16-c-O", "model=S-16-sc-V"}
    assert sum(l.startswith("# mean") for l in lines) == 2
