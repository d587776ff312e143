"""Command-line driver: ``bridgedistill <verb> [--config FILE] [flags]``.

Each verb is one stage; stages exchange artifacts through the run directory
``<run.out>/<run.name>/{checkpoints,reports,logs}``.
"""

from __future__ import annotations

import argparse
import logging
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bench import cost_report, cost_table
from .config import ConfigError, RunConfig, describe_keys
from .datagen import MANIFEST, generate_dataset, read_dataset, write_dataset
from .models import build_adapter, build_student, build_toy_teacher, load_checkpoint, save_checkpoint
from .pipeline import TEACHER_SEEDS, Workbench, model_name

log = logging.getLogger("bridgedistill")

VERBS = ("gen-data", "train-teacher", "adapt", "distill", "eval", "bench", "grid")


class MissingArtifact(RuntimeError):
    pass


# --------------------------------------------------------------------------
# run directory helpers
# --------------------------------------------------------------------------

class Run:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = cfg.run_dir
        for sub in ("checkpoints", "reports", "logs"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._wb: Optional[Workbench] = None

    @property
    def teacher_dir(self) -> Path:
        return Path(self.cfg["teacher.dir"]) if self.cfg["teacher.dir"] else self.root / "checkpoints"

    def ckpt(self, name: str) -> Path:
        return self.root / "checkpoints" / f"{name}.bdck"

    def write_report(self, name: str, lines: Sequence[str]) -> Path:
        path = self.root / "reports" / f"{name}.txt"
        path.write_text("".join(l + "\n" for l in lines))
        return path

    def require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise MissingArtifact(f"missing {path}; run `bridgedistill {stage}` first")
        return path

    def dataset(self):
        manifest = self.cfg.data_dir / MANIFEST
        self.require(manifest, "gen-data")
        return read_dataset(self.cfg.data_dir)

    def workbench(self, teacher_set: str = "O") -> Workbench:
        if self._wb is None:
            self._wb = Workbench(self.cfg.pipeline_config(), self.dataset())
        variants = {"O": (), "V": ("V",), "C": ("C",), "E": ("V", "C")}[teacher_set]
        for v in variants:
            if v not in self._wb._teachers:
                self._wb.add_teacher(v, self.load_teacher(v))
        return self._wb

    def load_teacher(self, variant: str):
        path = self.require(self.teacher_dir / f"teacher{variant}.bdck", f"train-teacher --teacher {variant}")
        ds_splits = self._wb.ds.splits if self._wb is not None else self.dataset().splits
        t = build_toy_teacher(len(ds_splits["private"]), self.cfg["teacher.d_t"], TEACHER_SEEDS[variant], variant,
                              self.cfg["dataset.hr"], ds_splits["private"])
        t.load_tensors(load_checkpoint(path))
        return t

    def cell_name(self) -> str:
        d = self.cfg.distill_config()
        return f"{model_name(d.resolution, d.mode, d.teacher_set)}-seed{d.seed}"


def _tensors(obj) -> dict:
    return {k: t.data for k, t in obj.named_tensors().items()}


# --------------------------------------------------------------------------
# verbs
# --------------------------------------------------------------------------

def cmd_gen_data(run: Run, args) -> int:
    ds = generate_dataset(run.cfg.dataset_config())
    root = write_dataset(ds, run.cfg.data_dir)
    log.info("wrote %d samples to %s", len(ds.samples), root)
    print(root)
    return 0


def cmd_train_teacher(run: Run, args) -> int:
    ds = run.dataset()
    wb = Workbench(run.cfg.pipeline_config(), ds)
    variants = ("V", "C") if run.cfg["distill.teacher"] == "E" else (run.cfg["distill.teacher"],)
    if variants == ("O",):
        raise ValueError("teacher set O has no teacher to train")
    for v in variants:
        t = wb.teacher(v)
        rep = wb.teacher_reports[v]
        acc = wb.private_test_accuracy(v)
        run.teacher_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(run.teacher_dir / f"teacher{v}.bdck", _tensors(t))
        path = run.write_report(f"teacher{v}", rep.lines() + [f"private_test_acc={acc:.4f}"])
        log.info("teacher %s: private-test accuracy %.4f (%.1fs); report %s", v, acc, rep.wall_clock, path)
    return 0


def cmd_adapt(run: Run, args) -> int:
    dcfg = run.cfg.distill_config()
    if dcfg.teacher_set == "O":
        raise ValueError("teacher set O has no adaptation stage")
    wb = run.workbench(dcfg.teacher_set)
    tag = f"{dcfg.teacher_set}-seed{dcfg.seed}"
    adapter, rep = wb.adapt(dcfg.teacher_set, dcfg)
    tensors = _tensors(adapter)
    teacher = wb.teacher_set(dcfg.teacher_set)
    if teacher.ft_head is not None:
        tensors.update(_tensors(teacher.ft_head))
    save_checkpoint(run.ckpt(f"adapter-{tag}"), tensors)
    run.write_report(f"adapter-{tag}", rep.lines())
    log.info("adapter %s trained in %.1fs", tag, rep.wall_clock)
    if args.ablation:
        cases = wb.adaptation_ablation(dcfg.teacher_set, dcfg)
        lines = [f"case={k[-1]} public_test_acc={v:.4f}" for k, v in cases.items()]
        run.write_report(f"ablation-{tag}", lines)
        print("\n".join(lines))
    return 0


def _load_adapter(run: Run, wb: Workbench, t: str, seed: int):
    path = run.require(run.ckpt(f"adapter-{t}-seed{seed}"), f"adapt --teacher {t} --seed {seed}")
    adapter = build_adapter(wb.teacher_set(t).feature_dim, len(wb.public_ids), seed + 1)
    adapter.load_tensors(load_checkpoint(path))
    adapter.discard_head()
    return adapter


def cmd_distill(run: Run, args) -> int:
    dcfg = run.cfg.distill_config()
    wb = run.workbench(dcfg.teacher_set)
    adapter = _load_adapter(run, wb, dcfg.teacher_set, dcfg.seed) if dcfg.mode in ("s", "sc") else None
    name = run.cell_name()
    pre_path = run.ckpt(f"pretrain-{name}")
    pretrained = load_checkpoint(pre_path) if pre_path.exists() else None
    if pretrained is not None:
        log.info("resuming from %s", pre_path)
    student, reps = wb.distill(dcfg, adapter, pretrained,
                               on_pretrained=lambda s: save_checkpoint(pre_path, _tensors(s)))
    save_checkpoint(run.ckpt(name), _tensors(student))
    for k, r in reps.items():
        run.write_report(f"{k}-{name}", r.lines())
        log.info("%s %s: %.1fs", k, name, r.wall_clock)
    return 0


def cmd_eval(run: Run, args) -> int:
    dcfg = run.cfg.distill_config()
    wb = run.workbench("O")
    name = run.cell_name()
    path = run.require(run.ckpt(name), f"distill --mode {dcfg.mode} --teacher {dcfg.teacher_set} "
                                       f"--resolution {dcfg.resolution} --seed {dcfg.seed}")
    tensors = load_checkpoint(path)
    mimic = tensors["student.mimic.bias"].shape[0]
    student = build_student(dcfg.resolution, len(wb.public_ids), dcfg.seed, mimic_dim=mimic)
    student.load_tensors(tensors)
    rep, _ = wb.evaluate(student, dcfg.resolution, model_name(dcfg.resolution, dcfg.mode, dcfg.teacher_set),
                         dcfg.seed)
    run.write_report(f"eval-{name}", [rep.line()])
    (run.root / "reports" / f"roc-{name}.txt").write_text(rep.roc.to_text())
    print(rep.line())
    return 0


def cmd_bench(run: Run, args) -> int:
    c = run.cfg
    p = c["distill.resolution"]
    k = round(c["dataset.identities"] * c["dataset.public_fraction"])
    n_priv = round(c["dataset.identities"] * c["dataset.private_fraction"])
    student = build_student(p, k, c["run.seed"])
    teacher = build_toy_teacher(n_priv, c["teacher.d_t"], TEACHER_SEEDS["V"], "V", c["dataset.hr"])
    kw = dict(duration_s=c["bench.duration_s"], batch=c["bench.batch"], threads=c["bench.threads"])
    reports = [cost_report(student, p, f"student-{p}", **kw), cost_report(teacher, c["dataset.hr"], "teacherV", **kw)]
    ratio = reports[0].throughput_faces_per_sec / reports[1].throughput_faces_per_sec
    run.write_report("bench", [r.line() for r in reports] + [f"throughput_ratio={ratio:.2f}"])
    print(cost_table(reports))
    print(f"student/teacher throughput ratio: {ratio:.1f}x")
    return 0


def grid_cells(cfg: RunConfig) -> list[tuple[int, str, str]]:
    cells = []
    for p in cfg["grid.resolutions"]:
        for mode in cfg["grid.modes"]:
            for t in cfg["grid.teachers"]:
                if (mode == "c") == (t == "O"):
                    cells.append((p, mode, t))
    return cells


def cmd_grid(run: Run, args) -> int:
    """Every (resolution, mode, teacher, seed) cell in its own process, then a flat results table."""
    c = run.cfg
    config_path = run.root / "logs" / "grid.config"
    config_path.write_text(c.to_text())
    teachers = sorted({t for _, _, t in grid_cells(c)} - {"O"})
    variants = sorted({v for t in teachers for v in (("V", "C") if t == "E" else (t,))})
    base = [sys.executable, "-m", "bridgedistill.cli"]
    if not (c.data_dir / MANIFEST).exists():
        _child(base + ["gen-data", "--config", str(config_path)], run.root / "logs" / "gen-data.log")
    for v in variants:
        if not (run.teacher_dir / f"teacher{v}.bdck").exists():
            _child(base + ["train-teacher", "--config", str(config_path), "--teacher", v],
                   run.root / "logs" / f"train-teacher{v}.log")
    jobs = []
    for p, mode, t in grid_cells(c):
        for seed in c["grid.seeds"]:
            cell = f"{model_name(p, mode, t)}-seed{seed}"
            common = ["--config", str(config_path), "--seed", str(seed), "--mode", mode, "--teacher", t,
                      "--resolution", str(p), "--set", f"run.out={run.root / 'grid'}", "--set", f"run.name={cell}",
                      "--set", f"dataset.dir={c.data_dir}", "--set", f"teacher.dir={run.teacher_dir}"]
            steps = (["adapt"] if mode in ("s", "sc") else []) + ["distill", "eval"]
            jobs.append((cell, [base + [s] + common for s in steps]))

    def run_cell(job):
        cell, cmds = job
        logf = run.root / "grid" / cell / "logs" / "cell.log"
        logf.parent.mkdir(parents=True, exist_ok=True)
        for cmd in cmds:
            _child(cmd, logf)
        return (run.root / "grid" / cell / "reports" / f"eval-{cell}.txt").read_text().strip()

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        lines = list(pool.map(run_cell, jobs))
    table = run.write_report("grid", lines + _grid_summary(lines))
    print(table.read_text(), end="")
    return 0


def _grid_summary(lines: Sequence[str]) -> list[str]:
    by_model: dict[str, list[float]] = {}
    for line in lines:
        kv = dict(f.split("=", 1) for f in line.split())
        by_model.setdefault(kv["model"], []).append(float(kv["acc"]))
    return [f"# mean model={m} acc={np.mean(v):.4f} std={np.std(v):.4f} n={len(v)}" for m, v in by_model.items()]


def _child(cmd: list[str], logfile: Path) -> None:
    with open(logfile, "a") as fh:
        res = subprocess.run(cmd, stdout=fh, stderr=subprocess.STDOUT, env=os.environ.copy())
    if res.returncode != 0:
        raise RuntimeError(f"`{' '.join(cmd[2:4])}` failed (exit {res.returncode}); see {logfile}")


COMMANDS = {"gen-data": cmd_gen_data, "train-teacher": cmd_train_teacher, "adapt": cmd_adapt,
            "distill": cmd_distill, "eval": cmd_eval, "bench": cmd_bench, "grid": cmd_grid}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bridgedistill",
        description="Bridge distillation pipeline at desk scale.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="verbs: gen-data, train-teacher, adapt, distill, eval, bench, grid\n\n"
               "config keys (section.key = value):\n" + describe_keys())
    ap.add_argument("verb", choices=VERBS)
    ap.add_argument("--config", help="config file of 'section.key = value' lines")
    ap.add_argument("--seed", type=int, help="overrides run.seed")
    ap.add_argument("--jobs", type=int, default=1, help="parallel cell processes for grid")
    ap.add_argument("--ablation", action="store_true", help="adapt: also report the four adaptation cases")
    ap.add_argument("--mode", choices=("c", "s", "dc", "sc"), help="overrides distill.mode")
    ap.add_argument("--teacher", choices=("O", "V", "C", "E"), help="overrides distill.teacher")
    ap.add_argument("--resolution", type=int, help="overrides distill.resolution")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    return ap


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    for flag, key in (("seed", "run.seed"), ("mode", "distill.mode"), ("teacher", "distill.teacher"),
                      ("resolution", "distill.resolution")):
        val = getattr(args, flag)
        if val is not None:
            cfg[key] = str(val)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        cfg.distill_config()  # validate combinations before doing any work
        run = Run(cfg)
        handler = logging.FileHandler(run.root / "logs" / f"{args.verb}.log")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        log.handlers[:] = [handler, logging.StreamHandler(sys.stderr)]
        log.setLevel(logging.INFO)
        return COMMANDS[args.verb](run, args)
    except (ConfigError, MissingArtifact, ValueError, RuntimeError, KeyError, OSError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"bridgedistill {args.verb}: error: {msg}", file=sys.stderr)
        return 2 if isinstance(e, (ConfigError, MissingArtifact)) else 1


if __name__ == "__main__":
    sys.exit(main())
