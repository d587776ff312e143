"""Run configuration: line-based ``section.key = value`` files.

Every key has a documented default (see :data:`SCHEMA` or ``bridgedistill
--help``). Blank lines and ``#`` comments are ignored; unknown keys and
malformed values are errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .datagen import DatasetConfig, DegradeConfig
from .distill import DistillConfig
from .pipeline import PipelineConfig


class ConfigError(ValueError):
    pass


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(",", " ").split())


def _strs(s: str) -> tuple[str, ...]:
    return tuple(s.replace(",", " ").split())


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    doc: str


SCHEMA: tuple[Key, ...] = (
    Key("run.name", str, "default", "run name; outputs go to <run.out>/<run.name>"),
    Key("run.out", str, "out", "output root directory"),
    Key("run.seed", int, 0, "training seed for adapter, student and evaluation heads"),
    Key("dataset.dir", str, "", "dataset directory (empty: <run.out>/<run.name>/data)"),
    Key("dataset.identities", int, 60, "number of synthetic identities"),
    Key("dataset.private_fraction", float, 20 / 60, "share of identities in the teacher's private split"),
    Key("dataset.public_fraction", float, 30 / 60, "share of identities in the public bridge split"),
    Key("dataset.target_fraction", float, 10 / 60, "share of identities held out for evaluation"),
    Key("dataset.samples_per_identity", int, 40, "HR samples rendered per identity"),
    Key("dataset.hr", int, 64, "HR image side in pixels"),
    Key("dataset.train_fraction", float, 0.8, "per-identity share of samples used for training"),
    Key("dataset.margin", float, 2.0, "minimum structural distance between identities"),
    Key("dataset.seed", int, 0, "seed of the generated data"),
    Key("degrade.count", int, 4, "degraded copies per HR image"),
    Key("degrade.jitter_px", float, 3.0, "maximum translation jitter in HR pixels"),
    Key("degrade.blur_min", float, 0.0, "lower bound of the LR blur sigma"),
    Key("degrade.blur_max", float, 0.8, "upper bound of the LR blur sigma"),
    Key("degrade.gain_min", float, 0.7, "lower bound of the illumination gain"),
    Key("degrade.gain_max", float, 1.3, "upper bound of the illumination gain"),
    Key("teacher.dir", str, "", "teacher checkpoint directory (empty: <run.out>/<run.name>/checkpoints)"),
    Key("teacher.d_t", int, 256, "teacher feature dimension"),
    Key("teacher.epochs", int, 8, "teacher pretraining epochs on the private split"),
    Key("teacher.lr", float, 0.05, "teacher pretraining learning rate"),
    Key("distill.lam", float, 1.0, "weight of the soft-target term in the adapter objective"),
    Key("distill.temperature", float, 4.0, "softening temperature"),
    Key("distill.mode", str, "sc", "student supervision mode: c, s, dc or sc"),
    Key("distill.teacher", str, "V", "teacher set: O, V, C or E"),
    Key("distill.resolution", int, 16, "student input resolution: 16, 32, 64 or 96"),
    Key("distill.lr", float, 0.001, "student learning rate"),
    Key("distill.batch_size", int, 32, "minibatch size of every SGD stage"),
    Key("distill.epochs_pretrain", int, 2, "student classification-only pretraining epochs"),
    Key("distill.epochs_main", int, 8, "student multi-task epochs"),
    Key("distill.epochs_adapter", int, 30, "adapter epochs"),
    Key("distill.epochs_head", int, 30, "epochs of the fine-tuned teacher softmax"),
    Key("distill.head_lr", float, 0.05, "learning rate of the fine-tuned teacher softmax"),
    Key("distill.adapter_lr", float, 0.05, "adapter learning rate"),
    Key("distill.soft_targets", str, "logits", "temperature placement: logits or literal"),
    Key("eval.n_pos", int, 100, "positive verification pairs"),
    Key("eval.n_neg", int, 100, "negative verification pairs"),
    Key("eval.k_list", _ints, (1, 5), "ranks reported by identification"),
    Key("eval.gallery_per_identity", int, 28, "target samples per identity used as gallery"),
    Key("eval.probe_head_epochs", int, 60, "epochs of the identification head"),
    Key("bench.duration_s", float, 2.0, "measured seconds per throughput run"),
    Key("bench.batch", int, 32, "throughput batch size"),
    Key("bench.threads", int, 1, "throughput worker threads"),
    Key("grid.resolutions", _ints, (16, 32), "grid resolutions"),
    Key("grid.modes", _strs, ("c", "dc", "sc"), "grid supervision modes"),
    Key("grid.teachers", _strs, ("O", "V"), "grid teacher sets; mode c pairs with O only"),
    Key("grid.seeds", _ints, (0, 1, 2, 3, 4), "grid seeds"),
)

_BY_NAME = {k.name: k for k in SCHEMA}


class RunConfig:
    def __init__(self, values: dict[str, Any] | None = None):
        self.values = {k.name: k.default for k in SCHEMA}
        for name, v in (values or {}).items():
            self[name] = v

    def __getitem__(self, name: str) -> Any:
        if name not in _BY_NAME:
            raise ConfigError(f"unknown config key {name!r}")
        return self.values[name]

    def __setitem__(self, name: str, value: Any) -> None:
        if name not in _BY_NAME:
            raise ConfigError(f"unknown config key {name!r}")
        key = _BY_NAME[name]
        if isinstance(value, str):
            try:
                value = key.parse(value)
            except ValueError as e:
                raise ConfigError(f"{name}: cannot parse {value!r} ({e})") from None
        self.values[name] = value

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected 'section.key = value'")
            name, value = (s.strip() for s in line.split("=", 1))
            try:
                cfg[name] = value
            except ConfigError as e:
                raise ConfigError(f"{source}:{n}: {e}") from None
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.parse(Path(path).read_text(), str(path))

    def to_text(self) -> str:
        out = []
        for k in SCHEMA:
            v = self.values[k.name]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out.append(f"{k.name} = {v}")
        return "\n".join(out) + "\n"

    # -- derived paths and configs ---------------------------------------
    @property
    def run_dir(self) -> Path:
        return Path(self["run.out"]) / self["run.name"]

    @property
    def data_dir(self) -> Path:
        return Path(self["dataset.dir"]) if self["dataset.dir"] else self.run_dir / "data"

    def dataset_config(self) -> DatasetConfig:
        fr = (self["dataset.private_fraction"], self["dataset.public_fraction"], self["dataset.target_fraction"])
        return DatasetConfig(self["dataset.identities"], fr, self["dataset.samples_per_identity"], self["dataset.hr"],
                             self["dataset.train_fraction"], self["dataset.margin"], self["dataset.seed"])

    def degrade_config(self) -> DegradeConfig:
        return DegradeConfig(self["degrade.count"], self["degrade.jitter_px"],
                             (self["degrade.blur_min"], self["degrade.blur_max"]),
                             (self["degrade.gain_min"], self["degrade.gain_max"]), self["distill.resolution"])

    def distill_config(self) -> DistillConfig:
        return DistillConfig(
            lam=self["distill.lam"], temperature=self["distill.temperature"], mode=self["distill.mode"],
            teacher_set=self["distill.teacher"], resolution=self["distill.resolution"], lr=self["distill.lr"],
            batch_size=self["distill.batch_size"], epochs_pretrain=self["distill.epochs_pretrain"],
            epochs_main=self["distill.epochs_main"], epochs_adapter=self["distill.epochs_adapter"],
            epochs_head=self["distill.epochs_head"], head_lr=self["distill.head_lr"],
            adapter_lr=self["distill.adapter_lr"], soft_targets=self["distill.soft_targets"], seed=self["run.seed"])

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(self.dataset_config(), self.degrade_config(), self.distill_config(),
                              d_t=self["teacher.d_t"], teacher_epochs=self["teacher.epochs"],
                              teacher_lr=self["teacher.lr"], n_pos=self["eval.n_pos"], n_neg=self["eval.n_neg"],
                              gallery_per_identity=self["eval.gallery_per_identity"], k_list=self["eval.k_list"],
                              probe_head_epochs=self["eval.probe_head_epochs"])


def describe_keys() -> str:
    """One line per key with its default, for ``--help``."""
    width = max(len(k.name) for k in SCHEMA)
    lines = []
    for k in SCHEMA:
        d = ",".join(map(str, k.default)) if isinstance(k.default, tuple) else k.default
        if isinstance(d, float):
            d = f"{d:.6g}"
        lines.append(f"  {k.name:<{width}}  {k.doc} (default: {d})")
    return "\n".join(lines)
