"""End-to-end stages over one generated dataset.

:class:`Workbench` owns a dataset and caches everything that is a pure
function of it (pretrained teachers, teacher features, degraded faces), so
grid cells differing only in mode, teacher set or seed reuse that work.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .datagen import DatasetConfig, DegradeConfig, FaceDataset, FaceSample, degrade, degrade_batch, \
    generate_dataset, verification_pairs
from .distill import (
    DistillConfig,
    StageError,
    StudentData,
    TeacherEnsemble,
    TrainReport,
    adapter_accuracy,
    expand_degraded,
    features_of,
    finetune_softmax,
    pretrain_student,
    pretrain_teacher,
    regression_targets,
    train_adapter,
    train_mixed_classifier,
    train_student,
)
from .autodiff import Tensor
from .evaluation import EvalReport, topk_error, verify
from .models import AdapterModule, StudentModel, TeacherHandle, build_student, build_toy_teacher, head_logits

TEACHER_SEEDS = {"V": 101, "C": 202}


@dataclass(frozen=True)
class PipelineConfig:
    dataset: DatasetConfig = DatasetConfig()
    degrade: DegradeConfig = DegradeConfig()
    distill: DistillConfig = DistillConfig()
    d_t: int = 256
    teacher_epochs: int = 8
    teacher_lr: float = 0.05
    n_pos: int = 100
    n_neg: int = 100
    gallery_per_identity: int = 28
    k_list: tuple[int, ...] = (1, 5)
    probe_head_epochs: int = 60


def model_name(p: int, mode: str, teacher_set: str) -> str:
    return f"S-{p}-{mode}-{teacher_set}"


@dataclass
class CellResult:
    name: str
    seed: int
    verify: EvalReport
    identify: Optional[EvalReport]
    student: StudentModel
    reports: dict[str, TrainReport] = field(default_factory=dict)


class Workbench:
    def __init__(self, cfg: PipelineConfig = PipelineConfig(), dataset: Optional[FaceDataset] = None):
        self.cfg = cfg
        self.ds = dataset if dataset is not None else generate_dataset(cfg.dataset)
        self._teachers: dict[str, TeacherHandle] = {}
        self._feats: dict[tuple[str, str], np.ndarray] = {}
        self._lr: dict[int, np.ndarray] = {}
        self._target: dict[int, list[FaceSample]] = {}
        self.public_ids = np.asarray(self.ds.splits["public"])
        self.teacher_reports: dict[str, TrainReport] = {}

    # -- data ---------------------------------------------------------
    def public(self, subset: str):
        return self.ds.arrays("public", subset)

    def degraded_public(self, p: int) -> np.ndarray:
        if p not in self._lr:
            x, ids, idx = self.public("train")
            self._lr[p] = degrade_batch(x, ids, idx, replace(self.cfg.degrade, p=p), self.cfg.dataset.seed)
        return self._lr[p]

    def target_lr(self, p: int) -> list[FaceSample]:
        """One deterministic degraded copy of every target-split sample."""
        if p not in self._target:
            dcfg = replace(self.cfg.degrade, p=p, count=1)
            self._target[p] = [degrade(s, dcfg, self.cfg.dataset.seed + 7)[0] for s in self.ds.select("target")]
        return self._target[p]

    def pairs(self, p: int):
        return verification_pairs(self.target_lr(p), self.cfg.n_pos, self.cfg.n_neg, self.cfg.dataset.seed)

    # -- teachers -----------------------------------------------------
    def teacher(self, variant: str) -> TeacherHandle:
        if variant not in self._teachers:
            x, ids, _ = self.ds.arrays("private", "train")
            t = build_toy_teacher(len(self.ds.splits["private"]), self.cfg.d_t, TEACHER_SEEDS[variant], variant,
                                  self.cfg.dataset.hr, self.ds.splits["private"])
            self.teacher_reports[variant] = pretrain_teacher(t, x, ids, self.cfg.teacher_epochs,
                                                             self.cfg.teacher_lr, seed=TEACHER_SEEDS[variant])
            self._teachers[variant] = t
        return self._teachers[variant]

    def add_teacher(self, variant: str, t: TeacherHandle) -> None:
        self._teachers[variant] = t

    def teacher_set(self, t: str):
        if t == "O":
            return None
        if t == "E":
            return TeacherEnsemble([self.teacher("V"), self.teacher("C")])
        return self.teacher(t)

    def features(self, t: str, subset: str) -> np.ndarray:
        key = (t, subset)
        if key not in self._feats:
            if t == "E":
                self._feats[key] = np.concatenate([self.features("V", subset), self.features("C", subset)], 1)
            else:
                self._feats[key] = features_of(self.teacher(t), self.public(subset)[0])
        return self._feats[key]

    def private_test_accuracy(self, variant: str) -> float:
        """Held-out accuracy of a pretrained teacher on its own private identities."""
        t = self.teacher(variant)
        x, ids, _ = self.ds.arrays("private", "test")
        t.net.eval()
        logits = np.concatenate([t.logits(Tensor(x[i:i + 256])).data for i in range(0, len(x), 256)])
        return float((logits.argmax(1) == np.searchsorted(np.asarray(t.private_ids), ids)).mean())

    # -- stage 1 ------------------------------------------------------
    def adapt(self, t: str, dcfg: DistillConfig) -> tuple[AdapterModule, TrainReport]:
        teacher = self.teacher_set(t)
        if teacher is None:
            raise StageError("teacher set O has no adaptation stage")
        _, ids, _ = self.public("train")
        feats = self.features(t, "train")
        if dcfg.lam > 0:
            finetune_softmax(teacher, feats, ids, dcfg)
        return train_adapter(teacher, feats, ids, dcfg, public_ids=self.public_ids)

    def adaptation_ablation(self, t: str, dcfg: DistillConfig) -> dict[str, float]:
        """Public-test accuracy of the four adaptation cases."""
        teacher = self.teacher_set(t)
        _, ids, _ = self.public("train")
        _, test_ids, _ = self.public("test")
        f_tr, f_te = self.features(t, "train"), self.features(t, "test")
        labels_te = np.searchsorted(self.public_ids, test_ids)
        head = finetune_softmax(teacher, f_tr, ids, dcfg)
        case1 = float((head_logits(head, f_te).argmax(1) == labels_te).mean())
        a2, _ = train_adapter(teacher, f_tr, ids, dcfg.with_(lam=0.0), public_ids=self.public_ids)
        a3, _ = train_adapter(teacher, f_tr, ids, dcfg, public_ids=self.public_ids)
        case2 = adapter_accuracy(a2, f_te, labels_te)
        case3 = adapter_accuracy(a3, f_te, labels_te)
        px, pids, _ = self.ds.arrays("private", "train")
        members = teacher.members if isinstance(teacher, TeacherEnsemble) else [teacher]
        pf = np.concatenate([features_of(m, px) for m in members], axis=1)
        case4, _ = train_mixed_classifier(teacher, pf, pids, f_tr, ids, dcfg, f_te, test_ids)
        return {"case1": case1, "case2": case2, "case3": case3, "case4": case4}

    # -- stage 2 ------------------------------------------------------
    def student_data(self, p: int, mode: str, t: str, adapter: Optional[AdapterModule]) -> StudentData:
        x, ids, _ = self.public("train")
        labels = np.searchsorted(self.public_ids, ids)
        targets = None
        if mode != "c":
            teacher = self.teacher_set(t)
            targets = regression_targets(teacher, adapter, x, mode, teacher_feats=self.features(t, "train"))
        return expand_degraded(self.degraded_public(p), labels, targets, len(self.public_ids))

    def distill(self, dcfg: DistillConfig, adapter: Optional[AdapterModule] = None,
                pretrained: Optional[dict] = None, on_pretrained=None) -> tuple[StudentModel, dict]:
        """Pretrain then train a student.

        ``pretrained`` holds student tensors saved after pretraining; when
        given, pretraining is skipped. ``on_pretrained(student)`` is called
        between the two phases (used to checkpoint).
        """
        p, mode, t = dcfg.resolution, dcfg.mode, dcfg.teacher_set
        data = self.student_data(p, mode, t, adapter)
        mimic = data.targets.shape[1] if mode == "dc" else 128
        student = build_student(p, len(self.public_ids), dcfg.seed, mimic_dim=mimic)
        reports = {}
        if pretrained is not None:
            student.load_tensors(pretrained)
        else:
            reports["pretrain"] = pretrain_student(student, data, dcfg)
            if on_pretrained is not None:
                on_pretrained(student)
        reports["student"] = train_student(student, data, dcfg)
        return student, reports

    # -- evaluation ---------------------------------------------------
    def evaluate(self, student: StudentModel, p: int, name: str, seed: int, identify: bool = True):
        rep = verify(student, self.pairs(p), p, name, seed)
        ident = None
        if identify:
            samples = self.target_lr(p)
            gallery = [s for s in samples if s.index < self.cfg.gallery_per_identity]
            probes = [s for s in samples if s.index >= self.cfg.gallery_per_identity]
            ident = topk_error(student, gallery, probes, self.cfg.k_list, self.cfg.probe_head_epochs,
                               seed=seed, model=name)
            rep.metrics.update(ident.metrics)
        return rep, ident

    def run_cell(self, p: int, mode: str, t: str, seed: int, identify: bool = True, **overrides) -> CellResult:
        dcfg = self.cfg.distill.with_(resolution=p, mode=mode, teacher_set=t, seed=seed, **overrides)
        reports: dict[str, TrainReport] = {}
        adapter = None
        if mode in ("s", "sc"):
            adapter, reports["adapter"] = self.adapt(t, dcfg)
            adapter.discard_head()
        student, rep = self.distill(dcfg, adapter)
        reports.update(rep)
        name = model_name(p, mode, t)
        v, ident = self.evaluate(student, p, name, seed, identify)
        return CellResult(name, seed, v, ident, student, reports)
