"""The two training stages and the teacher pretraining that stands in for an off-the-shelf model.

Stage 1 (cross-dataset distillation) trains the adaptation module on frozen
teacher features of public HR faces with ``C + lambda * D``. Stage 2
(resolution-adapted distillation) trains the student on degraded public
faces with ``C_hat + R``. Frozen quantities (teacher features, soft targets,
adapted features) are computed once per stage and reused across epochs.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .models import (
    AdapterModule,
    Network,
    StudentModel,
    TeacherHandle,
    build_adapter,
    finetune_teacher_softmax,
    head_logits,
    teacher_features,
)

MODES = ("c", "s", "dc", "sc")
TEACHER_SETS = ("O", "V", "C", "E")


class StageError(RuntimeError):
    """A stage was invoked without the artifacts of an earlier stage."""


@dataclass(frozen=True)
class DistillConfig:
    lam: float = 1.0
    temperature: float = 4.0
    mode: str = "sc"
    teacher_set: str = "V"
    resolution: int = 16
    lr: float = 0.001
    batch_size: int = 32
    epochs_pretrain: int = 2
    epochs_main: int = 8
    epochs_adapter: int = 30
    epochs_head: int = 30
    head_lr: float = 0.05
    adapter_lr: float = 0.05
    # "logits" divides logits by T before the softmax; "literal" divides the
    # softmax output by T (scales D by 1/T on unsoftened distributions)
    soft_targets: str = "logits"
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown supervision mode {self.mode!r}")
        if self.teacher_set not in TEACHER_SETS:
            raise ValueError(f"unknown teacher set {self.teacher_set!r}")
        if self.teacher_set == "O" and self.mode != "c":
            raise ValueError(f"mode {self.mode!r} needs a teacher; teacher set O only supports mode c")
        if self.soft_targets not in ("logits", "literal"):
            raise ValueError(f"unknown soft target convention {self.soft_targets!r}")

    def with_(self, **kw) -> "DistillConfig":
        return replace(self, **kw)


@dataclass
class EpochRecord:
    epoch: int
    C: float
    D_or_R: float
    total: float
    acc: float

    def line(self) -> str:
        return f"epoch={self.epoch} C={self.C:.6f} D_or_R={self.D_or_R:.6f} total={self.total:.6f} acc={self.acc:.4f}"


@dataclass
class TrainReport:
    stage: str
    records: list[EpochRecord] = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint: Optional[str] = None

    def lines(self) -> list[str]:
        return [r.line() for r in self.records]

    def losses(self) -> list[tuple[float, float, float]]:
        return [(r.C, r.D_or_R, r.total) for r in self.records]


# --------------------------------------------------------------------------
# teachers
# --------------------------------------------------------------------------

class TeacherEnsemble:
    """Several frozen teachers used jointly; features are concatenated in order."""

    def __init__(self, members: Sequence[TeacherHandle]):
        if not members:
            raise ValueError("empty teacher ensemble")
        self.members = list(members)
        self.name = "teacherE"
        self.feature_dim = sum(m.feature_dim for m in members)
        self.private_ids = tuple(sorted({i for m in members for i in m.private_ids}))
        self.ft_head: Optional[Network] = None
        self.public_ids: tuple[int, ...] = ()


Teacher = Union[TeacherHandle, TeacherEnsemble]


def features_of(teacher: Teacher, images: np.ndarray) -> np.ndarray:
    """``f_t(I)``; for an ensemble the member features concatenated."""
    if isinstance(teacher, TeacherEnsemble):
        return np.concatenate([teacher_features(m, images) for m in teacher.members], axis=1)
    return teacher_features(teacher, images)


def _check_finite(value: float, what: str, epoch: int) -> None:
    if not np.isfinite(value):
        raise FloatingPointError(f"{what} became non-finite at epoch {epoch}; lower the learning rate")


def pretrain_teacher(teacher: TeacherHandle, images: np.ndarray, identities: np.ndarray, epochs: int,
                     lr: float, batch_size: int = 32, seed: int = 0) -> TrainReport:
    """Train the whole teacher on its private split (emulates an off-the-shelf model)."""
    if set(np.unique(identities).tolist()) - set(teacher.private_ids):
        raise ValueError("teacher pretraining data contains identities outside its private set")
    classes = np.asarray(teacher.private_ids)
    labels = np.searchsorted(classes, identities)
    k = len(classes)
    targets = ad.one_hot(labels, k)
    rng = np.random.default_rng(seed)
    report = TrainReport("teacher")
    t0 = time.perf_counter()
    teacher.net.train()
    for ep in range(epochs):
        order = rng.permutation(len(images))
        tot = correct = 0.0
        for s in range(0, len(order) - 1, batch_size):
            idx = order[s:s + batch_size]
            if len(idx) < 2:
                continue
            with ad.Tape() as tape:
                logits = teacher.logits(Tensor(images[idx]))
                loss = ad.soft_cross_entropy(logits, targets[idx])
            ad.backward(loss, tape)
            ad.sgd_step(teacher.parameters(), lr)
            tot += loss.item() * len(idx)
            correct += float((logits.data.argmax(1) == labels[idx]).sum())
        _check_finite(tot, "teacher loss", ep)
        report.records.append(EpochRecord(ep, tot / len(images), 0.0, tot / len(images), correct / len(images)))
    teacher.net.eval()
    report.wall_clock = time.perf_counter() - t0
    return report


def finetune_softmax(teacher: Teacher, features: np.ndarray, identities: np.ndarray,
                     cfg: DistillConfig) -> Network:
    """Fit ``S_hat_t`` on frozen public features; an ensemble gets one joint head."""
    return finetune_teacher_softmax(teacher, features, identities, cfg.epochs_head, cfg.head_lr,
                                    cfg.batch_size, cfg.seed)


# --------------------------------------------------------------------------
# stage 1: cross-dataset distillation
# --------------------------------------------------------------------------

def make_soft_targets(teacher: Teacher, features: np.ndarray, T: float, convention: str = "logits") -> np.ndarray:
    """Softened scores of the fine-tuned teacher head for precomputed ``f_t(I)``.

    With the ``literal`` convention the plain softmax is returned; the 1/T
    factor is then applied to the loss in :func:`adapter_objective`.
    """
    if teacher.ft_head is None:
        raise StageError("fine-tuned teacher softmax missing: run finetune_softmax before distillation")
    logits = Tensor(head_logits(teacher.ft_head, features).astype(np.float64))
    return ad.softmax_t(logits, T if convention == "logits" else 1.0).data


@dataclass
class AdapterBatch:
    features: np.ndarray  # f_t(I), N x d_t
    labels: np.ndarray    # class indices into the public identities
    soft: np.ndarray      # softened teacher targets, N x K_public


def adapter_objective(adapter: AdapterModule, batch: AdapterBatch, lam: float, T: float,
                      convention: str = "logits") -> tuple[Tensor, Tensor, Tensor]:
    """``(C + lam * D, C, D)`` on one batch; both D sides are softened by T."""
    if batch.soft is None:
        raise StageError("soft targets missing: the teacher softmax has not been fine-tuned")
    _, logits = adapter.forward(Tensor(batch.features))
    onehot = ad.one_hot(batch.labels, adapter.num_classes, logits.dtype)
    C = ad.soft_cross_entropy(logits, onehot)
    if convention == "logits":
        D = ad.soft_cross_entropy(logits, batch.soft, T)
    else:
        D = ad.scale(ad.soft_cross_entropy(logits, batch.soft), 1.0 / T)
    total = ad.add(C, ad.scale(D, lam)) if lam != 0 else C
    return total, C, D


def train_adapter(teacher: Optional[Teacher], features: np.ndarray, identities: np.ndarray, cfg: DistillConfig,
                  public_ids: Optional[Sequence[int]] = None, eval_features: Optional[np.ndarray] = None,
                  eval_identities: Optional[np.ndarray] = None) -> tuple[AdapterModule, TrainReport]:
    """Minimize ``C + lam * D`` over public HR features by SGD.

    The returned adapter still carries its head so that case ablations can be
    scored; call :meth:`AdapterModule.discard_head` before handing it to the
    student stage. ``acc`` in the report is train accuracy, or accuracy on
    ``eval_features`` when given.
    """
    if len(features) == 0:
        raise ValueError("empty public set")
    classes = np.asarray(sorted(public_ids) if public_ids is not None else np.unique(identities))
    if teacher is not None:
        overlap = set(classes.tolist()) & set(teacher.private_ids)
        if overlap:
            raise ValueError(f"public identities overlap the private set: {sorted(overlap)[:5]}")
    labels = np.searchsorted(classes, identities)
    soft = None
    if cfg.lam > 0:
        if teacher is None:
            raise StageError("distillation weight > 0 needs a teacher with a fine-tuned softmax")
        soft = make_soft_targets(teacher, features, cfg.temperature, cfg.soft_targets).astype(features.dtype)
    adapter = build_adapter(features.shape[1], len(classes), cfg.seed + 1, features.dtype)
    rng = np.random.default_rng(cfg.seed + 2)
    report = TrainReport("adapter")
    t0 = time.perf_counter()
    n = len(features)
    for ep in range(cfg.epochs_adapter):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            b = AdapterBatch(features[idx], labels[idx], soft[idx] if soft is not None else np.zeros(0))
            with ad.Tape() as tape:
                if cfg.lam > 0:
                    total, C, D = adapter_objective(adapter, b, cfg.lam, cfg.temperature, cfg.soft_targets)
                else:
                    _, logits = adapter.forward(Tensor(b.features))
                    C = ad.soft_cross_entropy(logits, ad.one_hot(b.labels, len(classes), logits.dtype))
                    total, D = C, None
            ad.backward(total, tape)
            ad.sgd_step(adapter.parameters(), cfg.adapter_lr)
            sums += len(idx) * np.array([C.item(), D.item() if D is not None else 0.0, total.item()])
        _check_finite(sums[2], "adapter objective", ep)
        if eval_features is not None:
            acc = adapter_accuracy(adapter, eval_features, np.searchsorted(classes, eval_identities))
        else:
            acc = adapter_accuracy(adapter, features, labels)
        sums /= n
        report.records.append(EpochRecord(ep, sums[0], sums[1], sums[2], acc))
    report.wall_clock = time.perf_counter() - t0
    return adapter, report


def adapter_accuracy(adapter: AdapterModule, features: np.ndarray, labels: np.ndarray) -> float:
    _, logits = adapter.forward(Tensor(features))
    return float((logits.data.argmax(1) == labels).mean())


def adapted_features(adapter: AdapterModule, features: np.ndarray) -> np.ndarray:
    """``f_a(f_t(I))`` for precomputed teacher features."""
    return adapter.features(Tensor(features)).data


def train_mixed_classifier(teacher: Teacher, private_features: np.ndarray, private_ids: np.ndarray,
                           public_features: np.ndarray, public_ids: np.ndarray, cfg: DistillConfig,
                           test_features: np.ndarray, test_ids: np.ndarray) -> tuple[float, int]:
    """Mixed-dataset ablation: a classify-only adapter over private + public identities.

    Returns public-test accuracy (argmax over the joint label space) and the
    joint label-space size.
    """
    priv = set(np.unique(private_ids).tolist())
    pub = set(np.unique(public_ids).tolist())
    if priv & pub:
        raise ValueError("private subset and public set share identities")
    classes = np.asarray(sorted(priv | pub))
    feats = np.concatenate([private_features, public_features])
    ids = np.concatenate([private_ids, public_ids])
    adapter, _ = train_adapter(None, feats, ids, cfg.with_(lam=0.0), public_ids=classes)
    acc = adapter_accuracy(adapter, test_features, np.searchsorted(classes, test_ids))
    return acc, len(classes)


# --------------------------------------------------------------------------
# stage 2: resolution-adapted distillation
# --------------------------------------------------------------------------

@dataclass
class StudentData:
    """Degraded public faces, each paired with the label and regression target of its source."""

    images: np.ndarray                 # M x 1 x p x p
    labels: np.ndarray                 # M class indices
    targets: Optional[np.ndarray]      # M x mimic_dim, or None for mode c
    num_classes: int

    def __len__(self) -> int:
        return len(self.images)


def expand_degraded(lr: np.ndarray, labels: np.ndarray, hr_targets: Optional[np.ndarray],
                    num_classes: int) -> StudentData:
    """Flatten (N, count, 1, p, p) degraded sets so every I' carries its source's label/target."""
    n, count = lr.shape[:2]
    images = lr.reshape(n * count, *lr.shape[2:])
    lab = np.repeat(labels, count)
    tgt = None if hr_targets is None else np.repeat(hr_targets, count, axis=0)
    return StudentData(images, lab, tgt, num_classes)


def regression_targets(teacher: Optional[Teacher], adapter: Optional[AdapterModule], hr_images: np.ndarray,
                       mode: str, teacher_feats: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
    """Per-HR-image targets: adapted features (s, sc), raw teacher features (dc), none (c)."""
    if mode == "c":
        return None
    if teacher is None:
        raise StageError(f"mode {mode} needs a pretrained teacher")
    ft = features_of(teacher, hr_images) if teacher_feats is None else teacher_feats
    if mode == "dc":
        return ft
    if adapter is None:
        raise StageError(f"mode {mode} needs a trained adapter (run the adapt stage first)")
    return adapted_features(adapter, ft)


def student_objective(student: StudentModel, images: np.ndarray, labels: np.ndarray,
                      targets: Optional[np.ndarray], mode: str) -> tuple[Tensor, Optional[Tensor], Optional[Tensor]]:
    """``(total, C_hat, R)`` for a batch of degraded images; unused terms are None."""
    total, C, R, _ = _student_terms(student, images, labels, targets, mode)
    return total, C, R


def _student_terms(student, images, labels, targets, mode):
    if mode not in MODES:
        raise ValueError(f"unknown supervision mode {mode!r}")
    feats, logits = student.forward(Tensor(images))
    C = R = None
    if mode in ("c", "dc", "sc"):
        C = ad.soft_cross_entropy(logits, ad.one_hot(labels, student.num_classes, logits.dtype))
    if mode in ("s", "dc", "sc"):
        if targets is None:
            raise StageError(f"mode {mode} needs regression targets")
        if targets.shape[1] != student.mimic_dim:
            raise ValueError(f"student mimic dim {student.mimic_dim} != target dim {targets.shape[1]}")
        R = ad.sum_squared_error(feats, Tensor(targets.astype(feats.dtype, copy=False)))
    total = C if R is None else (R if C is None else ad.add(C, R))
    return total, C, R, logits


def _run_student_epochs(student: StudentModel, data: StudentData, mode: str, epochs: int, lr: float,
                        batch_size: int, rng: np.random.Generator, report: TrainReport, offset: int = 0) -> None:
    n = len(data)
    student.train()
    for ep in range(epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        correct = 0
        seen = 0
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            if len(idx) < 2:
                continue
            tgt = None if data.targets is None else data.targets[idx]
            with ad.Tape() as tape:
                total, C, R, logits = _student_terms(student, data.images[idx], data.labels[idx], tgt, mode)
            ad.backward(total, tape)
            ad.sgd_step(student.parameters(), lr)
            m = len(idx)
            sums += m * np.array([C.item() if C is not None else 0.0, R.item() if R is not None else 0.0,
                                  total.item()])
            correct += int((logits.data.argmax(1) == data.labels[idx]).sum())
            seen += m
        _check_finite(sums[2], f"student objective ({mode})", offset + ep)
        sums /= max(seen, 1)
        report.records.append(EpochRecord(offset + ep, sums[0], sums[1], sums[2], correct / max(seen, 1)))
    student.eval()


def pretrain_student(student: StudentModel, data: StudentData, cfg: DistillConfig) -> TrainReport:
    """Classification-only warm-up on degraded public faces."""
    report = TrainReport("pretrain")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed + 11)
    cls_only = StudentData(data.images, data.labels, None, data.num_classes)
    _run_student_epochs(student, cls_only, "c", cfg.epochs_pretrain, cfg.lr, cfg.batch_size, rng, report)
    report.wall_clock = time.perf_counter() - t0
    return report


def train_student(student: StudentModel, data: StudentData, cfg: DistillConfig) -> TrainReport:
    """Multi-task fine-tuning with the configured supervision mode.

    Teacher and adapter enter only through ``data.targets``; they are never
    touched here, and the student alone suffices for inference afterwards.
    """
    if cfg.mode != "c" and data.targets is None:
        raise StageError(f"mode {cfg.mode} requires regression targets from the teacher/adapter stages")
    report = TrainReport("student")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed + 13)
    _run_student_epochs(student, data, cfg.mode, cfg.epochs_main, cfg.lr, cfg.batch_size, rng, report)
    report.wall_clock = time.perf_counter() - t0
    return report


def config_dict(cfg: DistillConfig) -> dict:
    return asdict(cfg)
