"""Verification and identification metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .models import Network, StudentModel, head_logits, head_spec, train_linear

NORM_EPS = 1e-12


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    def tpr_at_fpr(self, target: float) -> float:
        """Largest TPR among operating points with FPR <= target."""
        ok = self.fpr <= target + 1e-12
        return float(self.tpr[ok].max()) if ok.any() else 0.0

    def to_text(self) -> str:
        return "".join(f"{f:.6f} {t:.6f}\n" for f, t in zip(self.fpr, self.tpr))


@dataclass
class EvalReport:
    task: str
    model: str
    seed: int
    metrics: dict = field(default_factory=dict)
    n: int = 0
    fingerprint: str = ""
    roc: Optional[RocCurve] = None

    def line(self) -> str:
        m = self.metrics
        return (f"model={self.model} seed={self.seed} acc={m.get('accuracy', float('nan')):.4f} "
                f"auc={m.get('auc', float('nan')):.4f} tpr@0.1={m.get('tpr@0.1', float('nan')):.4f}"
                + "".join(f" top{k[3:-4]}={v:.4f}" for k, v in m.items() if k.startswith("top") and k.endswith("_err")))


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        raise ValueError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def roc_curve(scores: Sequence[float], labels: Sequence[bool]) -> RocCurve:
    """ROC over thresholds at the unique scores (ties grouped), trapezoidal AUC.

    The curve starts at (0, 0) with an infinite threshold and ends at (1, 1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1 or len(scores) == 0:
        raise ValueError("roc_curve needs equal-length non-empty score and label lists")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_curve needs both positive and negative labels")
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    tp = np.cumsum(l)
    fp = np.cumsum(~l)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    thr = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thr, auc)


def best_threshold_accuracy(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Accuracy maximized over thresholds ``score >= thr`` (including accept-all/reject-all)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    n = len(s)
    n_neg = int((~l).sum())
    # accepting the top i+1 scores: correct = tp + (negatives below)
    tp = np.cumsum(l)
    fp = np.cumsum(~l)
    last = np.r_[np.nonzero(np.diff(s))[0], n - 1]
    correct = tp[last] + (n_neg - fp[last])
    cands = np.r_[n_neg, correct]
    thr = np.r_[np.inf, s[last]]
    best = int(np.argmax(cands))
    return float(cands[best] / n), float(thr[best])


def _l2n(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), NORM_EPS)


def verification_features(student: StudentModel, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """Concatenated, per-branch L2-normalized mimicking-layer and identity-layer outputs."""
    student.eval()
    out = []
    for i in range(0, len(images), batch):
        f, logits = student.forward(Tensor(images[i:i + batch].astype(student.net.params["student.mimic.bias"].dtype)))
        out.append(np.concatenate([_l2n(f.data), _l2n(logits.data)], axis=1))
    return np.concatenate(out, axis=0)


def verify_features(feat_a: np.ndarray, feat_b: np.ndarray, same: np.ndarray, model: str = "",
                    seed: int = 0) -> EvalReport:
    """Score pairs by cosine similarity and summarize accuracy, AUC and TPR@FPR=0.1."""
    if len(same) == 0:
        raise ValueError("empty pair list")
    a, b = _l2n(np.asarray(feat_a, np.float64)), _l2n(np.asarray(feat_b, np.float64))
    scores = np.sum(a * b, axis=1)
    same = np.asarray(same, dtype=bool)
    acc, thr = best_threshold_accuracy(scores, same)
    roc = roc_curve(scores, same)
    metrics = {"accuracy": acc, "threshold": thr, "auc": roc.auc, "tpr@0.1": roc.tpr_at_fpr(0.1)}
    return EvalReport("verify", model, seed, metrics, len(same), roc=roc)


def verify(student: StudentModel, pairs: Sequence, resolution: int, model: str = "", seed: int = 0) -> EvalReport:
    """Open-set verification on (sample_a, sample_b, same) pairs at ``resolution``."""
    if len(pairs) == 0:
        raise ValueError("empty pair list")
    uniq: dict[int, int] = {}
    imgs = []
    for a, b, _ in pairs:
        for s in (a, b):
            if id(s) not in uniq:
                if s.resolution != resolution:
                    raise ValueError(f"pair sample {s.sample_id} is {s.resolution}px, expected {resolution}px")
                uniq[id(s)] = len(imgs)
                imgs.append(s.image)
    feats = verification_features(student, np.stack(imgs))
    ia = [uniq[id(a)] for a, _, _ in pairs]
    ib = [uniq[id(b)] for _, b, _ in pairs]
    same = np.array([bool(s) for _, _, s in pairs])
    return verify_features(feats[ia], feats[ib], same, model, seed)


def topk_errors(logits: np.ndarray, labels: np.ndarray, k_list: Sequence[int] = (1, 5)) -> dict[int, float]:
    """Fraction of rows whose true label is not among the k highest scores.

    Ties at the k-th score are broken by lower class index first.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, kcls = logits.shape
    order = np.argsort(-logits, axis=1, kind="stable")
    rank = np.argmax(order == labels[:, None], axis=1)
    out = {}
    for k in k_list:
        if k > kcls:
            raise ValueError(f"k={k} exceeds the number of identities ({kcls})")
        out[k] = float(np.mean(rank >= k))
    return out


def topk_error(student: StudentModel, gallery: Sequence, probes: Sequence, k_list: Sequence[int] = (1, 5),
               epochs: int = 60, lr: float = 0.1, seed: int = 0, model: str = "") -> EvalReport:
    """Closed-set identification: fine-tune a new identity head on gallery features, test on probes.

    Only the head is trained; the student's lower layers stay frozen.
    """
    g_ids = np.array([s.identity for s in gallery])
    p_ids = np.array([s.identity for s in probes])
    classes = np.unique(g_ids)
    if not set(np.unique(p_ids).tolist()) <= set(classes.tolist()):
        raise ValueError("probe identities must be a subset of the gallery identities")
    if {s.sample_id for s in gallery} & {s.sample_id for s in probes}:
        raise ValueError("gallery and probe samples overlap")
    for k in k_list:
        if k > len(classes):
            raise ValueError(f"k={k} exceeds the number of gallery identities ({len(classes)})")
    student.eval()
    g_feat = _student_features(student, np.stack([s.image for s in gallery]))
    p_feat = _student_features(student, np.stack([s.image for s in probes]))
    head = Network(head_spec(g_feat.shape[1], len(classes)), seed, "probe_head", g_feat.dtype)
    train_linear(head, g_feat, np.searchsorted(classes, g_ids), len(classes), epochs, lr, 32, seed)
    errs = topk_errors(head_logits(head, p_feat), np.searchsorted(classes, p_ids), k_list)
    metrics = {f"top{k}_err": v for k, v in errs.items()}
    return EvalReport("identify", model, seed, metrics, len(probes))


def _student_features(student: StudentModel, images: np.ndarray, batch: int = 256) -> np.ndarray:
    dt = student.net.params["student.mimic.bias"].dtype
    return np.concatenate([student.features(Tensor(images[i:i + batch].astype(dt))).data
                           for i in range(0, len(images), batch)])


def run_ablation_grid(workbench, resolutions: Sequence[int], modes: Sequence[str], teachers: Sequence[str],
                      seeds: Sequence[int], identify: bool = True, **overrides) -> list[EvalReport]:
    """Run every valid (p, mode, teacher, seed) cell on one shared dataset.

    Mode ``c`` pairs only with teacher set ``O`` and every other mode only
    with a real teacher. ``workbench`` is a :class:`bridgedistill.pipeline.Workbench`.
    Reports come back in grid order, named ``S-p-x-t``.
    """
    out = []
    for p in resolutions:
        for mode in modes:
            for t in teachers:
                if (mode == "c") != (t == "O"):
                    continue
                for seed in seeds:
                    out.append(workbench.run_cell(p, mode, t, seed, identify=identify, **overrides).verify)
    return out


def results_table(reports: Sequence[EvalReport]) -> str:
    return "".join(r.line() + "\n" for r in reports)
