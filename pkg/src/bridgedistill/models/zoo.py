"""Concrete architectures: toy teacher, adaptation module and the light-weight student."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .network import Network, params_digest
from .spec import LayerSpec, ModelSpec, SpecError

SUPPORTED_RESOLUTIONS = (96, 64, 32, 16)
MIMIC_DIM = 128
ADAPTER_HIDDEN = 512


# --------------------------------------------------------------------------
# specs
# --------------------------------------------------------------------------

def student_spec(num_classes: int, mimic_dim: int = MIMIC_DIM) -> ModelSpec:
    """Reference student: 10 convs alternating 3x3/1x1, 3 pools, 3 dense layers.

    Two additive skips join same-shape 3x3 outputs. Everything up to and
    including ``mimic`` is the lower part; ``identity`` is the upper part.
    """
    L = LayerSpec
    layers = (
        L("conv", "conv1", 16, 3, 1, 1, bn=True, relu=True),
        L("maxpool", "pool1", kernel=2, stride=2),
        L("conv", "conv2", 16, 1, bn=True, relu=True),
        L("conv", "conv3", 32, 3, 1, 1, bn=True, relu=True),
        L("conv", "conv4", 16, 1, bn=True, relu=True),
        L("conv", "conv5", 32, 3, 1, 1, skip=3, bn=True, relu=True),
        L("maxpool", "pool2", kernel=2, stride=2),
        L("conv", "conv6", 32, 1, bn=True, relu=True),
        L("conv", "conv7", 64, 3, 1, 1, bn=True, relu=True),
        L("conv", "conv8", 32, 1, bn=True, relu=True),
        L("conv", "conv9", 64, 3, 1, 1, skip=8, bn=True, relu=True),
        L("maxpool", "pool3", kernel=2, stride=2),
        L("conv", "conv10", 128, 1, bn=True, relu=True),
        L("gap", "gap"),
        L("fc", "fc1", 512, relu=True),
        L("fc", "mimic", mimic_dim),
        L("fc", "identity", num_classes),
    )
    return ModelSpec("student", 1, layers, feature_index=15,
                     meta={"num_classes": num_classes, "mimic_dim": mimic_dim})


def adapter_spec(in_dim: int, num_classes: int) -> ModelSpec:
    L = LayerSpec
    layers = (
        L("fc", "fc1", ADAPTER_HIDDEN, relu=True),
        L("fc", "fc2", MIMIC_DIM),
        L("fc", "head", num_classes),
    )
    return ModelSpec("adapter", in_dim, layers, feature_index=1, flat_input=True)


def teacher_spec(num_classes: int, feature_dim: int = 256, widths: Sequence[int] = (32, 48, 64),
                 hidden: int = 1024, hr: int = 64) -> ModelSpec:
    """Over-parameterized plain CNN for HR input; dense layers carry most weights."""
    L = LayerSpec
    c1, c2, c3 = widths
    layers = (
        L("conv", "conv1", c1, 3, 1, 1, bn=True, relu=True),
        L("maxpool", "pool1", kernel=2, stride=2),
        L("conv", "conv2", c2, 3, 1, 1, bn=True, relu=True),
        L("maxpool", "pool2", kernel=2, stride=2),
        L("conv", "conv3", c3, 3, 1, 1, bn=True, relu=True),
        L("maxpool", "pool3", kernel=2, stride=2),
        L("flatten", "flatten"),
        L("fc", "fc1", hidden, relu=True),
        L("fc", "feature", feature_dim, relu=True),
        L("fc", "softmax", num_classes),
    )
    return ModelSpec("teacher", 1, layers, feature_index=8, fixed_resolution=hr,
                     meta={"num_classes": num_classes, "feature_dim": feature_dim})


def head_spec(in_dim: int, num_classes: int, name: str = "head") -> ModelSpec:
    return ModelSpec(name, in_dim, (LayerSpec("fc", "fc", num_classes),), feature_index=0, flat_input=True)


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------

class StudentModel:
    """Student split at the mimicking layer into ``lower`` and ``upper`` parts."""

    def __init__(self, spec: ModelSpec, seed: int, input_res: int, dtype=np.float32):
        self.spec = spec
        self.net = Network(spec, seed, "student", dtype)
        self.input_res = input_res
        self.mimic_index = spec.feature_layer
        self.num_classes = spec.meta["num_classes"]
        self.mimic_dim = spec.meta["mimic_dim"]

    def features(self, x: Tensor) -> Tensor:
        """Lower part: image batch -> mimicking-layer features."""
        return self.net.run(x, 0, self.mimic_index + 1)[-1]

    def logits_from_features(self, f: Tensor) -> Tensor:
        return self.net.run(f, self.mimic_index + 1)[-1]

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        f = self.features(x)
        return f, self.logits_from_features(f)

    def parameters(self):
        return self.net.parameters()

    def lower_parameters(self):
        return [p for n, p in self.net.params.items() if not n.startswith("student.identity.")]

    def upper_parameters(self):
        return [p for n, p in self.net.params.items() if n.startswith("student.identity.")]

    def named_tensors(self):
        return self.net.named_tensors()

    def load_tensors(self, tensors):
        self.net.load_tensors(tensors)

    def param_count(self) -> int:
        return self.net.param_count()

    def train(self, flag: bool = True):
        self.net.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def digest(self) -> str:
        return params_digest(self.named_tensors())


class AdapterModule:
    """Two dense layers (512, 128) plus a public-identity softmax head."""

    def __init__(self, in_dim: int, num_classes: int, seed: int, dtype=np.float32):
        self.spec = adapter_spec(in_dim, num_classes)
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.net = Network(self.spec, seed, "adapter", dtype)
        self.head_discarded = False

    def features(self, ft: Tensor) -> Tensor:
        return self.net.run(ft, 0, 2)[-1]

    def forward(self, ft: Tensor) -> tuple[Tensor, Tensor]:
        if self.head_discarded:
            raise RuntimeError("adapter head was discarded after cross-dataset distillation")
        f = self.features(ft)
        return f, self.net.run(f, 2)[-1]

    def discard_head(self) -> None:
        for name in [n for n in self.net.params if n.startswith("adapter.head.")]:
            del self.net.params[name]
        self.head_discarded = True

    def parameters(self):
        return self.net.parameters()

    def named_tensors(self):
        return self.net.named_tensors()

    def load_tensors(self, tensors):
        self.net.load_tensors(tensors)

    def param_count(self) -> int:
        return self.net.param_count()

    def digest(self) -> str:
        return params_digest(self.named_tensors())


class TeacherHandle:
    """Frozen HR feature extractor with its original and fine-tuned softmax heads."""

    def __init__(self, spec: ModelSpec, seed: int, name: str = "teacher",
                 private_ids: Sequence[int] = (), dtype=np.float32):
        self.spec = spec
        self.name = name
        self.net = Network(spec, seed, name, dtype)
        self.feature_index = spec.feature_layer
        self.feature_dim = spec.meta["feature_dim"]
        self.hr = spec.fixed_resolution
        self.private_ids = tuple(int(i) for i in private_ids)
        self.ft_head: Optional[Network] = None
        self.public_ids: tuple[int, ...] = ()

    def backbone_parameters(self):
        return [p for n, p in self.net.params.items() if not n.startswith(f"{self.name}.softmax.")]

    def parameters(self):
        return self.net.parameters()

    def named_tensors(self) -> dict[str, Tensor]:
        out = dict(self.net.named_tensors())
        if self.ft_head is not None:
            out.update(self.ft_head.named_tensors())
        return out

    def load_tensors(self, tensors) -> None:
        self.net.load_tensors(tensors)
        ft_names = [n for n in tensors if n.startswith(f"{self.name}_ft.")]
        if ft_names:
            k = np.asarray(tensors[f"{self.name}_ft.fc.bias"]).shape[0]
            self.ft_head = Network(head_spec(self.feature_dim, k), 0, f"{self.name}_ft",
                                     self.net.params[f"{self.name}.feature.bias"].dtype)
            self.ft_head.load_tensors(tensors)

    def backbone_digest(self) -> str:
        return params_digest({n: t for n, t in self.net.named_tensors().items()
                              if not n.startswith(f"{self.name}.softmax.")})

    def param_count(self) -> int:
        return self.net.param_count()

    def logits(self, x: Tensor) -> Tensor:
        """Original private-identity scores (used while pretraining)."""
        return self.net(x)


# --------------------------------------------------------------------------
# builders and helpers
# --------------------------------------------------------------------------

def build_student(p: int, num_classes: int, seed: int, mimic_dim: int = MIMIC_DIM,
                  dtype=np.float32) -> StudentModel:
    if p not in SUPPORTED_RESOLUTIONS:
        raise SpecError(f"unsupported student resolution {p}; expected one of {SUPPORTED_RESOLUTIONS}")
    spec = student_spec(num_classes, mimic_dim)
    spec.shapes(p)
    return StudentModel(spec, seed, p, dtype)


def build_adapter(d_t: int, num_classes: int, seed: int, dtype=np.float32) -> AdapterModule:
    return AdapterModule(d_t, num_classes, seed, dtype)


TEACHER_VARIANTS = {
    # stand-ins for the two off-the-shelf teachers; different widths and seeds
    "V": {"widths": (32, 48, 64), "hidden": 1024},
    "C": {"widths": (24, 48, 64), "hidden": 1024},
}


def build_toy_teacher(num_private: int, d_t: int = 256, seed: int = 0, variant: str = "V",
                      hr: int = 64, private_ids: Sequence[int] = (), dtype=np.float32) -> TeacherHandle:
    cfg = TEACHER_VARIANTS[variant]
    spec = teacher_spec(num_private, d_t, cfg["widths"], cfg["hidden"], hr)
    return TeacherHandle(spec, seed, f"teacher{variant}", private_ids, dtype)


def _infer_batches(fn, x: np.ndarray, batch: int = 256) -> np.ndarray:
    outs = [fn(Tensor(x[i:i + batch])).data for i in range(0, len(x), batch)]
    return np.concatenate(outs, axis=0) if outs else np.zeros((0,))


def teacher_features(t: TeacherHandle, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """Backbone features ``f_t(I)`` in inference mode, no tape."""
    images = np.asarray(images, dtype=t.net.params[f"{t.name}.feature.bias"].dtype)
    if images.ndim != 4 or images.shape[2:] != (t.hr, t.hr):
        raise ValueError(f"teacher expects N x 1 x {t.hr} x {t.hr} input, got {images.shape}")
    was = t.net.training
    t.net.eval()
    try:
        return _infer_batches(lambda x: t.net.run(x, 0, t.feature_index + 1)[-1], images, batch)
    finally:
        t.net.train(was)


def ensemble_features(teachers: Sequence[TeacherHandle], images: np.ndarray) -> np.ndarray:
    """Per-teacher features concatenated in the declared order."""
    if not teachers:
        raise ValueError("ensemble_features: no teachers")
    return np.concatenate([teacher_features(t, images) for t in teachers], axis=1)


def finetune_teacher_softmax(t, features: np.ndarray, identities: np.ndarray,
                             epochs: int = 30, lr: float = 0.1, batch_size: int = 32,
                             seed: int = 0) -> Network:
    """Train a fresh public-identity softmax on frozen teacher features.

    ``identities`` are global identity ids; the head's classes are their
    sorted unique values. The backbone is never touched. ``t`` is a
    :class:`TeacherHandle` or anything with ``name``/``private_ids``.
    """
    identities = np.asarray(identities)
    public = np.unique(identities)
    overlap = set(public.tolist()) & set(t.private_ids)
    if overlap:
        raise ValueError(f"public identities overlap the teacher's private set: {sorted(overlap)[:5]}")
    labels = np.searchsorted(public, identities)
    k = len(public)
    head = Network(head_spec(features.shape[1], k), seed, f"{t.name}_ft", features.dtype)
    train_linear(head, features, labels, k, epochs, lr, batch_size, seed)
    t.ft_head = head
    t.public_ids = tuple(int(i) for i in public)
    return head


def train_linear(net: Network, x: np.ndarray, labels: np.ndarray, k: int, epochs: int, lr: float,
                 batch_size: int, seed: int) -> list[float]:
    """Softmax regression by SGD on fixed inputs; returns per-epoch mean loss."""
    rng = np.random.default_rng(seed)
    n = len(x)
    targets = ad.one_hot(labels, k, x.dtype)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            with ad.Tape() as tape:
                loss = ad.soft_cross_entropy(net(Tensor(x[idx])), targets[idx])
            ad.backward(loss, tape)
            ad.sgd_step(net.parameters(), lr)
            total += loss.item() * len(idx)
        history.append(total / n)
    return history


def head_logits(head: Network, features: np.ndarray) -> np.ndarray:
    return _infer_batches(head, np.asarray(features), 1024)


def param_count(model) -> int:
    """Trainable parameter count of a model or a spec."""
    if isinstance(model, ModelSpec):
        return model.param_count()
    return model.param_count()
