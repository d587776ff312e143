from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .network import Network, params_digest, xavier_uniform
from .spec import LayerSpec, ModelSpec, SpecError
from .zoo import (
    MIMIC_DIM,
    SUPPORTED_RESOLUTIONS,
    AdapterModule,
    StudentModel,
    TeacherHandle,
    adapter_spec,
    build_adapter,
    build_student,
    build_toy_teacher,
    ensemble_features,
    finetune_teacher_softmax,
    head_logits,
    head_spec,
    param_count,
    student_spec,
    teacher_features,
    teacher_spec,
    train_linear,
)

__all__ = [
    "MIMIC_DIM", "SUPPORTED_RESOLUTIONS", "AdapterModule", "CheckpointError", "LayerSpec",
    "ModelSpec", "Network", "SpecError", "StudentModel", "TeacherHandle", "adapter_spec",
    "build_adapter", "build_student", "build_toy_teacher", "ensemble_features",
    "finetune_teacher_softmax", "head_logits", "head_spec", "load_checkpoint", "param_count",
    "params_digest", "save_checkpoint", "student_spec", "teacher_features", "teacher_spec",
    "train_linear", "xavier_uniform",
]
