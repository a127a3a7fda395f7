from .checkpoint import (
    Checkpoint,
    CheckpointError,
    apply_checkpoint,
    load_checkpoint,
    load_model,
    restore_adam_state,
    save_checkpoint,
)
from .data import (
    AUTHENTIC,
    DataError,
    ManifestEntry,
    SampleRecord,
    augment,
    collate,
    derive_edge_gt,
    load_samples,
    make_sample,
    make_synthetic_samples,
    read_manifest,
    replace_image,
    write_manifest,
)
from .optim import AdamState, adam_step, init_adam_state, lr_at
from .training import EvalResult, TrainResult, build_model, effective_weights, evaluate, train, write_eval

__all__ = [
    "AUTHENTIC",
    "AdamState",
    "Checkpoint",
    "CheckpointError",
    "DataError",
    "EvalResult",
    "ManifestEntry",
    "SampleRecord",
    "TrainResult",
    "adam_step",
    "apply_checkpoint",
    "augment",
    "build_model",
    "collate",
    "derive_edge_gt",
    "effective_weights",
    "evaluate",
    "init_adam_state",
    "load_checkpoint",
    "load_model",
    "load_samples",
    "lr_at",
    "make_sample",
    "make_synthetic_samples",
    "read_manifest",
    "replace_image",
    "restore_adam_state",
    "save_checkpoint",
    "train",
    "write_eval",
    "write_manifest",
]
