"""Small dense autodiff toolkit used by the decoder (numpy + scipy.sparse only)."""

from .gradcheck import GradCheckReport, gradient_check, relative_error
from .losses import bce_with_logits, softmax_cross_entropy
from .params import (
    CheckpointError,
    ParamStore,
    adam_step,
    glorot,
    load_checkpoint,
    save_checkpoint,
)
from .tape import ShapeError, Tape, Tensor

__all__ = [
    "CheckpointError",
    "GradCheckReport",
    "ParamStore",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "bce_with_logits",
    "glorot",
    "gradient_check",
    "load_checkpoint",
    "relative_error",
    "save_checkpoint",
    "softmax_cross_entropy",
]
