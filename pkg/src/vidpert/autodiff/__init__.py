"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from . import functional
from .gradcheck import GradcheckReport, gradcheck
from .nn import Conv2d, Embedding, LayerNorm, Linear, Module
from .optim import AdamW, OptimizerState, adamw_step, cosine_lr
from .tensor import Tape, Tensor, active_tape, backward, no_grad, precision, use_tape

__all__ = [
    "AdamW",
    "Conv2d",
    "Embedding",
    "GradcheckReport",
    "LayerNorm",
    "Linear",
    "Module",
    "OptimizerState",
    "Tape",
    "Tensor",
    "active_tape",
    "adamw_step",
    "backward",
    "cosine_lr",
    "functional",
    "gradcheck",
    "no_grad",
    "precision",
    "use_tape",
]
