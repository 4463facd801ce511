"""Reverse-mode autodiff core: tensors, tape, ops, networks, optimizer."""

from . import ops
from .checkpoint import assign_parameters, load_checkpoint, save_checkpoint
from .nn import Conv2d, Unet, UnetSpec, build_unet, collect_parameters
from .optim import AdamState, adam_step, zero_grads
from .tensor import Tape, Tensor, active_tape, backward, set_debug_checks

__all__ = [
    "AdamState",
    "Conv2d",
    "Tape",
    "Tensor",
    "Unet",
    "UnetSpec",
    "active_tape",
    "adam_step",
    "assign_parameters",
    "backward",
    "build_unet",
    "collect_parameters",
    "load_checkpoint",
    "ops",
    "save_checkpoint",
    "set_debug_checks",
    "zero_grads",
]
