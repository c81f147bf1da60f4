"""Reverse-mode tape, SeLU MLPs, and optimizers."""

from . import tape
from .mlp import (
    MLPSpec,
    ParamVector,
    init_mlp,
    mlp_forward,
    mlp_input_jacobian,
    mlp_input_jvp,
    mlp_params_from,
    mlp_segments,
)
from .optim import AdamState, adam_step, lr_schedule
from .tape import Node, constant, grad, leaf

__all__ = [
    "tape",
    "Node",
    "leaf",
    "constant",
    "grad",
    "MLPSpec",
    "ParamVector",
    "init_mlp",
    "mlp_forward",
    "mlp_input_jacobian",
    "mlp_input_jvp",
    "mlp_segments",
    "mlp_params_from",
    "AdamState",
    "adam_step",
    "lr_schedule",
]
