from .kernels import BACKEND_NAME, conv2d_backward, conv2d_forward
from .network import (
    ArchitectureMismatch,
    DualStreamNet,
    GradCheckReport,
    NetArchitecture,
    Params,
    ShapeMismatch,
    grad_check,
    init_params,
    load_checkpoint,
    save_checkpoint,
    softmax,
)

__all__ = [
    "BACKEND_NAME",
    "conv2d_forward",
    "conv2d_backward",
    "ArchitectureMismatch",
    "DualStreamNet",
    "GradCheckReport",
    "NetArchitecture",
    "Params",
    "ShapeMismatch",
    "grad_check",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "softmax",
]
