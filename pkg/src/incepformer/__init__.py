"""Desk-scale hierarchical multi-branch segmentation transformer.

A from-scratch U-shaped network (multi-scale inception patch merging,
factorized-attention encoder, gated intra-stage fusion, dual token/channel
transformer bridge, patch-expanding decoder) on a minimal reverse-mode
autodiff core, plus a deterministic training/eval harness.
"""

from .autodiff import (Variable, backward, grad_check, make_op, no_grad,
                       parameter)
from .config import ConfigError, RunConfig, load_config, parse_config, serialize_config
from .kernels import BACKEND_NAME, available_backends
from .model import (ModelConfig, SegModel, VARIANTS, build_model, load_weights,
                    parameter_count, read_checkpoint, save_checkpoint, shape_trace)
from .tensor import (DimensionError, IntegrityError, Tensor, make_rng,
                     set_strict_finite, trunc_normal)

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME", "ConfigError", "DimensionError", "IntegrityError",
    "ModelConfig", "RunConfig", "SegModel", "Tensor", "VARIANTS", "Variable",
    "available_backends", "backward", "build_model", "grad_check",
    "load_config", "load_weights", "make_op", "make_rng", "no_grad",
    "parameter", "parameter_count", "parse_config", "read_checkpoint",
    "save_checkpoint", "serialize_config", "set_strict_finite", "shape_trace",
    "trunc_normal", "__version__",
]
