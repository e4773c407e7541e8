"""Minimal differentiable-computation substrate for the inpainting models."""

from .grid import Grid, backward, grad_enabled, no_grad
from . import ops
from .module import (
    Conv,
    ConvTranspose,
    InstanceNorm,
    LayerNorm,
    Linear,
    Module,
    ModuleList,
    he_normal,
)
from .optim import AdamState, adam_init, adam_step

__all__ = [
    "Grid", "backward", "no_grad", "grad_enabled", "ops",
    "Module", "ModuleList", "Conv", "ConvTranspose", "InstanceNorm",
    "LayerNorm", "Linear", "he_normal",
    "AdamState", "adam_init", "adam_step",
]
