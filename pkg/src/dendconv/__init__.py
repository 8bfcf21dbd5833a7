"""Dendritic convolution: operators, a small training stack, image noise and metrics."""

from .errors import BuildError, DimensionError, InputError, NumericRangeError, StateError
from .operators import (
    ConvParams,
    DdcParams,
    Scope,
    conv_backward,
    conv_forward,
    ddc_backward,
    ddc_forward,
    patch_interact,
)
from .tensor import PatchMatrix, extract_patches, fold_patches

__version__ = "0.1.0"

__all__ = [
    "BuildError",
    "ConvParams",
    "DdcParams",
    "DimensionError",
    "InputError",
    "NumericRangeError",
    "PatchMatrix",
    "Scope",
    "StateError",
    "conv_backward",
    "conv_forward",
    "ddc_backward",
    "ddc_forward",
    "extract_patches",
    "fold_patches",
    "patch_interact",
]
