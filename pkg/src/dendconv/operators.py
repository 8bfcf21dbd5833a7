"""Standard and dendritic convolution, forward and backward.

Dendritic convolution replaces every receptive-field element ``x`` by
``x * (1 + alpha * S)`` before the usual weighted sum, where ``S`` is the sum
of the receptive field (or of the element's own channel slice, depending on
``scope``). Writing the enhanced block as ``D = X + alpha * X * S`` gives the
output ``y = sum(W * D) + b``.

Both operators run on the same :class:`~dendconv.tensor.PatchMatrix`, so the
interaction term costs one row reduction and one multiply per element.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericRangeError, StateError
from .tensor import PatchGeometry, PatchMatrix, as_tensor, extract_patches, fold_patches


class Scope(str, enum.Enum):
    PER_CHANNEL = "per-channel"
    FULL_PATCH = "full-patch"


@dataclass
class ConvParams:
    weights: np.ndarray  # (C_out, C_in, k, k)
    bias: np.ndarray  # (C_out,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise DimensionError(f"weights must be (C_out, C_in, k, k), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"bias must have shape ({self.weights.shape[0]},), got {self.bias.shape}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NumericRangeError("conv params contain NaN or Inf")

    @property
    def k(self) -> int:
        return self.weights.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]


@dataclass
class DdcParams:
    base: ConvParams
    alpha: float = 0.1
    alpha_learnable: bool = False
    scope: Scope = Scope.PER_CHANNEL
    normalize_s: bool = False

    def __post_init__(self):
        self.scope = Scope(self.scope)
        self.alpha = float(self.alpha)
        if not np.isfinite(self.alpha):
            raise NumericRangeError(f"alpha must be finite, got {self.alpha}")


@dataclass
class OpCache:
    """Intermediates saved by a training-mode forward pass."""

    patches: PatchMatrix
    kind: str  # "conv" or "ddc"
    weights_shape: tuple
    s: np.ndarray | None = None  # (rows, groups) interaction sums
    d: np.ndarray | None = None  # enhanced patches, same shape as patches.data
    alpha: float | None = None
    scope: Scope | None = None
    normalize_s: bool = field(default=False)

    @property
    def geometry(self) -> PatchGeometry:
        return self.patches.geometry


def _groups(scope: Scope, channels: int) -> int:
    return channels if scope is Scope.PER_CHANNEL else 1


def _interact(rows: np.ndarray, alpha: float, scope: Scope, normalize_s: bool, channels: int):
    """Return ``(S, D)`` for a batch of flattened receptive fields."""
    g = _groups(scope, channels)
    grouped = rows.reshape(rows.shape[0], g, -1)
    s = grouped.sum(axis=2)
    if normalize_s:
        s = s / grouped.shape[2]
    d = (grouped * (1.0 + alpha * s)[:, :, None]).reshape(rows.shape)
    return s, d


def patch_interact(
    patch,
    alpha: float,
    scope: Scope | str = Scope.FULL_PATCH,
    normalize_s: bool = False,
    channels: int = 1,
) -> np.ndarray:
    """Enhance one receptive field: ``D = X + alpha * X * S``.

    ``patch`` is any array holding ``channels`` equally sized channel blocks
    in channel-major order; the result has the same shape. With
    ``scope="per-channel"`` each channel block uses its own sum.
    """
    x = np.asarray(patch, dtype=np.float64)
    if x.size == 0:
        raise DimensionError("patch must be nonempty")
    if x.size % channels:
        raise DimensionError(f"patch of {x.size} elements does not split into {channels} channels")
    _, d = _interact(x.reshape(1, -1), float(alpha), Scope(scope), normalize_s, channels)
    return d.reshape(x.shape)


def _check_channels(x: np.ndarray, params: ConvParams):
    if x.shape[1] != params.in_channels:
        raise DimensionError(
            f"channels axis: input has {x.shape[1]}, weights expect {params.in_channels}"
        )


def _linear_out(rows: np.ndarray, params: ConvParams, geom: PatchGeometry) -> np.ndarray:
    w2 = params.weights.reshape(params.out_channels, -1)
    out = rows @ w2.T + params.bias
    n = geom.input_shape[0]
    return out.reshape(n, geom.h_out, geom.w_out, -1).transpose(0, 3, 1, 2)


def _grad_out_rows(grad_out, cache: OpCache, out_channels: int) -> np.ndarray:
    g = cache.geometry
    expected = (g.input_shape[0], out_channels, g.h_out, g.w_out)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != expected:
        raise DimensionError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    return grad_out.transpose(0, 2, 3, 1).reshape(-1, out_channels)


def conv_forward(x, params: ConvParams, training: bool = False, name: str = "conv"):
    x = as_tensor(x)
    _check_channels(x, params)
    patches = extract_patches(x, params.k, params.stride, params.padding)
    with np.errstate(over="ignore", invalid="ignore"):
        out = _linear_out(patches.data, params, patches.geometry)
    if not np.all(np.isfinite(out)):
        raise NumericRangeError(f"{name}: non-finite output")
    cache = OpCache(patches, "conv", params.weights.shape) if training else None
    return out, cache


def conv_backward(grad_out, cache: OpCache | None, params: ConvParams, input_grad: bool = True):
    """Return ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is None if not requested."""
    if cache is None or cache.kind != "conv" or cache.weights_shape != params.weights.shape:
        raise StateError("conv_backward needs the cache from conv_forward(training=True)")
    g = _grad_out_rows(grad_out, cache, params.out_channels)
    w2 = params.weights.reshape(params.out_channels, -1)
    grad_w = (g.T @ cache.patches.data).reshape(params.weights.shape)
    grad_b = g.sum(axis=0)
    grad_x = fold_patches(PatchMatrix(g @ w2, cache.geometry)) if input_grad else None
    return grad_x, grad_w, grad_b


def ddc_forward(x, params: DdcParams, training: bool = False, name: str = "ddc"):
    base = params.base
    x = as_tensor(x)
    _check_channels(x, base)
    patches = extract_patches(x, base.k, base.stride, base.padding)
    with np.errstate(over="ignore", invalid="ignore"):  # reported below as NumericRangeError
        s, d = _interact(patches.data, params.alpha, params.scope, params.normalize_s, x.shape[1])
        out = _linear_out(d, base, patches.geometry)
    if not np.all(np.isfinite(out)):
        raise NumericRangeError(f"{name}: non-finite output (alpha={params.alpha})")
    cache = None
    if training:
        cache = OpCache(
            patches,
            "ddc",
            base.weights.shape,
            s=s,
            d=d,
            alpha=params.alpha,
            scope=params.scope,
            normalize_s=params.normalize_s,
        )
    return out, cache


def ddc_backward(grad_out, cache: OpCache | None, params: DdcParams, input_grad: bool = True):
    """Return ``(grad_input, grad_weights, grad_bias, grad_alpha)``.

    ``grad_alpha`` is ``None`` unless ``params.alpha_learnable``; ``grad_input``
    is ``None`` when ``input_grad`` is false. Per row and
    group ``G`` with scale ``c`` (1, or 1/|G| when S is normalized)::

        dy/dx_n = w_n (1 + alpha S) + alpha c sum_{m in G} w_m x_m
        dy/dalpha = sum_m w_m x_m S_G(m)
    """
    base = params.base
    if (
        cache is None
        or cache.kind != "ddc"
        or cache.weights_shape != base.weights.shape
        or cache.alpha != params.alpha
        or cache.scope != params.scope
        or cache.normalize_s != params.normalize_s
    ):
        raise StateError("ddc_backward needs the cache from ddc_forward(training=True) with the same params")
    g = _grad_out_rows(grad_out, cache, base.out_channels)
    x = cache.patches.data
    w2 = base.weights.reshape(base.out_channels, -1)

    grad_w = (g.T @ cache.d).reshape(base.weights.shape)
    grad_b = g.sum(axis=0)

    if not (input_grad or params.alpha_learnable):
        return None, grad_w, grad_b, None

    grad_d = g @ w2
    rows, groups = cache.s.shape
    gd = grad_d.reshape(rows, groups, -1)
    xg = x.reshape(rows, groups, -1)
    c = 1.0 / xg.shape[2] if cache.normalize_s else 1.0
    wx = np.einsum("rgi,rgi->rg", gd, xg)  # per-group sum of grad_d * x
    grad_alpha = float(np.sum(wx * cache.s)) if params.alpha_learnable else None
    if not input_grad:
        return None, grad_w, grad_b, grad_alpha

    gd *= (1.0 + params.alpha * cache.s)[:, :, None]
    gd += (params.alpha * c) * wx[:, :, None]
    grad_x = fold_patches(PatchMatrix(grad_d, cache.geometry))
    return grad_x, grad_w, grad_b, grad_alpha
