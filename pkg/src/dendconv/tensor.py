"""NCHW tensor helpers and im2col-style patch extraction.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 with four axes
``(N, C, H, W)``. Patch matrices hold one receptive field per row, laid out
channel-major and then row-major inside each channel, so a ``(C_out, C_in, k, k)``
weight tensor reshaped to ``(C_out, C_in*k*k)`` lines up with the columns.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

_AXES = ("batch", "channels", "height", "width")


def as_tensor(x, name: str = "input") -> np.ndarray:
    """Validate ``x`` as a finite 4-D float64 tensor and return it."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise DimensionError(f"{name}: expected 4 axes (N, C, H, W), got shape {arr.shape}")
    for axis, size in zip(_AXES, arr.shape):
        if size < 1:
            raise DimensionError(f"{name}: {axis} axis must be >= 1, got {size}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name}: contains NaN or Inf")
    return arr


def output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


@dataclass(frozen=True)
class PatchGeometry:
    """Everything needed to map patch rows back onto the input grid."""

    input_shape: tuple[int, int, int, int]
    k: int
    stride: int
    padding: int

    def __post_init__(self):
        n, c, h, w = self.input_shape
        if self.k < 1:
            raise DimensionError(f"kernel size must be >= 1, got {self.k}")
        if self.stride < 1:
            raise DimensionError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise DimensionError(f"padding must be >= 0, got {self.padding}")
        if self.k > h + 2 * self.padding:
            raise DimensionError(
                f"height axis: kernel {self.k} exceeds padded height {h + 2 * self.padding}"
            )
        if self.k > w + 2 * self.padding:
            raise DimensionError(
                f"width axis: kernel {self.k} exceeds padded width {w + 2 * self.padding}"
            )

    @property
    def h_out(self) -> int:
        return output_size(self.input_shape[2], self.k, self.stride, self.padding)

    @property
    def w_out(self) -> int:
        return output_size(self.input_shape[3], self.k, self.stride, self.padding)

    @property
    def rows(self) -> int:
        return self.input_shape[0] * self.h_out * self.w_out

    @property
    def cols(self) -> int:
        return self.input_shape[1] * self.k * self.k


@dataclass(frozen=True)
class PatchMatrix:
    data: np.ndarray  # (rows, C*k*k)
    geometry: PatchGeometry

    def __post_init__(self):
        g = self.geometry
        if self.data.shape != (g.rows, g.cols):
            raise DimensionError(
                f"patch data shape {self.data.shape} does not match geometry ({g.rows}, {g.cols})"
            )


def extract_patches(x, k: int, stride: int = 1, padding: int = 0) -> PatchMatrix:
    x = as_tensor(x)
    geom = PatchGeometry(x.shape, k, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # (N, C, H', W', k, k) -> keep every stride-th window
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, : geom.h_out, : geom.w_out]
    rows = win.transpose(0, 2, 3, 1, 4, 5).reshape(geom.rows, geom.cols)
    return PatchMatrix(np.ascontiguousarray(rows), geom)


def fold_patches(patches: PatchMatrix) -> np.ndarray:
    """Overlap-add patch rows back onto an (unpadded) input-shaped tensor."""
    g = patches.geometry
    n, c, h, w = g.input_shape
    k, s, p = g.k, g.stride, g.padding
    ho, wo = g.h_out, g.w_out
    blocks = patches.data.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * p, w + 2 * p))
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + s * ho : s, j : j + s * wo : s] += blocks[:, :, i, j]
    return out[:, :, p : p + h, p : p + w]


def multiplicity_map(geometry: PatchGeometry) -> np.ndarray:
    """Number of receptive fields covering each input pixel."""
    ones = np.ones((geometry.rows, geometry.cols))
    return fold_patches(PatchMatrix(ones, geometry))
