"""Affine-ambiguity resolution and confidence-volume fusion.

The dual-pixel disparity relates to dual-camera disparity only up to an
unknown offset/scale pair, so the two soft-argmax maps are fit with a
Tikhonov-regularized least squares solve (closed form, differentiable), the
dual-pixel volume is resampled into dual-camera space through the
rectification warp and the fitted affine map, and a shallow 3D conv stack
fuses the aligned volumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    as_tensor,
    concat,
    narrow,
    reshape,
    select,
    stack,
    tensor_sum,
    transpose,
)
from .nn import Conv2d, Conv3d, ResidualBlock2d, collect_parameters
from .ops import leaky_relu, sample_bilinear2d, softmax_axis
from .volumes import EMPTY_ROW_EPS, ConfidenceVolume, DisparityGrid, DisparityMap, soft_argmax

__all__ = [
    "AffineParams",
    "WarpMap",
    "fit_affine",
    "resample_volume",
    "warp_dp_volume",
    "VolumeFusionNet",
    "DisparityFusion2d",
    "unrefined_disparity",
]


@dataclass
class AffineParams:
    """Offset/scale pair mapping dual-pixel disparity into dual-camera units."""

    alpha: Tensor
    beta: Tensor

    def as_floats(self) -> tuple:
        return float(self.alpha.data), float(self.beta.data)

    @staticmethod
    def identity() -> "AffineParams":
        return AffineParams(as_tensor(0.0), as_tensor(1.0))


@dataclass
class WarpMap:
    """Absolute source-pixel positions [2, H, W] as (x, y) channels."""

    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[0] != 2:
            raise ShapeError(f"warp map must be [2, H, W], got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("warp map must be finite everywhere")

    def downscaled(self, stride: int, ratio: float) -> np.ndarray:
        """Subsample to a coarser grid and rescale coordinates by ``ratio``."""
        return self.coords[:, ::stride, ::stride] / ratio


def fit_affine(d_dp, d_dc, gamma: float = 0.1) -> AffineParams:
    """Closed-form solve of the regularized affine fit between two maps.

    Minimizes sum((alpha + beta * d_dp - d_dc)^2) + gamma*(beta-1)^2 +
    gamma*alpha^2 through the 2x2 normal equations; differentiable in both
    disparity maps. gamma > 0 keeps the system positive definite even for a
    constant d_dp.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    x = d_dp.values if isinstance(d_dp, DisparityMap) else as_tensor(d_dp)
    y = d_dc.values if isinstance(d_dc, DisparityMap) else as_tensor(d_dc)
    if x.shape != y.shape:
        raise ShapeError(f"disparity map extents differ: {x.shape} vs {y.shape}")
    n = float(x.size)
    sx = tensor_sum(x)
    sy = tensor_sum(y)
    sxx = tensor_sum(x * x)
    sxy = tensor_sum(x * y)
    a11 = n + gamma
    a22 = sxx + gamma
    b1 = sy
    b2 = sxy + gamma
    det = a11 * a22 - sx * sx
    alpha = (a22 * b1 - sx * b2) / det
    beta = (a11 * b2 - sx * b1) / det
    return AffineParams(alpha, beta)


def resample_volume(values: Tensor, source_grid: DisparityGrid, coords: np.ndarray,
                    affine: AffineParams, target_grid: DisparityGrid) -> Tensor:
    """Zero-padded separable resampling of an [h, w, N] volume.

    Spatial positions come from ``coords`` (already at volume resolution);
    the hypothesis axis is read at (z - alpha) / beta located on the source
    grid by linear interpolation. Differentiable in the volume and in the
    affine parameters.
    """
    beta_val = float(affine.beta.data)
    assert beta_val != 0.0, "affine scale cannot be zero after a regularized fit"

    n_src = source_grid.count
    spatial = transpose(values, (2, 0, 1))  # hypothesis slots become channels
    sampled = sample_bilinear2d(spatial, as_tensor(coords))  # [N, H, W]
    _, out_h, out_w = sampled.shape
    zeros_slice = as_tensor(np.zeros((1, out_h, out_w)))

    slots = []
    for z in target_grid.values():
        u = (as_tensor(float(z)) - affine.alpha) / affine.beta
        t = (u - source_grid.first) / source_grid.step  # fractional source index
        i0 = int(np.floor(float(t.data)))
        frac = t - float(i0)
        v0 = narrow(sampled, 0, i0, 1) if 0 <= i0 < n_src else zeros_slice
        v1 = narrow(sampled, 0, i0 + 1, 1) if 0 <= i0 + 1 < n_src else zeros_slice
        slots.append(v0 * (1.0 - frac) + v1 * frac)
    return transpose(concat(slots, axis=0), (1, 2, 0))  # [H, W, Nt]


def warp_dp_volume(c_dp: ConfidenceVolume, coords: np.ndarray, affine: AffineParams,
                   target_grid: DisparityGrid):
    """Resample the dual-pixel confidence volume onto the dual-camera grid.

    Returns the renormalized volume and the pre-normalization per-pixel mass
    (validity, <= 1); rows with mass below 1e-6 fall back to uniform.
    Confidence-space sampling with zero padding cannot fabricate confidence:
    a fully out-of-range row has zero mass, never a spuriously sharp peak.
    """
    warped = resample_volume(c_dp.values, c_dp.grid, coords, affine, target_grid)
    out_h, out_w = warped.shape[:2]

    validity = tensor_sum(warped, axis=2)  # pre-normalization mass, <= 1
    valid = validity.data >= EMPTY_ROW_EPS
    ones = as_tensor(np.ones((out_h, out_w)))
    safe = select(valid, validity, ones)
    renormalized = warped / reshape(safe, (out_h, out_w, 1))
    uniform = as_tensor(np.full((out_h, out_w, target_grid.count), 1.0 / target_grid.count))
    values = select(valid[:, :, None], renormalized, uniform)
    return ConfidenceVolume(values, target_grid), validity


class VolumeFusionNet:
    """Three 3x3x3 convs with leaky ReLU, softmax over hypotheses at the end.

    Input channels: dual-camera volume, warped dual-pixel volume and (by
    default) the warp validity mask; ``dc_only`` builds the single-channel
    variant so the same aggregation runs in the ablation.
    """

    def __init__(self, in_channels=3, hidden=8, slope=0.2, temperature=0.5,
                 rng=None, name="fuse"):
        rng = rng or np.random.default_rng(0)
        self.slope = slope
        self.temperature = temperature
        self.in_channels = in_channels
        self.conv1 = Conv3d(f"{name}.conv1", in_channels, hidden, 3, rng=rng)
        self.conv2 = Conv3d(f"{name}.conv2", hidden, hidden, 3, rng=rng)
        self.conv3 = Conv3d(f"{name}.conv3", hidden, 1, 3, rng=rng)

    def __call__(self, channels: list, grid: DisparityGrid | None = None) -> ConfidenceVolume:
        """Fuse volumes/maps given as [H, W, N] volumes sharing one grid.

        Channels may be ConfidenceVolumes, raw [H, W, N] tensors (cost-space
        fusion), or [H, W] masks broadcast along the hypothesis axis.
        """
        grids = {(
            v.grid.first, v.grid.step, v.grid.count
        ) for v in channels if isinstance(v, ConfidenceVolume)}
        if len(grids) > 1:
            raise ShapeError(f"refusing to fuse volumes on different hypothesis grids: {grids}")
        if grids:
            found = next(v.grid for v in channels if isinstance(v, ConfidenceVolume))
            if grid is not None and (grid.first, grid.step, grid.count) != (
                found.first, found.step, found.count
            ):
                raise ShapeError("explicit grid disagrees with the input volumes")
            grid = found
        if grid is None:
            raise ShapeError("fusing raw volumes requires an explicit hypothesis grid")

        planes = []
        ref_shape = None
        for ch in channels:
            t = ch.values if isinstance(ch, ConfidenceVolume) else ch
            if t.ndim == 2:  # validity mask [H, W] -> broadcast over hypotheses
                h, w = t.shape
                t = reshape(t, (1, 1, h, w)) * as_tensor(np.ones((1, grid.count, 1, 1)))
            else:
                t = reshape(transpose(t, (2, 0, 1)), (1, grid.count) + t.shape[:2])
            if ref_shape is None:
                ref_shape = t.shape
            elif t.shape != ref_shape:
                raise ShapeError(f"fusion channel extents differ: {t.shape} vs {ref_shape}")
            planes.append(t)
        if len(planes) != self.in_channels:
            raise ShapeError(f"fusion net built for {self.in_channels} channels, got {len(planes)}")

        x = concat(planes, axis=0)  # [C, N, H, W]
        h = leaky_relu(self.conv1(x), self.slope)
        h = leaky_relu(self.conv2(h), self.slope)
        score = self.conv3(h)  # [1, N, H, W]
        score = transpose(reshape(score, score.shape[1:]), (1, 2, 0))  # [H, W, N]
        values = softmax_axis(score, axis=2, temperature=self.temperature)
        return ConfidenceVolume(values, grid)

    def named_parameters(self):
        return collect_parameters([self.conv1, self.conv2, self.conv3])


class DisparityFusion2d:
    """Ablation: fuse the two 2D disparity maps with a residual 2D net."""

    def __init__(self, channels=16, slope=0.2, rng=None, name="fuse2d"):
        rng = rng or np.random.default_rng(0)
        self.slope = slope
        self.stem = Conv2d(f"{name}.stem", 2, channels, 3, rng=rng)
        self.blocks = [ResidualBlock2d(f"{name}.block{i}", channels, slope, rng) for i in range(6)]
        self.head = Conv2d(f"{name}.head", channels, 1, 3, rng=rng)

    def __call__(self, d_dc: Tensor, d_dp_aligned: Tensor) -> DisparityMap:
        x = stack([d_dc, d_dp_aligned], axis=0)
        x = leaky_relu(self.stem(x), self.slope)
        for block in self.blocks:
            x = block(x)
        out = self.head(x)
        values = reshape(out, out.shape[1:])
        return DisparityMap(values, np.ones(values.shape))

    def named_parameters(self):
        return collect_parameters([self.stem] + self.blocks + [self.head])


def unrefined_disparity(fused: ConfidenceVolume) -> DisparityMap:
    """Soft-argmax read-out of the fused volume (1/8-resolution pixel units)."""
    return soft_argmax(fused)
