"""Edge-aware disparity refinement guided by RGB and dual-pixel features.

The coarse disparity is bilinearly upsampled x8 (values rescaled to
full-resolution pixel units) and a residual is predicted from guide features.
Dual-pixel features are extracted from the raw, unwarped half-images and only
then resampled through the rectification warp; warping the images first is
available as the deliberately inferior ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, as_tensor, concat, reshape
from .fusion import WarpMap
from .nn import Conv2d, ResidualBlock2d, collect_parameters
from .ops import leaky_relu, sample_bilinear2d, upsample_coords
from .volumes import DisparityMap

__all__ = ["REFINE_MODES", "RefineInputs", "RefineNet", "refine_ablation_mode"]

REFINE_MODES = ("rgb_only", "dp_only", "dp_image_warp", "rgb_plus_dp")


@dataclass
class RefineInputs:
    d_unref: DisparityMap
    rgb_right: Tensor
    dp_top: Tensor
    dp_bottom: Tensor
    w_r: WarpMap


@dataclass(frozen=True)
class RefineModeConfig:
    """Channel split of the guide features for one ablation mode.

    Total guide channels stay fixed across modes so capacities match; the
    trunk consuming them is identical everywhere.
    """

    mode: str
    rgb_channels: int
    dp_channels: int
    warp_images_first: bool


def refine_ablation_mode(mode: str, guide_channels: int = 32) -> RefineModeConfig:
    if mode not in REFINE_MODES:
        raise ValueError(f"unknown refine mode {mode!r}, expected one of {REFINE_MODES}")
    half = guide_channels // 2
    if mode == "rgb_only":
        return RefineModeConfig(mode, guide_channels, 0, False)
    if mode == "dp_only":
        return RefineModeConfig(mode, 0, guide_channels, False)
    if mode == "dp_image_warp":
        return RefineModeConfig(mode, half, half, True)
    return RefineModeConfig(mode, half, half, False)


class _FeatureStack:
    """Two same-padded convs with leaky ReLU."""

    def __init__(self, name, in_channels, out_channels, slope, rng):
        self.slope = slope
        self.conv1 = Conv2d(f"{name}.conv1", in_channels, 8, 3, rng=rng)
        self.conv2 = Conv2d(f"{name}.conv2", 8, out_channels, 3, rng=rng)

    def __call__(self, x):
        h = leaky_relu(self.conv1(x), self.slope)
        return leaky_relu(self.conv2(h), self.slope)

    def named_parameters(self):
        return collect_parameters([self.conv1, self.conv2])

    def parameter_count(self):
        return self.conv1.parameter_count() + self.conv2.parameter_count()


class RefineNet:
    def __init__(self, mode="rgb_plus_dp", guide_channels=32, trunk_channels=16,
                 slope=0.2, upsample_factor=8, rng=None, name="refine"):
        rng = rng or np.random.default_rng(0)
        self.config = refine_ablation_mode(mode, guide_channels)
        self.slope = slope
        self.factor = upsample_factor
        self.rgb_stack = (
            _FeatureStack(f"{name}.rgb", 3, self.config.rgb_channels, slope, rng)
            if self.config.rgb_channels
            else None
        )
        self.dp_stack = (
            _FeatureStack(f"{name}.dp", 2, self.config.dp_channels, slope, rng)
            if self.config.dp_channels
            else None
        )
        self.trunk_in = Conv2d(f"{name}.trunk_in", guide_channels + 1, trunk_channels, 3, rng=rng)
        self.blocks = [
            ResidualBlock2d(f"{name}.block{i}", trunk_channels, slope, rng) for i in range(6)
        ]
        self.head = Conv2d(f"{name}.head", trunk_channels, 1, 3, rng=rng)

    def upsample(self, d_unref: DisparityMap, out_hw: tuple) -> Tensor:
        """Bilinear x-factor upsampling with values converted to full-res pixels."""
        low = d_unref.values
        coords = upsample_coords(out_hw, low.shape, clamp=True)
        up = sample_bilinear2d(reshape(low, (1,) + low.shape), as_tensor(coords))
        return up * float(self.factor)

    def __call__(self, inputs: RefineInputs) -> DisparityMap:
        rgb = inputs.rgb_right
        if rgb.ndim != 3 or rgb.shape[0] != 3:
            raise ShapeError(f"rgb_right must be [3, H, W], got {rgb.shape}")
        _, out_h, out_w = rgb.shape
        low_h, low_w = inputs.d_unref.values.shape
        if (low_h * self.factor, low_w * self.factor) != (out_h, out_w):
            raise ShapeError(
                f"coarse disparity {low_h}x{low_w} does not upsample x{self.factor} "
                f"to the image extent {out_h}x{out_w}"
            )
        if inputs.w_r.coords.shape[1:] != (out_h, out_w):
            raise ShapeError("warp map extent must match the full-resolution image")

        up = self.upsample(inputs.d_unref, (out_h, out_w))  # [1, H, W]

        guides = []
        if self.rgb_stack is not None:
            guides.append(self.rgb_stack(rgb))
        if self.dp_stack is not None:
            coords = as_tensor(inputs.w_r.coords)
            if self.config.warp_images_first:
                warped_images = sample_bilinear2d(
                    concat([inputs.dp_top, inputs.dp_bottom], axis=0), coords
                )
                guides.append(self.dp_stack(warped_images))
            else:
                feats = self.dp_stack(concat([inputs.dp_top, inputs.dp_bottom], axis=0))
                guides.append(sample_bilinear2d(feats, coords))

        x = concat(guides + [up], axis=0)
        x = leaky_relu(self.trunk_in(x), self.slope)
        for block in self.blocks:
            x = block(x)
        residual = self.head(x)
        values = reshape(up + residual, (out_h, out_w))
        return DisparityMap(values, np.ones((out_h, out_w)))

    def named_parameters(self):
        stacks = [s for s in (self.rgb_stack, self.dp_stack) if s is not None]
        return collect_parameters(stacks + [self.trunk_in] + self.blocks + [self.head])

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def dp_parameter_count(self) -> int:
        return self.dp_stack.parameter_count() if self.dp_stack is not None else 0

    def guide_channel_total(self) -> int:
        return self.config.rgb_channels + self.config.dp_channels
