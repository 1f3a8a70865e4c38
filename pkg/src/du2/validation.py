"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_rgb_image",
    "check_dp_pair",
    "check_warp_map",
    "check_scene_sample",
]


def _finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def check_rgb_image(arr, name="image", height=None, width=None) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"{name} must be [3, H, W], got {arr.shape}")
    if height is not None and arr.shape[1:] != (height, width):
        raise ValueError(f"{name} extent {arr.shape[1:]} != expected {(height, width)}")
    if arr.shape[1] % 8 or arr.shape[2] % 8:
        raise ValueError(f"{name} extents must be divisible by 8, got {arr.shape[1:]}")
    _finite(name, arr)
    return arr


def check_dp_pair(top, bottom, name="dp", image_hw=None, ratio=2):
    top = np.asarray(top, dtype=np.float64)
    bottom = np.asarray(bottom, dtype=np.float64)
    for label, arr in ((f"{name}_top", top), (f"{name}_bottom", bottom)):
        if arr.ndim != 3 or arr.shape[0] != 1:
            raise ValueError(f"{label} must be [1, H, W], got {arr.shape}")
        _finite(label, arr)
    if top.shape != bottom.shape:
        raise ValueError(f"dual-pixel halves differ in shape: {top.shape} vs {bottom.shape}")
    if image_hw is not None:
        expected = (1, image_hw[0] * ratio, image_hw[1] * ratio)
        if top.shape != expected:
            raise ValueError(f"{name} shape {top.shape} != expected {expected}")
    return top, bottom


def check_warp_map(arr, name="warp", image_hw=None) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ValueError(f"{name} must be [2, H, W], got {arr.shape}")
    if image_hw is not None and arr.shape[1:] != tuple(image_hw):
        raise ValueError(f"{name} extent {arr.shape[1:]} != expected {tuple(image_hw)}")
    _finite(name, arr)
    return arr


def check_scene_sample(sample, height=None, width=None, ratio=2):
    """Validate the fields a forward pass consumes; returns the sample."""
    check_rgb_image(sample.right, "right", height, width)
    check_rgb_image(sample.left, "left", height, width)
    hw = sample.right.shape[1:]
    check_dp_pair(sample.dp_top, sample.dp_bottom, "dp", hw, ratio)
    check_warp_map(sample.warp, "warp", hw)
    return sample
