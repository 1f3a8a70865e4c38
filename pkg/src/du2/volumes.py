"""Feature pyramids, cost volumes and confidence volumes.

The dual-camera branch extracts 1/8-resolution features from each rectified
image and scores 17 integer disparity hypotheses with an L1 feature distance.
The dual-pixel branch predicts its 17-hypothesis volume implicitly from the
concatenated half-images, on a half-pixel grid covering [-4, 4].
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .autodiff import (
    ShapeError,
    Tensor,
    absolute,
    as_tensor,
    concat,
    narrow,
    pad,
    reshape,
    select,
    stack,
    tensor_sum,
    transpose,
)
from .nn import Conv2d, ResidualBlock2d, collect_parameters
from .ops import leaky_relu, softmax_axis

__all__ = [
    "DisparityGrid",
    "ConfidenceVolume",
    "DisparityMap",
    "dc_default_grid",
    "dp_default_grid",
    "DcFeatureExtractor",
    "DpConfidenceNet",
    "build_dc_cost_volume",
    "to_confidence",
    "soft_argmax",
    "dump_volume",
    "load_volume",
]

EMPTY_ROW_EPS = 1e-6


@dataclass(frozen=True)
class DisparityGrid:
    """Uniform disparity hypothesis grid: hypothesis i sits at first + i*step."""

    first: float
    step: float
    count: int

    def __post_init__(self):
        if self.step <= 0 or self.count < 1:
            raise ValueError("DisparityGrid needs step > 0 and count >= 1")

    def values(self) -> np.ndarray:
        return self.first + self.step * np.arange(self.count)

    @property
    def last(self) -> float:
        return self.first + self.step * (self.count - 1)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.first + self.last)


def dc_default_grid() -> DisparityGrid:
    return DisparityGrid(first=0.0, step=1.0, count=17)


def dp_default_grid() -> DisparityGrid:
    return DisparityGrid(first=-4.0, step=0.5, count=17)


@dataclass
class ConfidenceVolume:
    """Per-pixel probability over disparity hypotheses; values [H, W, N]."""

    values: Tensor
    grid: DisparityGrid

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] != self.grid.count:
            raise ShapeError(
                f"confidence volume shape {self.values.shape} does not match "
                f"grid count {self.grid.count}"
            )

    @property
    def spatial_shape(self):
        return self.values.shape[:2]


@dataclass
class DisparityMap:
    """Real-valued disparity with a paired confidence map in [0, 1]."""

    values: Tensor
    confidence: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.confidence.shape:
            raise ShapeError("disparity and confidence extents differ")


class DcFeatureExtractor:
    """Three stride-2 convs then six residual blocks; output 1/8 resolution."""

    def __init__(self, channels=16, slope=0.2, rng=None, name="dc_feat"):
        rng = rng or np.random.default_rng(0)
        self.slope = slope
        self.channels = channels
        self.stem = [
            Conv2d(f"{name}.stem0", 3, channels, 3, stride=2, rng=rng),
            Conv2d(f"{name}.stem1", channels, channels, 3, stride=2, rng=rng),
            Conv2d(f"{name}.stem2", channels, channels, 3, stride=2, rng=rng),
        ]
        self.blocks = [ResidualBlock2d(f"{name}.block{i}", channels, slope, rng) for i in range(6)]

    def __call__(self, image: Tensor) -> Tensor:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ShapeError(f"expected [3, H, W] image, got {image.shape}")
        _, h, w = image.shape
        if h % 8 or w % 8:
            raise ShapeError(f"image extents must be divisible by 8, got {h}x{w}")
        x = image
        for conv in self.stem:
            x = leaky_relu(conv(x), self.slope)
        for block in self.blocks:
            x = block(x)
        return x

    def named_parameters(self):
        return collect_parameters(self.stem + self.blocks)


class DpConfidenceNet:
    """Implicit dual-pixel volume: residual 2D net ending in one hypothesis channel per slot.

    The concatenated half-images enter at ``ratio`` times the network input
    resolution and are strided down to the 1/8 grid inside the stack.
    """

    def __init__(self, grid=None, channels=16, ratio=2, slope=0.2, temperature=0.5,
                 rng=None, name="dp_vol"):
        rng = rng or np.random.default_rng(0)
        self.grid = grid or dp_default_grid()
        self.slope = slope
        self.temperature = temperature
        self.ratio = ratio
        downs = int(round(np.log2(8 * ratio)))
        if 2 ** downs != 8 * ratio:
            raise ShapeError(f"dp ratio {ratio} does not give a power-of-two downsample")
        self.stem = Conv2d(f"{name}.stem", 2, channels, 3, stride=2, rng=rng)
        self.downs = [
            Conv2d(f"{name}.down{i}", channels, channels, 3, stride=2, rng=rng)
            for i in range(downs - 1)
        ]
        # blocks interleave with the remaining strided convs, extras at the tail
        self.blocks = [ResidualBlock2d(f"{name}.block{i}", channels, slope, rng) for i in range(6)]
        self.head = Conv2d(f"{name}.head", channels, self.grid.count, 3, rng=rng)

    def __call__(self, dp_top: Tensor, dp_bottom: Tensor):
        """Returns (confidence volume over the DP grid, raw score volume [H,W,N])."""
        if dp_top.shape != dp_bottom.shape:
            raise ShapeError("dual-pixel half-images must share a shape")
        if dp_top.ndim != 3 or dp_top.shape[0] != 1:
            raise ShapeError(f"expected [1, H, W] half-images, got {dp_top.shape}")
        total_down = 2 ** (1 + len(self.downs))
        _, h, w = dp_top.shape
        if h % total_down or w % total_down:
            raise ShapeError(
                f"dual-pixel extent {h}x{w} is not a multiple of the downsample factor {total_down}"
            )
        x = concat([dp_top, dp_bottom], axis=0)
        x = leaky_relu(self.stem(x), self.slope)
        blocks = list(self.blocks)
        for down in self.downs:
            x = blocks.pop(0)(x)
            x = leaky_relu(down(x), self.slope)
        for block in blocks:
            x = block(x)
        scores = self.head(x)  # [N, h/8r..., w/...]
        scores_hwn = transpose(scores, (1, 2, 0))
        values = softmax_axis(scores_hwn, axis=2, temperature=self.temperature)
        return ConfidenceVolume(values, self.grid), scores_hwn

    def named_parameters(self):
        return collect_parameters([self.stem] + self.downs + self.blocks + [self.head])


def build_dc_cost_volume(feat_left: Tensor, feat_right: Tensor, grid: DisparityGrid) -> Tensor:
    """L1 feature distance per disparity hypothesis; output [h, w, count].

    Positive disparity d matches right-image pixel x against left-image pixel
    x + d, so the left map is shifted toward the right map; out-of-range taps
    contribute zero features.
    """
    if feat_left.shape != feat_right.shape:
        raise ShapeError(f"feature shapes differ: {feat_left.shape} vs {feat_right.shape}")
    _, h, w = feat_left.shape
    offsets = grid.values()
    rounded = np.round(offsets)
    if not np.allclose(offsets, rounded, atol=1e-12):
        raise ShapeError("dual-camera grid must hold integer pixel offsets at feature scale")
    slices = []
    for d in rounded.astype(int):
        if d >= 0:
            keep = max(w - d, 0)
            if keep == 0:
                shifted = as_tensor(np.zeros(feat_left.shape))
            else:
                shifted = pad(narrow(feat_left, 2, d, keep), ((0, 0), (0, 0), (0, w - keep)))
        else:
            keep = max(w + d, 0)
            if keep == 0:
                shifted = as_tensor(np.zeros(feat_left.shape))
            else:
                shifted = pad(narrow(feat_left, 2, 0, keep), ((0, 0), (0, 0), (w - keep, 0)))
        cost = tensor_sum(absolute(feat_right - shifted), axis=0)
        slices.append(cost)
    return stack(slices, axis=2)


def to_confidence(cost: Tensor, grid: DisparityGrid, temperature: float = 0.5) -> ConfidenceVolume:
    """Softmax of the negative cost along the hypothesis axis."""
    if cost.ndim != 3 or cost.shape[2] != grid.count:
        raise ShapeError(f"cost shape {cost.shape} does not match grid count {grid.count}")
    values = softmax_axis(-cost, axis=2, temperature=temperature)
    return ConfidenceVolume(values, grid)


def soft_argmax(volume: ConfidenceVolume) -> DisparityMap:
    """Expected disparity under the per-pixel confidence distribution.

    Rows whose mass is (numerically) zero emit the grid midpoint and are
    flagged with confidence 0; other rows are renormalized defensively.
    """
    vals = volume.values
    h, w, n = vals.shape
    mass = vals.data.sum(axis=2)
    valid = mass >= EMPTY_ROW_EPS
    hyp = volume.grid.values().reshape(1, 1, n)
    total = tensor_sum(vals, axis=2)
    safe_total = select(valid, total, as_tensor(np.ones((h, w))))
    expectation = tensor_sum(vals * hyp, axis=2) / safe_total
    disparity = select(valid, expectation, as_tensor(np.full((h, w), volume.grid.midpoint)))
    with np.errstate(invalid="ignore"):
        peak = np.where(valid, vals.data.max(axis=2) / np.maximum(mass, EMPTY_ROW_EPS), 0.0)
    return DisparityMap(disparity, np.clip(peak, 0.0, 1.0))


def dump_volume(path, volume: ConfidenceVolume) -> None:
    """Debug dump: tensor checkpoint plus a one-line JSON grid sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        checkpoint.write_tensor(f, volume.values.data)
    sidecar = {"first": volume.grid.first, "step": volume.grid.step, "count": volume.grid.count}
    Path(str(path) + ".json").write_text(json.dumps(sidecar) + "\n")


def load_volume(path) -> ConfidenceVolume:
    path = Path(path)
    with open(path, "rb") as f:
        values = checkpoint.read_tensor(f)
    meta = json.loads(Path(str(path) + ".json").read_text())
    grid = DisparityGrid(meta["first"], meta["step"], int(meta["count"]))
    return ConfidenceVolume(Tensor(values), grid)
