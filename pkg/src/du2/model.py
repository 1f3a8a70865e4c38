"""End-to-end disparity pipeline: branches, fusion variants, refinement.

One forward pass takes the rectified pair, the dual-pixel half-images and the
rectification warp, and produces the four supervised outputs (dual-pixel map,
dual-camera map, unrefined fusion map, refined full-resolution map) plus the
fitted affine parameters. Fusion ablations select how (or whether) the
dual-pixel branch enters the volume stage; refinement ablations select the
guide features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, as_tensor, reshape
from .fusion import (
    AffineParams,
    DisparityFusion2d,
    VolumeFusionNet,
    WarpMap,
    fit_affine,
    resample_volume,
    unrefined_disparity,
    warp_dp_volume,
)
from .ops import sample_bilinear2d
from .refine import RefineInputs, RefineNet
from .volumes import (
    DcFeatureExtractor,
    DisparityGrid,
    DpConfidenceNet,
    build_dc_cost_volume,
    soft_argmax,
    to_confidence,
)

__all__ = ["FUSION_MODES", "PipelineConfig", "DisparityPipeline"]

FUSION_MODES = ("dc_only", "dp_dc_2d", "dp_dc_cost", "dp_dc_conf")


@dataclass(frozen=True)
class PipelineConfig:
    image_height: int = 64
    image_width: int = 80
    dp_ratio: int = 2
    feature_channels: int = 16
    dp_channels: int = 16
    fusion_channels: int = 8
    trunk_channels: int = 16
    guide_channels: int = 32
    fusion_mode: str = "dp_dc_conf"
    refine_mode: str = "rgb_plus_dp"
    validity_channel: bool = True
    gamma: float = 0.1
    temperature: float = 0.5
    leaky_slope: float = 0.2
    seed: int = 0
    dc_grid: tuple = (0.0, 1.0, 17)
    dp_grid: tuple = (-4.0, 0.5, 17)

    def __post_init__(self):
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")
        if self.image_height % 8 or self.image_width % 8:
            raise ValueError("image extents must be divisible by 8")

    def dc_disparity_grid(self) -> DisparityGrid:
        return DisparityGrid(*self.dc_grid)

    def dp_disparity_grid(self) -> DisparityGrid:
        return DisparityGrid(*self.dp_grid)


class DisparityPipeline:
    def __init__(self, config: PipelineConfig = PipelineConfig()):
        self.config = config
        rng = np.random.default_rng(config.seed)
        slope = config.leaky_slope
        self.dc_grid = config.dc_disparity_grid()
        self.dp_grid = config.dp_disparity_grid()
        self.uses_dp_volume = config.fusion_mode != "dc_only"

        self.dc_features = DcFeatureExtractor(config.feature_channels, slope, rng)
        self.dp_net = (
            DpConfidenceNet(self.dp_grid, config.dp_channels, config.dp_ratio, slope,
                            config.temperature, rng)
            if self.uses_dp_volume
            else None
        )
        if config.fusion_mode == "dp_dc_2d":
            self.fusion_2d = DisparityFusion2d(config.feature_channels, slope, rng)
            self.fusion_3d = None
        else:
            channels = {"dc_only": 1, "dp_dc_cost": 2, "dp_dc_conf": 2}[config.fusion_mode]
            if config.validity_channel and config.fusion_mode != "dc_only":
                channels += 1
            self.fusion_2d = None
            self.fusion_3d = VolumeFusionNet(channels, config.fusion_channels, slope,
                                             config.temperature, rng)
        self.refine = RefineNet(config.refine_mode, config.guide_channels,
                                config.trunk_channels, slope, rng=rng)

    # -- parameters -------------------------------------------------------

    def named_parameters(self) -> list:
        modules = [self.dc_features]
        if self.dp_net is not None:
            modules.append(self.dp_net)
        if self.fusion_2d is not None:
            modules.append(self.fusion_2d)
        if self.fusion_3d is not None:
            modules.append(self.fusion_3d)
        modules.append(self.refine)
        out = []
        seen = set()
        for module in modules:
            for name, tensor in module.named_parameters():
                if name in seen:
                    raise ValueError(f"duplicate parameter name {name}")
                seen.add(name)
                out.append((name, tensor))
        return out

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def state(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {sorted(missing)[:4]}...")
        for name, tensor in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.data.shape:
                raise ShapeError(
                    f"parameter {name}: checkpoint shape {value.shape} != model {tensor.data.shape}"
                )
            tensor.data[...] = value

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    # -- forward ----------------------------------------------------------

    def _check_inputs(self, left, right, dp_top, dp_bottom, warp):
        cfg = self.config
        expected = (3, cfg.image_height, cfg.image_width)
        for name, img in (("left", left), ("right", right)):
            if img.shape != expected:
                raise ShapeError(f"{name} image shape {img.shape}, expected {expected}")
        dp_expected = (1, cfg.image_height * cfg.dp_ratio, cfg.image_width * cfg.dp_ratio)
        for name, img in (("dp_top", dp_top), ("dp_bottom", dp_bottom)):
            if img.shape != dp_expected:
                raise ShapeError(f"{name} shape {img.shape}, expected {dp_expected}")
        if warp.shape != (2, cfg.image_height, cfg.image_width):
            raise ShapeError(f"warp shape {warp.shape}, expected (2, H, W)")

    def forward(self, left, right, dp_top, dp_bottom, warp) -> dict:
        cfg = self.config
        left = as_tensor(left)
        right = as_tensor(right)
        dp_top = as_tensor(dp_top)
        dp_bottom = as_tensor(dp_bottom)
        warp_map = warp if isinstance(warp, WarpMap) else WarpMap(np.asarray(warp))
        self._check_inputs(left, right, dp_top, dp_bottom, warp_map.coords)

        feat_l = self.dc_features(left)
        feat_r = self.dc_features(right)
        cost_dc = build_dc_cost_volume(feat_l, feat_r, self.dc_grid)
        c_dc = to_confidence(cost_dc, self.dc_grid, cfg.temperature)
        d_dc = soft_argmax(c_dc)

        outputs = {
            "d_dc": d_dc,
            "c_dc": c_dc,
            "cost_dc": cost_dc,
            "d_dp": None,
            "affine": None,
            "fused": None,
            "validity": None,
        }

        # warp coordinates at volume resolution: subsample then rescale by the
        # full-res -> volume ratio of the dual-pixel frame
        vol_coords = warp_map.downscaled(8, 8.0 * cfg.dp_ratio)

        if self.uses_dp_volume:
            c_dp, dp_scores = self.dp_net(dp_top, dp_bottom)
            d_dp = soft_argmax(c_dp)
            affine = fit_affine(d_dp, d_dc, cfg.gamma)
            outputs["d_dp"] = d_dp
            outputs["c_dp"] = c_dp
            outputs["affine"] = affine

        if cfg.fusion_mode == "dc_only":
            fused = self.fusion_3d([c_dc])
            d_unref = unrefined_disparity(fused)
            outputs["fused"] = fused
        elif cfg.fusion_mode == "dp_dc_conf":
            c_warp, validity = warp_dp_volume(c_dp, vol_coords, affine, self.dc_grid)
            channels = [c_dc, c_warp]
            if cfg.validity_channel:
                channels.append(validity)
            fused = self.fusion_3d(channels)
            d_unref = unrefined_disparity(fused)
            outputs["fused"] = fused
            outputs["validity"] = validity
        elif cfg.fusion_mode == "dp_dc_cost":
            cost_dp = -dp_scores  # implicit branch scores act as negative costs
            cost_warp = resample_volume(cost_dp, self.dp_grid, vol_coords, affine, self.dc_grid)
            channels = [cost_dc, cost_warp]
            if cfg.validity_channel:
                validity = warp_dp_volume(c_dp, vol_coords, affine, self.dc_grid)[1]
                channels.append(validity)
                outputs["validity"] = validity
            fused = self.fusion_3d(channels, grid=self.dc_grid)
            d_unref = unrefined_disparity(fused)
            outputs["fused"] = fused
        else:  # dp_dc_2d: fuse the two disparity maps directly
            mapped = affine.alpha + affine.beta * d_dp.values
            h, w = mapped.shape
            warped = sample_bilinear2d(reshape(mapped, (1, h, w)), as_tensor(vol_coords))
            d_unref = self.fusion_2d(d_dc.values, reshape(warped, warped.shape[1:]))

        outputs["d_unref"] = d_unref
        refined = self.refine(RefineInputs(d_unref, right, dp_top, dp_bottom, warp_map))
        outputs["d_ref"] = refined
        return outputs

    def predict_sample(self, sample) -> dict:
        """Forward pass on a SceneSample-like object."""
        return self.forward(sample.left, sample.right, sample.dp_top, sample.dp_bottom,
                            sample.warp)
