"""Desk-scale dual-camera + dual-pixel stereo depth fusion."""

from .autodiff import NumericError, ShapeError, Tensor
from .estimator import DualPixelStereoRegressor
from .fusion import AffineParams, WarpMap, fit_affine, warp_dp_volume
from .losses import LossWeights, eval_affine_fit, eval_metrics, huber, total_loss, weighted_loss
from .model import DisparityPipeline, PipelineConfig
from .plane_sweep import (
    BilateralParams,
    CameraView,
    consistency_confidence,
    inverse_depth_planes,
    occlusion_confidence,
    plane_sweep_depth,
)
from .scenes import MultiViewConfig, SceneConfig, SceneSample, generate_scene, make_dataset
from .volumes import (
    ConfidenceVolume,
    DisparityGrid,
    DisparityMap,
    build_dc_cost_volume,
    soft_argmax,
    to_confidence,
)

__version__ = "0.1.0"

__all__ = [
    "AffineParams",
    "BilateralParams",
    "CameraView",
    "ConfidenceVolume",
    "DisparityGrid",
    "DisparityMap",
    "DisparityPipeline",
    "DualPixelStereoRegressor",
    "LossWeights",
    "MultiViewConfig",
    "NumericError",
    "PipelineConfig",
    "SceneConfig",
    "SceneSample",
    "ShapeError",
    "Tensor",
    "WarpMap",
    "build_dc_cost_volume",
    "consistency_confidence",
    "eval_affine_fit",
    "eval_metrics",
    "fit_affine",
    "generate_scene",
    "huber",
    "inverse_depth_planes",
    "make_dataset",
    "occlusion_confidence",
    "plane_sweep_depth",
    "soft_argmax",
    "to_confidence",
    "total_loss",
    "warp_dp_volume",
    "weighted_loss",
]
