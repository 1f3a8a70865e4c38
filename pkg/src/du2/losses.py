"""Confidence-weighted Huber training loss and evaluation metrics.

The total training loss is a weighted sum over the four pipeline outputs
(the affine-corrected dual-pixel map, the dual-camera map, the unrefined
fusion output, and the refined full-resolution map). Low-resolution outputs
are supervised against ground truth block-averaged to their grid with values
divided by the resolution factor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, absolute, as_tensor, select, tensor_sum
from .fusion import AffineParams
from .volumes import DisparityMap

__all__ = [
    "LossWeights",
    "huber",
    "weighted_loss",
    "total_loss",
    "downsample_disparity",
    "downsample_confidence",
    "eval_metrics",
    "eval_affine_fit",
    "DEFAULT_BAD_THRESHOLDS",
]

DEFAULT_BAD_THRESHOLDS = (1.25, 2.0, 3.0)


@dataclass(frozen=True)
class LossWeights:
    """Term weights; the dual-camera branch carries the largest default."""

    dp: float = 1.0
    dc: float = 10.0
    unref: float = 1.0
    ref: float = 1.0


def huber(x, delta: float = 1.0):
    """0.5 x^2 inside |x| <= delta, linear continuation outside (C^1)."""
    if delta <= 0:
        raise ValueError(f"huber delta must be positive, got {delta}")
    x = as_tensor(x)
    ax = absolute(x)
    quadratic = 0.5 * x * x
    linear = delta * (ax - 0.5 * delta)
    return select(ax.data <= delta, quadratic, linear)


def weighted_loss(d, d_gt, c_gt, delta: float = 1.0) -> Tensor:
    """Confidence-weighted mean Huber penalty.

    Returns 0 when the confidence mass is zero (degenerate batch, warned).
    """
    d = d.values if isinstance(d, DisparityMap) else as_tensor(d)
    d_gt_arr = np.asarray(d_gt, dtype=np.float64)
    c = np.asarray(c_gt, dtype=np.float64)
    if d.shape != d_gt_arr.shape or d.shape != c.shape:
        raise ValueError(
            f"shape mismatch: prediction {d.shape}, truth {d_gt_arr.shape}, confidence {c.shape}"
        )
    mass = c.sum()
    if mass <= 0.0:
        warnings.warn("weighted_loss: zero confidence mass, returning 0", RuntimeWarning)
        return as_tensor(0.0)
    penalties = huber(d - d_gt_arr, delta)
    return tensor_sum(penalties * c) * (1.0 / mass)


def downsample_disparity(d_full: np.ndarray, factor: int = 8) -> np.ndarray:
    """Block-average disparity and rescale values into coarse pixel units."""
    h, w = d_full.shape
    if h % factor or w % factor:
        raise ValueError(f"extent {h}x{w} not divisible by {factor}")
    blocks = d_full.reshape(h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(1, 3)) / factor


def downsample_confidence(c_full: np.ndarray, factor: int = 8) -> np.ndarray:
    """Conservative block-min confidence downsampling."""
    h, w = c_full.shape
    if h % factor or w % factor:
        raise ValueError(f"extent {h}x{w} not divisible by {factor}")
    blocks = c_full.reshape(h // factor, factor, w // factor, factor)
    return blocks.min(axis=(1, 3))


def total_loss(outputs: dict, affine: AffineParams | None, d_gt: np.ndarray,
               c_gt: np.ndarray, weights: LossWeights = LossWeights(),
               delta: float = 1.0, factor: int = 8) -> Tensor:
    """Weighted four-term loss; terms with weight 0 may be absent from outputs.

    ``outputs`` holds DisparityMaps under keys d_dp / d_dc / d_unref / d_ref.
    The first three live on the coarse grid and are compared against
    block-averaged ground truth with values divided by ``factor``.
    """
    d_low = downsample_disparity(d_gt, factor)
    c_low = downsample_confidence(c_gt, factor)

    def term(key, weight, target, conf):
        if weight == 0.0:
            return None
        if outputs.get(key) is None:
            raise ValueError(f"total_loss: output {key!r} required by nonzero weight is missing")
        pred = outputs[key]
        values = pred.values if isinstance(pred, DisparityMap) else as_tensor(pred)
        if key == "d_dp":
            if affine is None:
                raise ValueError("total_loss: dual-pixel term needs the fitted affine parameters")
            values = affine.alpha + affine.beta * values
        return weight * weighted_loss(values, target, conf, delta)

    pieces = [
        term("d_dp", weights.dp, d_low, c_low),
        term("d_dc", weights.dc, d_low, c_low),
        term("d_unref", weights.unref, d_low, c_low),
        term("d_ref", weights.ref, d_gt, c_gt),
    ]
    total = as_tensor(0.0)
    for piece in pieces:
        if piece is not None:
            total = total + piece
    return total


def eval_metrics(d, d_gt, c, thresholds=DEFAULT_BAD_THRESHOLDS) -> dict:
    """Weighted MAE / RMSE and bad-delta fractions (percent).

    Zero confidence mass marks every metric as NaN (undefined).
    """
    d = d.values.data if isinstance(d, DisparityMap) else np.asarray(d, dtype=np.float64)
    d_gt = np.asarray(d_gt, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    mass = c.sum()
    out: dict[str, float] = {}
    if mass <= 0.0:
        out["mae"] = float("nan")
        out["rmse"] = float("nan")
        for t in thresholds:
            out[f"bad_{t:g}"] = float("nan")
        return out
    err = np.abs(d - d_gt)
    out["mae"] = float((err * c).sum() / mass)
    out["rmse"] = float(np.sqrt(((d - d_gt) ** 2 * c).sum() / mass))
    for t in thresholds:
        out[f"bad_{t:g}"] = float(100.0 * ((err > t) * c).sum() / mass)
    return out


def eval_affine_fit(d_raw: np.ndarray, d_gt: np.ndarray, c_gt: np.ndarray) -> np.ndarray:
    """Best-fit (confidence-weighted MSE) affine correction of a raw map.

    Solves argmin ||c * ((a + b * d_raw) - d_gt)||^2 and returns the corrected
    map; a degenerate system (constant d_raw under the weighting) returns the
    input unchanged with a warning.
    """
    d_raw = np.asarray(d_raw, dtype=np.float64)
    w = np.asarray(c_gt, dtype=np.float64) ** 2
    sw = w.sum()
    if sw <= 0.0:
        warnings.warn("eval_affine_fit: zero confidence mass, returning input", RuntimeWarning)
        return d_raw
    swx = (w * d_raw).sum()
    swxx = (w * d_raw * d_raw).sum()
    swy = (w * d_gt).sum()
    swxy = (w * d_raw * d_gt).sum()
    det = sw * swxx - swx * swx
    scale = max(sw * swxx, swx * swx, 1e-300)
    if det <= 1e-12 * scale:
        warnings.warn("eval_affine_fit: degenerate fit (constant input), returning input",
                      RuntimeWarning)
        return d_raw
    alpha = (swxx * swy - swx * swxy) / det
    beta = (sw * swxy - swx * swy) / det
    return alpha + beta * d_raw
