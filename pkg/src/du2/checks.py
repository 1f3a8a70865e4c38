"""Finite-difference check suite covering every differentiable operation.

Each named check builds a small seeded instance and compares analytic
gradients against central differences. ``run_suite`` powers both the CLI
command and the gradient-integrity acceptance gate; instance extents stay at
or below 16x24 so the whole suite runs in well under five minutes.
"""

from __future__ import annotations

import zlib

import numpy as np

from .autodiff import Tensor, absolute, tensor_sum
from .fusion import AffineParams, VolumeFusionNet, fit_affine, warp_dp_volume
from .gradcheck import GradCheckResult, check_gradients
from .losses import LossWeights, total_loss, weighted_loss
from .model import DisparityPipeline, PipelineConfig
from .ops import ConvSpec, conv2d, conv3d, leaky_relu, sample_bilinear2d, softmax_axis
from .refine import RefineInputs, RefineNet
from .scenes import Layer, SceneConfig, Texture, generate_scene
from .volumes import (
    ConfidenceVolume,
    DcFeatureExtractor,
    DisparityGrid,
    DpConfidenceNet,
    build_dc_cost_volume,
    dc_default_grid,
    soft_argmax,
    to_confidence,
)

__all__ = ["run_suite", "CHECK_NAMES"]


def _away_from_zero(rng, shape, margin=0.05):
    """Samples with |x| >= margin so activation kinks stay out of reach."""
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)


def _tiny_scene(seed=0):
    """16x24 fixture with one occluder; explicit layers keep geometry tame."""
    layers = [
        Layer(2.0, Texture("noise", seed=11, period=5.0), np.array([0.8, 0.5, 0.4]), None),
        Layer(5.0, Texture("noise", seed=12, period=4.0), np.array([0.4, 0.8, 0.6]),
              (8.0, 17.0, 4.0, 12.0)),
    ]
    return generate_scene(SceneConfig(seed=seed, height=16, width=24, layers=layers,
                                      dp_alpha=-1.0, dp_beta=12.0, baseline=0.2,
                                      focal=120.0, warp_magnitude=1.0))


def _check_conv2d(rng, sample):
    x = Tensor(rng.normal(size=(2, 9, 10)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.4, requires_grad=True)
    b = Tensor(rng.normal(size=(3,)), requires_grad=True)
    spec = ConvSpec(2, 3, (3, 3), stride=2)
    target = rng.normal(size=(3, 5, 5))

    def loss():
        out = conv2d(x, spec, w, b)
        return tensor_sum((out - target) * (out - target))

    return check_gradients("conv2d", loss, {"x": x, "w": w, "b": b}, sample=sample, rng=rng)


def _check_conv2d_same(rng, sample):
    x = Tensor(rng.normal(size=(2, 7, 8)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 2, 3, 3)) * 0.4, requires_grad=True)
    b = Tensor(rng.normal(size=(2,)), requires_grad=True)
    spec = ConvSpec(2, 2, (3, 3))
    target = rng.normal(size=(2, 7, 8))

    def loss():
        out = conv2d(x, spec, w, b)
        return tensor_sum((out - target) * (out - target))

    return check_gradients("conv2d_same", loss, {"x": x, "w": w, "b": b}, sample=sample, rng=rng)


def _check_conv2d_dilated(rng, sample):
    x = Tensor(rng.normal(size=(1, 9, 9)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 1, 3, 3)) * 0.4, requires_grad=True)
    spec = ConvSpec(1, 2, (3, 3), dilation=2)

    def loss():
        out = conv2d(x, spec, w, None)
        return tensor_sum(out * out)

    return check_gradients("conv2d_dilated", loss, {"x": x, "w": w}, sample=sample, rng=rng)


def _check_conv3d(rng, sample):
    x = Tensor(rng.normal(size=(2, 5, 4, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 2, 3, 3, 3)) * 0.3, requires_grad=True)
    b = Tensor(rng.normal(size=(2,)), requires_grad=True)
    spec = ConvSpec(2, 2, (3, 3, 3))
    target = rng.normal(size=(2, 5, 4, 4))

    def loss():
        out = conv3d(x, spec, w, b)
        return tensor_sum((out - target) * (out - target))

    return check_gradients("conv3d", loss, {"x": x, "w": w, "b": b}, sample=sample, rng=rng)


def _check_leaky_relu(rng, sample):
    x = Tensor(_away_from_zero(rng, (6, 7)), requires_grad=True)
    target = rng.normal(size=(6, 7))

    def loss():
        out = leaky_relu(x, 0.2)
        return tensor_sum((out - target) * (out - target))

    return check_gradients("leaky_relu", loss, {"x": x}, sample=sample, rng=rng)


def _check_softmax(rng, sample):
    x = Tensor(rng.normal(size=(4, 9)), requires_grad=True)
    weights = rng.normal(size=(4, 9))

    def loss():
        return tensor_sum(softmax_axis(x, axis=1, temperature=0.5) * weights)

    return check_gradients("softmax_axis", loss, {"x": x}, sample=sample, rng=rng)


def _check_bilinear(rng, sample):
    src = Tensor(rng.normal(size=(2, 6, 7)), requires_grad=True)
    # fractional positions away from cell boundaries; a margin outside too
    xs = rng.uniform(0.15, 5.85, size=(3, 5))
    ys = rng.uniform(0.15, 4.85, size=(3, 5))
    coords = Tensor(np.stack([xs, ys]), requires_grad=True)
    weights = rng.normal(size=(2, 3, 5))

    def loss():
        return tensor_sum(sample_bilinear2d(src, coords) * weights)

    return check_gradients("sample_bilinear2d", loss, {"src": src, "coords": coords},
                           sample=sample, rng=rng)


def _check_abs_sum(rng, sample):
    x = Tensor(_away_from_zero(rng, (5, 6)), requires_grad=True)

    def loss():
        return tensor_sum(absolute(x))

    return check_gradients("absolute", loss, {"x": x}, sample=sample, rng=rng)


def _check_huber_loss(rng, sample):
    # offsets away from the |x| = delta switching point
    d = Tensor(rng.normal(size=(5, 5)) * 2.0, requires_grad=True)
    gt = rng.normal(size=(5, 5)) * 0.2
    c = rng.uniform(0.2, 1.0, size=(5, 5))

    def loss():
        return weighted_loss(d, gt, c, delta=1.0)

    return check_gradients("weighted_loss", loss, {"d": d}, sample=sample, rng=rng)


def _check_dc_features(rng, sample):
    net = DcFeatureExtractor(channels=4, rng=np.random.default_rng(7))
    image = Tensor(rng.uniform(0.0, 1.0, size=(3, 16, 24)), requires_grad=True)
    leaves = {"image": image}
    leaves.update({name: p for name, p in net.named_parameters()})
    weights = rng.normal(size=(4, 2, 3))

    def loss():
        return tensor_sum(net(image) * weights)

    return check_gradients("dc_feature_extractor", loss, leaves, sample=sample, rng=rng)


def _check_dp_net(rng, sample):
    net = DpConfidenceNet(channels=4, ratio=2, rng=np.random.default_rng(8))
    top = Tensor(rng.uniform(0.0, 1.0, size=(1, 32, 48)), requires_grad=True)
    bottom = Tensor(rng.uniform(0.0, 1.0, size=(1, 32, 48)), requires_grad=True)
    leaves = {"top": top, "bottom": bottom}
    leaves.update({name: p for name, p in net.named_parameters()})
    weights = rng.normal(size=(2, 3, 17))

    def loss():
        volume, _ = net(top, bottom)
        return tensor_sum(volume.values * weights)

    return check_gradients("dp_confidence_net", loss, leaves, sample=sample, rng=rng)


def _check_cost_volume_chain(rng, sample):
    grid = DisparityGrid(0.0, 1.0, 5)
    fl = Tensor(rng.normal(size=(3, 4, 8)), requires_grad=True)
    fr = Tensor(rng.normal(size=(3, 4, 8)), requires_grad=True)

    def loss():
        cost = build_dc_cost_volume(fl, fr, grid)
        conf = to_confidence(cost, grid, 0.5)
        disp = soft_argmax(conf)
        return tensor_sum(disp.values * 0.3)

    return check_gradients("cost_to_disparity", loss, {"fl": fl, "fr": fr},
                           sample=sample, rng=rng)


def _check_fit_affine(rng, sample):
    d_dp = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    d_dc = Tensor(rng.normal(size=(4, 5)) * 3.0 + 4.0, requires_grad=True)

    def loss():
        params = fit_affine(d_dp, d_dc, 0.1)
        return params.alpha * 1.7 + params.beta * 0.9

    return check_gradients("fit_affine", loss, {"d_dp": d_dp, "d_dc": d_dc},
                           sample=sample, rng=rng)


def _check_fusion_composite(rng, sample):
    """fit -> warp -> fuse -> soft-argmax on a 4x5x17 instance.

    Seeds are pinned: this instance was screened so every leaky-ReLU
    pre-activation sits well clear of the kink at the difference step.
    """
    rng = np.random.default_rng(802)
    grid_dp = DisparityGrid(-4.0, 0.5, 17)
    grid_dc = DisparityGrid(0.0, 1.0, 17)
    raw_dp = rng.uniform(0.1, 1.0, size=(4, 5, 17))
    raw_dc = rng.uniform(0.1, 1.0, size=(4, 5, 17))
    dp_vals = Tensor(raw_dp / raw_dp.sum(-1, keepdims=True), requires_grad=True)
    dc_vals = Tensor(raw_dc / raw_dc.sum(-1, keepdims=True), requires_grad=True)
    d_dp = Tensor(rng.uniform(-2.0, 2.0, size=(4, 5)), requires_grad=True)
    d_dc = Tensor(rng.uniform(2.0, 9.0, size=(4, 5)), requires_grad=True)
    ys, xs = np.mgrid[0:4, 0:5].astype(np.float64)
    coords = np.stack([xs + 0.3, ys - 0.2])
    net = VolumeFusionNet(in_channels=3, hidden=4, rng=np.random.default_rng(9))
    leaves = {"dp_vals": dp_vals, "dc_vals": dc_vals, "d_dp": d_dp, "d_dc": d_dc}
    leaves.update({name: p for name, p in net.named_parameters()})
    weights = rng.normal(size=(4, 5))

    def loss():
        affine = fit_affine(d_dp, d_dc, 0.1)
        warped, validity = warp_dp_volume(ConfidenceVolume(dp_vals, grid_dp), coords,
                                          affine, grid_dc)
        fused = net([ConfidenceVolume(dc_vals, grid_dc), warped, validity])
        disp = soft_argmax(fused)
        return tensor_sum(disp.values * weights)

    return check_gradients("fusion_composite", loss, leaves, sample=sample, rng=rng)


def _check_refine(rng, sample_count, full=False):
    scene = _tiny_scene(seed=3)
    net = RefineNet(mode="rgb_plus_dp", guide_channels=8, trunk_channels=6,
                    rng=np.random.default_rng(10))
    d_unref = Tensor(rng.uniform(0.2, 2.0, size=(2, 3)), requires_grad=True)
    dp_top = Tensor(scene.dp_top, requires_grad=True)
    dp_bottom = Tensor(scene.dp_bottom, requires_grad=True)
    from .fusion import WarpMap
    from .volumes import DisparityMap

    warp = WarpMap(scene.warp)
    rgb = Tensor(scene.right)
    leaves = {"d_unref": d_unref, "dp_top": dp_top}
    if full:
        leaves.update({name: p for name, p in net.named_parameters()})
    weights = rng.normal(size=(16, 24))

    def loss():
        refined = net(RefineInputs(DisparityMap(d_unref, np.ones((2, 3))), rgb,
                                   dp_top, dp_bottom, warp))
        return tensor_sum(refined.values * weights)

    return check_gradients("refine", loss, leaves, sample=sample_count, rng=rng)


def _check_full_pipeline(rng, sample):
    """Composite graph from images to the four-term loss on a 16x24 scene."""
    scene = _tiny_scene(seed=5)
    config = PipelineConfig(image_height=16, image_width=24, feature_channels=4,
                            dp_channels=4, fusion_channels=4, trunk_channels=4,
                            guide_channels=8, seed=21)
    model = DisparityPipeline(config)
    leaves = {name: p for name, p in model.named_parameters()}

    def loss():
        outputs = model.predict_sample(scene)
        return total_loss(outputs, outputs["affine"], scene.gt.d_r, scene.gt.c_r,
                          LossWeights(), 1.0)

    return check_gradients("full_pipeline", loss, leaves, sample=sample, rng=rng)


_CHECKS = {
    "conv2d": _check_conv2d,
    "conv2d_same": _check_conv2d_same,
    "conv2d_dilated": _check_conv2d_dilated,
    "conv3d": _check_conv3d,
    "leaky_relu": _check_leaky_relu,
    "softmax_axis": _check_softmax,
    "sample_bilinear2d": _check_bilinear,
    "absolute": _check_abs_sum,
    "weighted_loss": _check_huber_loss,
    "dc_feature_extractor": _check_dc_features,
    "dp_confidence_net": _check_dp_net,
    "cost_to_disparity": _check_cost_volume_chain,
    "fit_affine": _check_fit_affine,
    "fusion_composite": _check_fusion_composite,
    "refine": _check_refine,
    "full_pipeline": _check_full_pipeline,
}

CHECK_NAMES = tuple(_CHECKS)

_SAMPLES = {
    "dc_feature_extractor": 4,
    "dp_confidence_net": 4,
    "fusion_composite": 6,
    "refine": 6,
    "full_pipeline": 3,
    "cost_to_disparity": 20,
}


def run_suite(names=None, seed: int = 0) -> list:
    """Run the named checks (default: all); returns GradCheckResult list."""
    names = list(names) if names else list(CHECK_NAMES)
    results = []
    for name in names:
        if name not in _CHECKS:
            raise ValueError(f"unknown gradient check {name!r}; known: {CHECK_NAMES}")
        rng = np.random.default_rng(seed + zlib.crc32(name.encode()) % 1000)
        results.append(_CHECKS[name](rng, _SAMPLES.get(name)))
    return results
