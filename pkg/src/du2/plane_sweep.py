"""Plane-sweep multi-view ground truth: depth, consistency and occlusion.

Depth search warps each neighbor onto the reference through fronto-parallel
plane homographies sampled uniformly in inverse depth, accumulates RGB
sum-of-absolute-differences, cross-bilaterally filters each cost slice with
the grayscale reference as guide, and reads the per-pixel argmin plane.
Confidence multiplies the two best per-neighbor consistency scores; pixels
must agree with at least two other cameras to count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CameraView",
    "BilateralParams",
    "inverse_depth_planes",
    "cross_bilateral_filter",
    "plane_sweep_depth",
    "consistency_confidence",
    "occlusion_confidence",
    "ground_truth_from_views",
]

MAX_SAD = 3.0  # RGB in [0, 1]: upper bound of the per-neighbor matching cost
CONSISTENCY_CUTOFF = 1.0  # disparity-space reprojection error with zero score


@dataclass
class CameraView:
    """Pinhole view with world-to-camera pose (x_cam = R x_world + t)."""

    image: np.ndarray  # [3, H, W] floats in [0, 1]
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        k = self.intrinsics
        if k.shape != (3, 3) or abs(k[1, 0]) > 1e-12 or abs(k[2, 0]) > 1e-12 or abs(k[2, 1]) > 1e-12:
            raise ValueError("intrinsics must be upper-triangular 3x3")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def shape(self):
        return self.image.shape[1:]


@dataclass(frozen=True)
class BilateralParams:
    sigma_spatial: float = 3.0
    sigma_range: float = 12.5  # on a 0-255 intensity scale

    @property
    def radius(self) -> int:
        return int(round(3.0 * self.sigma_spatial))


def inverse_depth_planes(z_min: float, z_max: float, n: int) -> np.ndarray:
    """Depths uniformly spaced in inverse depth, nearest plane first."""
    if not (0 < z_min < z_max):
        raise ValueError(f"need 0 < z_min < z_max, got {z_min}, {z_max}")
    if n < 2:
        raise ValueError("need at least two planes")
    inv = 1.0 / z_min + np.arange(n) / (n - 1) * (1.0 / z_max - 1.0 / z_min)
    return 1.0 / inv


def _grayscale_255(image: np.ndarray) -> np.ndarray:
    return 255.0 * (0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2])


def cross_bilateral_filter(volume: np.ndarray, guide: np.ndarray,
                           params: BilateralParams = BilateralParams()) -> np.ndarray:
    """Per-slice cross-bilateral filter with a shared 2D guide image."""
    n, h, w = volume.shape
    radius = params.radius
    inv2ss = 1.0 / (2.0 * params.sigma_spatial**2)
    inv2sr = 1.0 / (2.0 * params.sigma_range**2)
    acc = np.zeros_like(volume)
    norm = np.zeros((h, w))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ws = np.exp(-(dy * dy + dx * dx) * inv2ss)
            ys0, ys1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, -dx), min(w, w - dx)
            if ys0 >= ys1 or xs0 >= xs1:
                continue
            out_slice = (slice(ys0, ys1), slice(xs0, xs1))
            in_slice = (slice(ys0 + dy, ys1 + dy), slice(xs0 + dx, xs1 + dx))
            diff = guide[out_slice] - guide[in_slice]
            weight = ws * np.exp(-(diff * diff) * inv2sr)
            acc[(slice(None),) + out_slice] += weight * volume[(slice(None),) + in_slice]
            norm[out_slice] += weight
    return acc / norm


def _plane_homography(reference: CameraView, neighbor: CameraView, depth: float) -> np.ndarray:
    r_rel = neighbor.rotation @ reference.rotation.T
    t_rel = neighbor.translation - r_rel @ reference.translation
    normal = np.array([0.0, 0.0, 1.0])
    mid = r_rel + np.outer(t_rel, normal) / depth
    return neighbor.intrinsics @ mid @ np.linalg.inv(reference.intrinsics)


def _sample_bilinear_image(image: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Bilinear samples plus an in-bounds mask; out-of-range taps are invalid."""
    _, h, w = image.shape
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    x = np.clip(xs, 0, w - 1)
    y = np.clip(ys, 0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    v = (image[:, y0, x0] * (1 - fx) * (1 - fy) + image[:, y0, x1] * fx * (1 - fy)
         + image[:, y1, x0] * (1 - fx) * fy + image[:, y1, x1] * fx * fy)
    return v, inside


def plane_sweep_depth(reference: CameraView, neighbors: list, planes: np.ndarray,
                      filter_params: BilateralParams = BilateralParams()):
    """Per-pixel depth from the filtered-cost argmin.

    Returns (depth map, raw cost volume). The raw volume is the unfiltered
    per-plane SAD sum; the argmin runs on its bilaterally filtered version.
    Ties break to the first (nearest) plane. A plane that degenerates behind
    a neighbor camera contributes the maximum cost for that neighbor.
    """
    if not neighbors:
        raise ValueError("plane sweep needs at least one neighbor view")
    h, w = reference.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ones = np.ones_like(xs)
    cost = np.zeros((len(planes), h, w))
    for k, depth in enumerate(planes):
        total = np.zeros((h, w))
        for neighbor in neighbors:
            hmat = _plane_homography(reference, neighbor, float(depth))
            denom = hmat[2, 0] * xs + hmat[2, 1] * ys + hmat[2, 2]
            valid = denom > 1e-9
            safe = np.where(valid, denom, 1.0)
            u = (hmat[0, 0] * xs + hmat[0, 1] * ys + hmat[0, 2]) / safe
            v = (hmat[1, 0] * xs + hmat[1, 1] * ys + hmat[1, 2]) / safe
            samples, inside = _sample_bilinear_image(neighbor.image, u, v)
            sad = np.abs(reference.image - samples).sum(axis=0)
            usable = valid & inside
            total += np.where(usable, sad, MAX_SAD)
        cost[k] = total
    guide = _grayscale_255(reference.image)
    filtered = cross_bilateral_filter(cost, guide, filter_params)
    best = filtered.argmin(axis=0)
    depth_map = np.asarray(planes)[best]
    return depth_map, cost


def _reprojection_score(reference: CameraView, neighbor: CameraView,
                        ref_depth: np.ndarray, neighbor_depth: np.ndarray,
                        cutoff: float = CONSISTENCY_CUTOFF) -> np.ndarray:
    """Linear-ramp consistency: 1 at zero reprojection error, 0 at the cutoff.

    The depth mismatch observed at the reprojected pixel is converted into
    disparity units through the pair's focal length and baseline.
    """
    h, w = reference.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    kinv = np.linalg.inv(reference.intrinsics)
    rays = np.stack([xs, ys, np.ones_like(xs)], axis=0).reshape(3, -1)
    dirs = kinv @ rays
    points = dirs * ref_depth.reshape(1, -1)
    r_rel = neighbor.rotation @ reference.rotation.T
    t_rel = neighbor.translation - r_rel @ reference.translation
    in_neighbor = r_rel @ points + t_rel.reshape(3, 1)
    z_pred = in_neighbor[2].reshape(h, w)
    proj = neighbor.intrinsics @ in_neighbor
    valid = z_pred.reshape(-1) > 1e-9
    u = np.where(valid, proj[0] / np.where(valid, proj[2], 1.0), -1.0).reshape(h, w)
    v = np.where(valid, proj[1] / np.where(valid, proj[2], 1.0), -1.0).reshape(h, w)

    nh, nw = neighbor.shape
    ui = np.round(u).astype(np.int64)
    vi = np.round(v).astype(np.int64)
    inside = (ui >= 0) & (ui < nw) & (vi >= 0) & (vi < nh) & valid.reshape(h, w)
    z_obs = neighbor_depth[np.clip(vi, 0, nh - 1), np.clip(ui, 0, nw - 1)]

    baseline = np.linalg.norm(reference.center - neighbor.center)
    focal = neighbor.intrinsics[0, 0]
    err = focal * baseline * np.abs(1.0 / np.maximum(z_obs, 1e-9) - 1.0 / np.maximum(z_pred, 1e-9))
    score = np.clip(1.0 - err / cutoff, 0.0, 1.0)
    return np.where(inside, score, 0.0)


def consistency_confidence(depths: list, views: list, ref_index: int = 0,
                           cutoff: float = CONSISTENCY_CUTOFF) -> np.ndarray:
    """Product of the two largest per-neighbor consistency scores."""
    reference = views[ref_index]
    ref_depth = depths[ref_index]
    scores = []
    for i, (view, depth) in enumerate(zip(views, depths)):
        if i == ref_index:
            continue
        scores.append(_reprojection_score(reference, view, ref_depth, depth, cutoff))
    if len(scores) < 2:
        return np.zeros(reference.shape)
    stacked = np.sort(np.stack(scores, axis=0), axis=0)
    return stacked[-1] * stacked[-2]


def occlusion_confidence(d_r: np.ndarray, d_l: np.ndarray, c_r: np.ndarray,
                         c_l: np.ndarray, delta: float = 1.0) -> np.ndarray:
    """Right-view occlusion confidence from rectified disparities.

    Conventions: D_r >= 0, D_l <= 0, the left match of right column x sits at
    x' = x + D_r(x, y). A pixel joins the occlusion set when it is inside the
    left field of view, fails the left/right consistency check, and the pixel
    at x' is a consistent occluder in front of it. Fractional disparities are
    rounded to the nearest column for lookups.
    """
    d_r = np.asarray(d_r, dtype=np.float64)
    d_l = np.asarray(d_l, dtype=np.float64)
    if d_r.shape != d_l.shape:
        raise ValueError("left/right disparity extents differ")
    h, w = d_r.shape
    cols = np.arange(w)[None, :]
    rows = np.arange(h)[:, None]

    x_prime = np.round(cols + d_r).astype(np.int64)
    in_fov = (x_prime >= 0) & (x_prime < w)
    xp = np.clip(x_prime, 0, w - 1)

    d_l_at = d_l[rows, xp]
    failed = np.abs(d_r + d_l_at) > delta

    x_back = np.round(xp + d_l_at).astype(np.int64)
    back_ok = (x_back >= 0) & (x_back < w)
    xb = np.clip(x_back, 0, w - 1)
    occluder_consistent = back_ok & (np.abs(d_l_at + d_r[rows, xb]) <= delta)

    in_front = np.abs(d_l_at) > np.abs(d_r)

    member = in_fov & failed & occluder_consistent & in_front
    return np.where(member, np.asarray(c_r) * np.asarray(c_l)[rows, xp], 0.0)


def ground_truth_from_views(views: list, planes: np.ndarray,
                            filter_params: BilateralParams = BilateralParams(),
                            ref_index: int = 0, partner_index: int = 1,
                            delta: float = 1.0) -> dict:
    """Sweep every view, score consistency, and derive the stereo ground truth.

    Disparity is expressed between the reference and its stereo partner:
    d = f * B / Z, positive for the reference (right) view and negated for
    the partner (left) view.
    """
    depths = []
    costs = []
    for i, view in enumerate(views):
        neighbors = [v for j, v in enumerate(views) if j != i]
        depth, cost = plane_sweep_depth(view, neighbors, planes, filter_params)
        depths.append(depth)
        costs.append(cost)
    conf_ref = consistency_confidence(depths, views, ref_index)
    conf_partner = consistency_confidence(depths, views, partner_index)

    reference = views[ref_index]
    partner = views[partner_index]
    baseline = np.linalg.norm(reference.center - partner.center)
    focal = reference.intrinsics[0, 0]
    d_r = focal * baseline / depths[ref_index]
    d_l = -focal * baseline / depths[partner_index]
    c_occ = occlusion_confidence(d_r, d_l, conf_ref, conf_partner, delta)
    return {
        "depth": depths[ref_index],
        "depth_partner": depths[partner_index],
        "disparity": d_r,
        "disparity_partner": d_l,
        "confidence": conf_ref,
        "confidence_partner": conf_partner,
        "occlusion": c_occ,
        "cost": costs[ref_index],
    }
