"""Deterministic synthetic scene generator with exact ground truth.

Scenes are stacks of fronto-parallel textured layers. The stereo pair is
rendered by shifting each layer along x by its disparity b*f/Z (the left
image content sits at +d relative to the right image), with nearer layers
occluding farther ones, so disparity, confidence and occlusion ground truth
are exact by construction. The dual-pixel half-images are rendered from the
right view in a separately warped frame: each layer is shifted by half its
dual-pixel disparity along y (the orthogonal baseline) in both directions and
blurred with a disc whose radius equals that disparity.

Layer disparities are drawn as integers so the occlusion band geometry and
the left/right consistency arithmetic are exact.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import image_io

__all__ = [
    "TEXTURE_KINDS",
    "Texture",
    "Layer",
    "SceneConfig",
    "GroundTruth",
    "SceneSample",
    "generate_scene",
    "make_dataset",
    "load_sample",
    "load_dataset",
    "dataset_digest",
    "MultiViewConfig",
    "render_multiview",
    "write_multiview_scene",
]

TEXTURE_KINDS = ("noise", "stripes-horizontal", "stripes-vertical", "checker")

DP_LIMIT = 4.0  # dual-pixel disparity must stay inside [-4, 4] sensor pixels


class Texture:
    """Procedural texture defined on the whole plane, values in [0, 1]."""

    def __init__(self, kind: str, seed: int = 0, period: float = 8.0, phase: float = 0.0):
        if kind not in TEXTURE_KINDS:
            raise ValueError(f"unknown texture kind {kind!r}")
        self.kind = kind
        self.period = float(period)
        self.phase = float(phase)
        rng = np.random.default_rng(seed)
        self._table = rng.uniform(0.0, 1.0, size=(32, 32))

    def sample(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        if self.kind == "stripes-horizontal":
            # lines run along x: intensity varies only with y
            return 0.5 + 0.5 * np.sin(2 * np.pi * (ys + self.phase) / self.period)
        if self.kind == "stripes-vertical":
            return 0.5 + 0.5 * np.sin(2 * np.pi * (xs + self.phase) / self.period)
        if self.kind == "checker":
            cells = np.floor((xs + self.phase) / self.period) + np.floor(ys / self.period)
            return 0.15 + 0.7 * (np.mod(cells, 2.0))
        # two octaves of tiled bilinear noise; the fine octave keeps gradients
        # alive everywhere so sub-pixel matching never goes flat
        coarse = self._noise_octave(xs + self.phase, ys, self.period)
        fine = self._noise_octave(xs * 3.7 + 11.3, ys * 3.7 + 7.9, self.period)
        return 0.65 * coarse + 0.35 * fine

    def _noise_octave(self, xs, ys, period):
        u = xs / period
        v = ys / period
        iu = np.floor(u).astype(np.int64)
        iv = np.floor(v).astype(np.int64)
        fu = u - iu
        fv = v - iv
        t = self._table
        n = t.shape[0]
        v00 = t[iv % n, iu % n]
        v01 = t[iv % n, (iu + 1) % n]
        v10 = t[(iv + 1) % n, iu % n]
        v11 = t[(iv + 1) % n, (iu + 1) % n]
        return (v00 * (1 - fu) + v01 * fu) * (1 - fv) + (v10 * (1 - fu) + v11 * fu) * fv


@dataclass
class Layer:
    """Fronto-parallel plane: integer stereo disparity, texture, coverage."""

    disparity: float
    texture: Texture
    color: np.ndarray
    rect: tuple | None = None  # (x0, x1, y0, y1); None covers everything

    def mask_at(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        if self.rect is None:
            return np.ones(xs.shape, dtype=bool)
        x0, x1, y0, y1 = self.rect
        return (xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)

    def rgb_at(self, xs, ys):
        tex = self.texture.sample(xs, ys)
        return self.color.reshape(3, *([1] * tex.ndim)) * (0.35 + 0.65 * tex)

    def luma_at(self, xs, ys):
        rgb = self.rgb_at(xs, ys)
        return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]


@dataclass
class SceneConfig:
    seed: int = 0
    height: int = 64
    width: int = 80
    dp_ratio: int = 2
    baseline: float = 0.2  # meters; the rig mounts it across the rectified x axis
    focal: float = 200.0  # pixels
    layers: list | None = None  # explicit layers override random generation
    occluder_range: tuple = (1, 2)  # inclusive count range of foreground layers
    background_disparity: tuple = (4, 12)
    disparity_gap: tuple = (6, 24)
    max_disparity: float = 40.0
    textures: tuple = TEXTURE_KINDS
    dp_span: tuple = (1.5, 3.5)  # half-range of target dual-pixel disparities
    dp_alpha: float | None = None
    dp_beta: float | None = None
    warp_magnitude: float = 2.0  # max rectification-warp displacement, DP pixels


@dataclass
class GroundTruth:
    d_r: np.ndarray
    d_l: np.ndarray | None
    c_r: np.ndarray
    c_l: np.ndarray | None
    c_occ: np.ndarray


@dataclass
class SceneSample:
    left: np.ndarray  # [3, H, W]
    right: np.ndarray
    dp_top: np.ndarray  # [1, rH, rW]
    dp_bottom: np.ndarray
    warp: np.ndarray  # [2, H, W], right-rectified -> dual-pixel coordinates
    gt: GroundTruth
    dp_alpha: float
    dp_beta: float
    baseline: float
    focal: float
    seed: int


# ---------------------------------------------------------------------------
# geometry helpers


def _homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact 3x3 homography mapping four source points onto four targets."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        b[2 * i] = u
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i + 1] = v
    h = np.linalg.solve(a, b)
    return np.array([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])


def _apply_homography(m: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    denom = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    u = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / denom
    v = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / denom
    return u, v


def _rect_to_dp_matrix(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Scale-by-ratio mapping perturbed by a small projective warp in DP space."""
    r = config.dp_ratio
    hd, wd = config.height * r, config.width * r
    corners = np.array([[0.0, 0.0], [wd - 1.0, 0.0], [0.0, hd - 1.0], [wd - 1.0, hd - 1.0]])
    jitter = rng.uniform(-config.warp_magnitude, config.warp_magnitude, size=(4, 2))
    perturb = _homography_from_points(corners, corners + jitter)
    scale = np.diag([float(r), float(r), 1.0])
    return perturb @ scale


def disc_kernel(radius: float) -> np.ndarray:
    """Normalized disc with linear edge coverage; radius 0 degenerates to a delta."""
    r = max(float(radius), 0.0)
    n = int(np.ceil(r + 0.5))
    ys, xs = np.mgrid[-n : n + 1, -n : n + 1]
    k = np.clip(r + 0.5 - np.hypot(xs, ys), 0.0, 1.0)
    return k / k.sum()


def _convolve_valid(field: np.ndarray, kernel: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Direct valid-mode convolution; field is pre-padded by the kernel radius."""
    out = np.zeros(out_hw)
    kh, kw = kernel.shape
    for dy in range(kh):
        for dx in range(kw):
            w = kernel[dy, dx]
            if w:
                out += w * field[dy : dy + out_hw[0], dx : dx + out_hw[1]]
    return out


# ---------------------------------------------------------------------------
# rendering


def _compose(layers, xs, ys, offsets):
    """Far-to-near compositing of shifted layers; returns rgb and winner index."""
    shape = xs.shape
    rgb = np.zeros((3,) + shape)
    winner = np.full(shape, -1, dtype=np.int64)
    for i, (layer, (dx, dy)) in enumerate(zip(layers, offsets)):
        sx = xs - dx
        sy = ys - dy
        m = layer.mask_at(sx, sy)
        rgb = np.where(m[None], layer.rgb_at(sx, sy), rgb)
        winner = np.where(m, i, winner)
    return rgb, winner


def _render_dp_half(layers, dp_disparities, m_inv, hd, wd, half_sign):
    """One dual-pixel half-image: per-layer y shift of +-D/2, disc blur, composite."""
    out = None
    for layer, d_dp in zip(layers, dp_disparities):
        kernel = disc_kernel(abs(d_dp))
        pad = kernel.shape[0] // 2
        vs, us = np.mgrid[-pad : hd + pad, -pad : wd + pad].astype(np.float64)
        vs = vs - half_sign * d_dp / 2.0
        xs, ys = _apply_homography(m_inv, us, vs)
        m = layer.mask_at(xs, ys).astype(np.float64)
        premult = layer.luma_at(xs, ys) * m
        alpha = _convolve_valid(m, kernel, (hd, wd))
        color = _convolve_valid(premult, kernel, (hd, wd))
        out = color if out is None else color + (1.0 - alpha) * out
    return out[None]


def _random_layers(config: SceneConfig, rng: np.random.Generator) -> list:
    h, w = config.height, config.width
    kinds = list(config.textures)

    def make_texture():
        kind = kinds[rng.integers(len(kinds))]
        return Texture(kind, seed=int(rng.integers(2**31)),
                       period=float(rng.uniform(5.0, 14.0)), phase=float(rng.uniform(0.0, 20.0)))

    def make_color():
        return rng.uniform(0.25, 1.0, size=3)

    d_bg = int(rng.integers(config.background_disparity[0], config.background_disparity[1] + 1))
    background = Layer(float(d_bg), make_texture(), make_color(), None)
    layers = [background]

    count = int(rng.integers(config.occluder_range[0], config.occluder_range[1] + 1))
    # disjoint x intervals keep occlusion interactions pairwise with the background
    slots = np.linspace(4, w - 8, count + 1)
    for i in range(count):
        gap = int(rng.integers(config.disparity_gap[0], config.disparity_gap[1] + 1))
        d = float(min(d_bg + gap, config.max_disparity))
        lo, hi = slots[i], slots[i + 1]
        max_width = max(hi - lo - gap - 2.0, 6.0)
        width = float(rng.uniform(min(10.0, max_width), min(26.0, max_width + 1e-9)))
        x0 = float(rng.uniform(lo + gap, max(hi - width, lo + gap + 1e-9)))
        y0 = float(rng.uniform(3.0, max(h * 0.5, 4.0)))
        avail = max(h - y0 - 4.0, 4.0)
        height = float(rng.uniform(min(10.0, 0.8 * avail), avail))
        color = make_color()
        if rng.uniform() < 0.3:
            color = np.clip(background.color + rng.uniform(-0.08, 0.08, 3), 0.05, 1.0)
        layers.append(Layer(d, make_texture(), color, (x0, x0 + width, y0, y0 + height)))
    # far-to-near compositing order
    layers.sort(key=lambda layer: layer.disparity)
    return layers


def _dp_affine(config: SceneConfig, disparities, rng: np.random.Generator):
    """Per-scene (alpha, beta) of the dual-pixel formation model D = a + b / Z."""
    bf = config.baseline * config.focal
    if config.dp_alpha is not None and config.dp_beta is not None:
        return float(config.dp_alpha), float(config.dp_beta)
    d_lo, d_hi = min(disparities), max(disparities)
    span = float(rng.uniform(*config.dp_span))
    center = float(rng.uniform(-0.4, 0.4))
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    if d_hi > d_lo:
        slope = sign * 2.0 * span / (d_hi - d_lo)
    else:
        slope = sign * 0.5
    # D_dp = alpha + beta / Z = alpha + (beta / bf) * d_dc
    beta = slope * bf
    mid = 0.5 * (d_lo + d_hi)
    alpha = center - slope * mid
    return alpha, beta


def generate_scene(config: SceneConfig) -> SceneSample:
    """Render one scene with exact disparity, occlusion and warp ground truth."""
    rng = np.random.default_rng(config.seed)
    h, w, r = config.height, config.width, config.dp_ratio
    layers = config.layers if config.layers is not None else _random_layers(config, rng)
    disparities = [layer.disparity for layer in layers]
    if any(d < 0 for d in disparities):
        raise ValueError("stereo disparities must be nonnegative (right-reference convention)")

    dp_alpha, dp_beta = _dp_affine(config, disparities, rng)
    bf = config.baseline * config.focal
    dp_disparities = [dp_alpha + dp_beta * d / bf for d in disparities]
    worst = max(abs(d) for d in dp_disparities)
    if worst > DP_LIMIT:
        raise ValueError(
            f"dual-pixel disparity bound exceeded: |{worst:.3f}| > {DP_LIMIT} "
            f"(alpha={dp_alpha:.3f}, beta={dp_beta:.3f}, stereo range "
            f"{min(disparities)}..{max(disparities)})"
        )

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    right, winner_r = _compose(layers, xs, ys, [(0.0, 0.0)] * len(layers))
    left, winner_l = _compose(layers, xs, ys, [(d, 0.0) for d in disparities])

    disp = np.asarray(disparities)
    d_r = disp[winner_r]
    d_l = -disp[winner_l]
    c_r = np.ones((h, w))
    c_l = np.ones((h, w))

    # exact occlusion: the right pixel's reprojection lands on a nearer layer
    x_match = (xs + d_r).astype(np.int64)
    in_fov = x_match < w
    x_safe = np.clip(x_match, 0, w - 1)
    occluded = in_fov & (winner_l[np.arange(h)[:, None], x_safe] != winner_r)
    c_occ = np.where(occluded, c_r * c_l[np.arange(h)[:, None], x_safe], 0.0)

    m_rect_to_dp = _rect_to_dp_matrix(config, rng)
    m_inv = np.linalg.inv(m_rect_to_dp)
    hd, wd = h * r, w * r
    dp_top = _render_dp_half(layers, dp_disparities, m_inv, hd, wd, +1.0)
    dp_bottom = _render_dp_half(layers, dp_disparities, m_inv, hd, wd, -1.0)

    u, v = _apply_homography(m_rect_to_dp, xs, ys)
    warp = np.stack([u, v], axis=0)

    gt = GroundTruth(d_r=d_r.astype(np.float64), d_l=d_l.astype(np.float64),
                     c_r=c_r, c_l=c_l, c_occ=c_occ)
    return SceneSample(left=left, right=right, dp_top=dp_top, dp_bottom=dp_bottom,
                       warp=warp, gt=gt, dp_alpha=dp_alpha, dp_beta=dp_beta,
                       baseline=config.baseline, focal=config.focal, seed=config.seed)


# ---------------------------------------------------------------------------
# datasets on disk


def _save_sample(directory: Path, sample: SceneSample) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    image_io.write_png(directory / "left.png", sample.left)
    image_io.write_png(directory / "right.png", sample.right)
    image_io.write_pfm(directory / "dp_t.pfm", sample.dp_top[0])
    image_io.write_pfm(directory / "dp_b.pfm", sample.dp_bottom[0])
    image_io.write_pfm(directory / "warp.pfm", sample.warp)
    image_io.write_pfm(directory / "d_gt.pfm", sample.gt.d_r)
    image_io.write_pfm(directory / "c_gt.pfm", sample.gt.c_r)
    image_io.write_pfm(directory / "c_occ.pfm", sample.gt.c_occ)
    meta = {
        "alpha": sample.dp_alpha,
        "beta": sample.dp_beta,
        "baseline": sample.baseline,
        "focal": sample.focal,
        "seed": sample.seed,
    }
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def validate_sample(sample: SceneSample) -> None:
    """Postcondition pass over a generated or loaded sample."""
    bf = sample.baseline * sample.focal
    dp = sample.dp_alpha + sample.dp_beta * sample.gt.d_r / bf
    if np.abs(dp).max() > DP_LIMIT + 1e-9:
        raise ValueError("sample violates the dual-pixel disparity bound")
    for name, arr in (("right", sample.right), ("dp_top", sample.dp_top),
                      ("warp", sample.warp), ("d_gt", sample.gt.d_r),
                      ("c_occ", sample.gt.c_occ)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"sample field {name} contains non-finite values")
    if sample.gt.c_occ.min() < 0 or sample.gt.c_occ.max() > 1:
        raise ValueError("occlusion confidence must lie in [0, 1]")


def make_dataset(config: SceneConfig, n_train: int, n_test: int, out_dir) -> Path:
    """Write train/test scene directories; byte-for-byte deterministic per seed."""
    out = Path(out_dir)
    for split, count, offset in (("train", n_train, 0), ("test", n_test, 1_000_000)):
        for i in range(count):
            sample_config = replace(config, seed=config.seed + offset + i)
            sample = generate_scene(sample_config)
            validate_sample(sample)
            _save_sample(out / split / f"{i:05d}", sample)
    return out


def load_sample(directory) -> SceneSample:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    left = image_io.read_png(directory / "left.png")
    right = image_io.read_png(directory / "right.png")
    dp_t = image_io.read_pfm(directory / "dp_t.pfm")
    dp_b = image_io.read_pfm(directory / "dp_b.pfm")
    warp = image_io.read_pfm(directory / "warp.pfm")
    d_gt = image_io.read_pfm(directory / "d_gt.pfm")
    c_gt = image_io.read_pfm(directory / "c_gt.pfm")
    c_occ = image_io.read_pfm(directory / "c_occ.pfm")
    gt = GroundTruth(d_r=d_gt, d_l=None, c_r=c_gt, c_l=None, c_occ=c_occ)
    return SceneSample(left=left, right=right, dp_top=dp_t[None], dp_bottom=dp_b[None],
                       warp=warp[:2], gt=gt, dp_alpha=meta["alpha"], dp_beta=meta["beta"],
                       baseline=meta["baseline"], focal=meta["focal"], seed=meta["seed"])


def load_dataset(root, split: str) -> list:
    root = Path(root) / split
    if not root.is_dir():
        raise FileNotFoundError(f"dataset split directory not found: {root}")
    return [load_sample(d) for d in sorted(root.iterdir()) if d.is_dir()]


def dataset_digest(root) -> str:
    """SHA-256 over every file (sorted relative paths); equality = byte equality."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# multi-view fixtures for the plane-sweep oracle


@dataclass
class MultiViewConfig:
    seed: int = 0
    height: int = 96
    width: int = 120
    focal: float = 150.0
    rig_radius: float = 0.08  # meters; neighbors sit on +-x / +-y offsets
    n_neighbors: int = 4
    depths: tuple = (2.0, 4.0, 9.0)  # nearest layer listed first
    textures: tuple = ("noise",)
    stereo_baseline: float = 0.16  # reference -> designated left partner


def render_multiview(config: MultiViewConfig):
    """Render a layered scene from a reference camera and its rig neighbors.

    Returns (views, depth_maps) where views[0] is the reference and views[1]
    is the designated stereo partner on the -x side.
    """
    from .plane_sweep import CameraView

    rng = np.random.default_rng(config.seed)
    h, w = config.height, config.width
    f = config.focal
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    k = np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])

    depths = sorted(config.depths, reverse=True)  # far -> near for compositing
    layers = []
    for i, z in enumerate(depths):
        kind = config.textures[int(rng.integers(len(config.textures)))]
        tex = Texture(kind, seed=int(rng.integers(2**31)),
                      period=float(rng.uniform(6.0, 12.0)), phase=float(rng.uniform(0.0, 9.0)))
        color = rng.uniform(0.25, 1.0, size=3)
        if i == 0:
            rect = None
        else:
            width = rng.uniform(0.25, 0.45) * w
            height = rng.uniform(0.3, 0.5) * h
            x0 = rng.uniform(0.15 * w, 0.8 * w - width)
            y0 = rng.uniform(0.1 * h, 0.85 * h - height)
            rect = (float(x0), float(x0 + width), float(y0), float(y0 + height))
        layers.append((Layer(0.0, tex, color, rect), z))

    centers = [np.zeros(3), np.array([-config.stereo_baseline, 0.0, 0.0])]
    offsets = [np.array([config.rig_radius, 0.0, 0.0]), np.array([0.0, config.rig_radius, 0.0]),
               np.array([0.0, -config.rig_radius, 0.0]), np.array([2 * config.rig_radius, 0.0, 0.0])]
    for i in range(max(config.n_neighbors - 1, 0)):
        centers.append(offsets[i % len(offsets)] * (1 + i // len(offsets)))
    centers = centers[: config.n_neighbors + 1]

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    views, depth_maps = [], []
    for c in centers:
        shifted = [(-f * c[0] / z, -f * c[1] / z) for _, z in layers]
        rgb, winner = _compose([layer for layer, _ in layers], xs, ys, shifted)
        zmap = np.asarray([z for _, z in layers])[winner]
        views.append(CameraView(image=rgb, intrinsics=k, rotation=np.eye(3), translation=-c))
        depth_maps.append(zmap)
    return views, depth_maps


def write_multiview_scene(directory, config: MultiViewConfig) -> Path:
    """Scene directory consumed by the ground-truth CLI: view PNGs + cameras.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    views, depth_maps = render_multiview(config)
    meta = {"reference": 0, "stereo_partner": 1, "views": []}
    for i, view in enumerate(views):
        name = f"view_{i:02d}.png"
        image_io.write_png(directory / name, view.image)
        image_io.write_pfm(directory / f"true_depth_{i:02d}.pfm", depth_maps[i])
        meta["views"].append({
            "image": name,
            "intrinsics": view.intrinsics.tolist(),
            "rotation": view.rotation.tolist(),
            "translation": view.translation.tolist(),
        })
    (directory / "cameras.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return directory
