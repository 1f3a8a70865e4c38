"""Differentiable network operations: convolutions, activations, resampling.

Convolutions are cross-correlations with zero padding, lowered to a single
BLAS call through windowed views; the input gradient is scattered back with a
cached ``bincount`` index map so training stays fast in pure numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import NumericError, ShapeError, Tensor, _from_op, _require_finite, as_tensor

__all__ = [
    "ConvSpec",
    "conv2d",
    "conv3d",
    "leaky_relu",
    "softmax_axis",
    "sample_bilinear2d",
    "identity_coords",
    "upsample_coords",
]


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a convolution layer.

    ``padding=None`` pads by ``dilation * (kernel - 1) // 2`` per axis, which
    preserves spatial extent at stride 1 (odd kernels).
    """

    in_channels: int
    out_channels: int
    kernel: tuple
    stride: int = 1
    dilation: int = 1
    padding: tuple | None = None

    def __post_init__(self):
        if self.stride < 1 or self.dilation < 1:
            raise ShapeError("stride and dilation must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be positive")

    @property
    def rank(self) -> int:
        return len(self.kernel)

    def pad_amounts(self) -> tuple:
        if self.padding is not None:
            return tuple(int(p) for p in self.padding)
        return tuple(self.dilation * (k - 1) // 2 for k in self.kernel)

    def out_extent(self, extent: int, axis: int) -> int:
        p = self.pad_amounts()[axis]
        k = self.kernel[axis]
        return (extent + 2 * p - self.dilation * (k - 1) - 1) // self.stride + 1

    def weight_shape(self) -> tuple:
        return (self.out_channels, self.in_channels) + tuple(self.kernel)


_SCATTER_CACHE: dict[tuple, np.ndarray] = {}


def _col2im_indices(padded_shape, kernel, stride, dilation, out_spatial) -> np.ndarray:
    """Flat int32 indices of every (channel, tap, output-site) gather position."""
    key = (padded_shape, kernel, stride, dilation, out_spatial)
    cached = _SCATTER_CACHE.get(key)
    if cached is not None:
        return cached
    c_extent = padded_shape[0]
    spatial = padded_shape[1:]
    nd = len(kernel)
    # flat index ((c * H + y) * W + x)... over arrays of shape [C, k..., o...]
    full_rank = 1 + 2 * nd
    flat = np.arange(c_extent, dtype=np.int64).reshape((c_extent,) + (1,) * (full_rank - 1))
    for d in range(nd):
        pos = (
            np.arange(kernel[d], dtype=np.int64)[:, None] * dilation
            + np.arange(out_spatial[d], dtype=np.int64)[None, :] * stride
        )
        shape = [1] * full_rank
        shape[1 + d] = kernel[d]
        shape[1 + nd + d] = out_spatial[d]
        flat = flat * spatial[d] + pos.reshape(shape)
    flat = np.ascontiguousarray(
        np.broadcast_to(flat, (c_extent,) + tuple(kernel) + tuple(out_spatial))
    ).astype(np.int32)
    _SCATTER_CACHE[key] = flat
    return flat


def _im2col(data: np.ndarray, kernel, stride, dilation, pads, out_spatial):
    """Contiguous [taps, sites] gather of convolution windows (zero padded)."""
    nd = len(kernel)
    if any(pads):
        xp = np.zeros((data.shape[0],) + tuple(n + 2 * p for n, p in zip(data.shape[1:], pads)))
        core = (slice(None),) + tuple(slice(p, p + n) for p, n in zip(pads, data.shape[1:]))
        xp[core] = data
    else:
        xp = data
    window = tuple(dilation * (k - 1) + 1 for k in kernel)
    win = sliding_window_view(xp, window, axis=tuple(range(1, nd + 1)))
    slicer = (slice(None),) + tuple(slice(None, None, stride) for _ in range(nd))
    slicer += tuple(slice(None, None, dilation) for _ in range(nd))
    win = win[slicer]  # [C, o..., k...]
    order = (0,) + tuple(range(1 + nd, 1 + 2 * nd)) + tuple(range(1, 1 + nd))
    taps = data.shape[0] * int(np.prod(kernel))
    sites = int(np.prod(out_spatial))
    cols = np.ascontiguousarray(win.transpose(order)).reshape(taps, sites)
    return cols, xp.shape


def _conv_nd(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None, op: str) -> Tensor:
    nd = spec.rank
    if x.ndim != nd + 1:
        raise ShapeError(f"{op}: expected {nd + 1}-d input [C, spatial...], got {x.shape}")
    if x.shape[0] != spec.in_channels:
        raise ShapeError(f"{op}: input has {x.shape[0]} channels, spec expects {spec.in_channels}")
    if weight.shape != spec.weight_shape():
        raise ShapeError(f"{op}: weight shape {weight.shape} does not match spec {spec.weight_shape()}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"{op}: bias shape {bias.shape}, expected ({spec.out_channels},)")
    _require_finite(op, x.data, weight.data)

    pads = spec.pad_amounts()
    out_spatial = tuple(spec.out_extent(x.shape[1 + d], d) for d in range(nd))
    if any(n < 1 for n in out_spatial):
        raise ShapeError(f"{op}: output extent would be empty for input {x.shape}")

    # one contiguous im2col copy reused by the forward and weight-grad GEMMs
    sites = int(np.prod(out_spatial))
    taps = spec.in_channels * int(np.prod(spec.kernel))
    cols, padded_shape = _im2col(x.data, spec.kernel, spec.stride, spec.dilation, pads, out_spatial)
    w_mat = weight.data.reshape(spec.out_channels, taps)
    out = (w_mat @ cols).reshape((spec.out_channels,) + out_spatial)
    if bias is not None:
        out = out + bias.data.reshape((spec.out_channels,) + (1,) * nd)

    # stride-1 same-padded convs take the all-GEMM input-grad path: the
    # gradient is a same-padded correlation with flipped, channel-swapped
    # weights; everything else scatters per-tap contributions with bincount
    same = (
        spec.stride == 1
        and spec.dilation == 1
        and all(k % 2 == 1 for k in spec.kernel)
        and pads == tuple((k - 1) // 2 for k in spec.kernel)
    )

    def bw(g):
        g_mat = g.reshape(spec.out_channels, sites)
        gw = (g_mat @ cols.T).reshape(weight.data.shape)
        gb = g_mat.sum(axis=1) if bias is not None else None
        if same:
            flipped = np.flip(weight.data, axis=tuple(range(2, 2 + nd)))
            w_t = np.ascontiguousarray(flipped.transpose((1, 0) + tuple(range(2, 2 + nd))))
            gcols, _ = _im2col(g, spec.kernel, 1, 1, pads, x.shape[1:])
            gx = (w_t.reshape(spec.in_channels, -1) @ gcols).reshape(x.shape)
        else:
            gcols = w_mat.T @ g_mat  # [taps, sites] in [C, k..., o...] order
            idx = _col2im_indices(padded_shape, spec.kernel, spec.stride, spec.dilation,
                                  out_spatial)
            gxp = np.bincount(idx.ravel(), weights=gcols.ravel(), minlength=int(np.prod(padded_shape)))
            gxp = gxp.reshape(padded_shape)
            crop = (slice(None),) + tuple(slice(p, p + n) for p, n in zip(pads, x.shape[1:]))
            gx = gxp[crop]
        if bias is not None:
            return (gx, gw, gb)
        return (gx, gw)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _from_op(out, parents, bw, op)


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """2-d cross-correlation with zero padding; input [C, H, W]."""
    if spec.rank != 2:
        raise ShapeError("conv2d requires a 2-d kernel spec")
    return _conv_nd(x, spec, weight, bias, "conv2d")


def conv3d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """3-d cross-correlation with zero padding; input [C, D, H, W]."""
    if spec.rank != 3:
        raise ShapeError("conv3d requires a 3-d kernel spec")
    return _conv_nd(x, spec, weight, bias, "conv3d")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    """x if x >= 0 else slope * x; the subgradient at 0 is the positive branch."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    _require_finite("leaky_relu", x.data)
    positive = x.data >= 0.0
    out = np.where(positive, x.data, slope * x.data)

    def bw(g):
        return (np.where(positive, g, slope * g),)

    return _from_op(out, (x,), bw, "leaky_relu")


def softmax_axis(x, axis: int, temperature: float = 1.0) -> Tensor:
    """Temperature softmax along one axis, computed max-subtracted.

    out_i = exp(x_i / t) / sum_j exp(x_j / t); rows sum to 1 within 1e-9.
    """
    if temperature <= 0.0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    x = as_tensor(x)
    _require_finite("softmax_axis", x.data)
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner) / temperature,)

    return _from_op(out, (x,), bw, "softmax_axis")


def _bilinear_parts(src: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Taps, weights and in-range masks of bilinear sampling with zero padding."""
    c, h, w = src.shape
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    ix0 = x0.astype(np.int64)
    iy0 = y0.astype(np.int64)
    taps = []
    for dy, dx, wt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        iy = iy0 + dy
        ix = ix0 + dx
        inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        iyc = np.clip(iy, 0, h - 1)
        ixc = np.clip(ix, 0, w - 1)
        val = src[:, iyc, ixc] * inside  # out-of-range taps contribute zero
        taps.append((iyc, ixc, inside, wt, val))
    return taps, fx, fy


def sample_bilinear2d(src: Tensor, coords: Tensor) -> Tensor:
    """Bilinear sampling of ``src`` [C, H, W] at absolute pixel positions.

    ``coords`` is [2, H', W'] holding (x, y); samples outside
    [0, W-1] x [0, H-1] use zero padding. Differentiable in both arguments.
    """
    src = as_tensor(src)
    coords = as_tensor(coords)
    if src.ndim != 3:
        raise ShapeError(f"sample_bilinear2d: src must be [C, H, W], got {src.shape}")
    if coords.ndim != 3 or coords.shape[0] != 2:
        raise ShapeError(f"sample_bilinear2d: coords must be [2, H', W'], got {coords.shape}")
    _require_finite("sample_bilinear2d", src.data, coords.data)

    x = coords.data[0]
    y = coords.data[1]
    taps, _, _ = _bilinear_parts(src.data, x, y)
    out = taps[0][4] * taps[0][3]
    for _, _, _, wt, val in taps[1:]:
        out = out + val * wt

    def bw(g):
        c, h, w = src.shape
        gsrc = np.zeros(c * h * w)
        chan_offset = (np.arange(c) * (h * w))[:, None]
        for iyc, ixc, inside, wt, _ in taps:
            contrib = (g * wt * inside).reshape(c, -1)
            flat = chan_offset + (iyc * w + ixc).ravel()[None, :]
            gsrc += np.bincount(flat.ravel(), weights=contrib.ravel(), minlength=gsrc.size)
        gsrc = gsrc.reshape(c, h, w)
        # d(out)/dx = (1-fy) * (v10 - v00) + fy * (v11 - v01), channel-summed
        v00, v01, v10, v11 = (t[4] for t in taps)
        w00, w01, w10, w11 = (t[3] for t in taps)
        # recover fx, fy from the weights: fy = w10 + w11, fx = w01 + w11
        fy = w10 + w11
        fx = w01 + w11
        dox = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
        doy = (1 - fx) * (v10 - v00) + fx * (v11 - v01)
        gx = (g * dox).sum(axis=0)
        gy = (g * doy).sum(axis=0)
        return (gsrc, np.stack([gx, gy], axis=0))

    return _from_op(out, (src, coords), bw, "sample_bilinear2d")


def identity_coords(height: int, width: int) -> np.ndarray:
    """Coordinate grid that makes sample_bilinear2d the exact identity."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([xs, ys], axis=0)


def upsample_coords(out_hw: tuple, src_hw: tuple, clamp: bool = True) -> np.ndarray:
    """Source positions for bilinear upsampling (pixel-center alignment).

    Clamping keeps border samples inside the source so upsampling replicates
    edges instead of fading to the zero pad.
    """
    oh, ow = out_hw
    sh, sw = src_hw
    ys = (np.arange(oh) + 0.5) * (sh / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (sw / ow) - 0.5
    if clamp:
        ys = np.clip(ys, 0.0, sh - 1.0)
        xs = np.clip(xs, 0.0, sw - 1.0)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=0)
