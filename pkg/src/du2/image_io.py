"""PFM and PNG readers/writers plus a fixed color ramp for disparity renders.

PFM follows the usual convention: "Pf"/"PF" header, width height, negative
scale for little-endian, rows stored bottom-up, float32 samples. Two-channel
fields (warp maps) are stored as color PFM with a zero third channel since
the format has no native two-channel variant.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "read_pfm",
    "write_pfm",
    "read_png",
    "write_png",
    "turbo_colormap",
    "write_disparity_png",
]


def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        channels = 1
        raster = data[None]
    elif data.ndim == 3 and data.shape[0] in (1, 2, 3):
        raster = data
        if data.shape[0] == 1:
            channels = 1
        else:
            channels = 3
            if data.shape[0] == 2:
                raster = np.concatenate([data, np.zeros_like(data[:1])], axis=0)
    else:
        raise ValueError(f"cannot store array of shape {data.shape} as PFM")
    header = b"PF\n" if channels == 3 else b"Pf\n"
    h, w = raster.shape[1:]
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")  # little-endian
        interleaved = np.ascontiguousarray(raster.transpose(1, 2, 0)[::-1], dtype="<f4")
        f.write(interleaved.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file: header {header!r}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(f.read(4 * w * h * channels), dtype=dtype)
    raster = raw.reshape(h, w, channels)[::-1].astype(np.float64)
    if channels == 1:
        return raster[:, :, 0]
    return raster.transpose(2, 0, 1)


def write_png(path, image: np.ndarray) -> None:
    """Store a [3, H, W] or [H, W] float image in [0, 1] as 8-bit PNG."""
    image = np.asarray(image, dtype=np.float64)
    quantized = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    if quantized.ndim == 3:
        Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")
    else:
        Image.fromarray(quantized, mode="L").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


# quintic fit of the turbo ramp, evaluated on values scaled to [0, 1]
_TURBO = np.array([
    [0.13572138, 4.61539260, -42.66032258, 132.13108234, -152.94239396, 59.28637943],
    [0.09140261, 2.19418839, 4.84296658, -14.18503333, 4.27729857, 2.82956604],
    [0.10667330, 12.64194608, -60.58204836, 110.36276771, -89.90310912, 27.34824973],
])


def turbo_colormap(values01: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(values01, dtype=np.float64), 0.0, 1.0)
    powers = np.stack([np.ones_like(x), x, x**2, x**3, x**4, x**5], axis=0)
    rgb = np.tensordot(_TURBO, powers, axes=([1], [0]))
    return np.clip(rgb, 0.0, 1.0)


def write_disparity_png(path, disparity: np.ndarray, vmin=None, vmax=None):
    """Render a disparity map through the fixed turbo ramp; returns (vmin, vmax)."""
    disparity = np.asarray(disparity, dtype=np.float64)
    lo = float(disparity.min()) if vmin is None else float(vmin)
    hi = float(disparity.max()) if vmax is None else float(vmax)
    span = hi - lo if hi > lo else 1.0
    write_png(path, turbo_colormap((disparity - lo) / span))
    return lo, hi
