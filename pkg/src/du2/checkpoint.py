"""Binary tensor checkpoint format.

Single tensor block:
    magic "DU2T" | version u32 | rank u32 | extents u64[rank] | payload f64 LE

Named-tensor archive: a sequence of records, each
    name length u32 | UTF-8 name | tensor block
read until EOF. All integers are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DU2T"
VERSION = 1

__all__ = ["write_tensor", "read_tensor", "save_archive", "load_archive", "MAGIC", "VERSION"]


def write_tensor(f, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.float64)
    f.write(MAGIC)
    f.write(struct.pack("<II", VERSION, array.ndim))
    f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    f.write(array.astype("<f8").tobytes())


def read_tensor(f) -> np.ndarray:
    magic = f.read(4)
    if magic != MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}, expected {MAGIC!r}")
    version, rank = struct.unpack("<II", f.read(8))
    if version != VERSION:
        raise ValueError(f"unsupported tensor format version {version}")
    shape = struct.unpack(f"<{rank}Q", f.read(8 * rank))
    count = int(np.prod(shape)) if rank else 1
    payload = f.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def save_archive(path, named: dict) -> None:
    """Write named tensors in the given (insertion) order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        for name, array in named.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            write_tensor(f, np.asarray(array))


def load_archive(path) -> dict:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        while True:
            header = f.read(4)
            if not header:
                break
            if len(header) != 4:
                raise ValueError("truncated archive record header")
            (name_len,) = struct.unpack("<I", header)
            name = f.read(name_len).decode("utf-8")
            out[name] = read_tensor(f)
    return out
