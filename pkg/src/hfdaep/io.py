"""HFDP tensor files, flat config files and 8-bit previews."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["save_tensor", "load_tensor", "read_config", "write_config", "save_preview"]

_MAGIC = b"HFDP"
_VERSION = 1
_F64, _F32, _C128 = 1, 2, 3


def save_tensor(path, arr) -> None:
    """Write an array in HFDP format.

    Layout: ``b"HFDP"``, u8 version (1), u8 dtype (1 = f64, 2 = f32,
    3 = complex as f64 pairs), u8 ndim, ndim little-endian u32 dims, then
    little-endian row-major values (channels outermost). Booleans are
    stored as 0/1 f64.
    """
    arr = np.asarray(arr)
    if arr.dtype == np.float32:
        code, raw = _F32, arr.astype("<f4")
    elif np.iscomplexobj(arr):
        code, raw = _C128, arr.astype("<c16")
    else:
        code, raw = _F64, arr.astype("<f8")
    header = _MAGIC + struct.pack("<BBB", _VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(raw).tobytes())


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not an HFDP file")
    version, code, ndim = struct.unpack_from("<BBB", data, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported HFDP version {version}")
    dims = struct.unpack_from(f"<{ndim}I", data, 7)
    off = 7 + 4 * ndim
    dtype = {_F64: "<f8", _F32: "<f4", _C128: "<c16"}.get(code)
    if dtype is None:
        raise ValueError(f"{path}: unknown dtype code {code}")
    count = int(np.prod(dims)) if dims else 1
    arr = np.frombuffer(data, dtype, count, off)
    if off + arr.nbytes != len(data):
        raise ValueError(f"{path}: size does not match header")
    return arr.reshape(dims).astype(arr.dtype.newbyteorder("="))


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def write_config(path, values: dict, comment: str | None = None) -> None:
    lines = [f"# {comment}"] if comment else []
    lines += [f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def save_preview(path, img) -> tuple[float, float]:
    """Write an 8-bit grayscale PNG with min-max windowing; return the window."""
    from PIL import Image

    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pix = np.clip(np.rint((img - lo) * scale), 0, 255).astype(np.uint8)
    Image.fromarray(pix, mode="L").save(path)
    return lo, hi
