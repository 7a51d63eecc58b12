"""Binary 8-bit PPM (P6) read/write for (3, H, W) float images in [0, 1]."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import IngestionError


def _tokens(buf: bytes, count: int):
    """Pull ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out, i = [], 0
    while len(out) < count:
        while i < len(buf) and buf[i:i + 1].isspace():
            i += 1
        if buf[i:i + 1] == b"#":
            while i < len(buf) and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j:j + 1].isspace():
            j += 1
        if j == i:
            raise IngestionError("truncated PPM header")
        out.append(buf[i:j])
        i = j
    return out, i + 1  # exactly one whitespace byte before the raster


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), start = _tokens(buf, 4)
    if magic != b"P6":
        raise IngestionError(f"{path}: not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise IngestionError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    raster = buf[start:start + 3 * w * h]
    if len(raster) != 3 * w * h:
        raise IngestionError(f"{path}: expected {3 * w * h} raster bytes, found {len(raster)}")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return img.transpose(2, 0, 1).astype(np.float32) / np.float32(255)


def write_ppm(path, img) -> None:
    a = np.asarray(img)
    if a.ndim == 4:
        a = a[0]
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {a.shape}")
    u8 = np.clip(np.rint(a.astype(np.float64) * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    h, w = u8.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + u8.tobytes())
