"""Binary PPM (P6, maxval 255) reading and writing."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    out, i, n = [], 0, len(buf)
    while len(out) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i : i + 1].isspace() and buf[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("truncated PPM header")
        out.append(buf[start:i])
    # exactly one whitespace byte separates maxval from the raster
    if i >= n or not buf[i : i + 1].isspace():
        raise ImageFormatError("missing whitespace after PPM header")
    return out, i + 1


def decode_ppm(buf: bytes) -> np.ndarray:
    """Bytes of a P6 file -> (H, W, 3) uint8 array."""
    (magic, w, h, maxval), offset = _tokens(buf, 4)
    if magic != b"P6":
        raise ImageFormatError(f"not a binary PPM (magic {magic!r})")
    try:
        width, height, maxv = int(w), int(h), int(maxval)
    except ValueError:
        raise ImageFormatError("non-numeric PPM header field") from None
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad PPM dimensions {width}x{height}")
    if maxv != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxv}")
    need = width * height * 3
    raster = buf[offset : offset + need]
    if len(raster) != need:
        raise ImageFormatError(f"PPM raster truncated: expected {need} bytes, got {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ImageFormatError(f"expected (H, W, 3) uint8 pixels, got {pixels.shape} {pixels.dtype}")
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels).tobytes()


def read_ppm(path) -> np.ndarray:
    try:
        return decode_ppm(Path(path).read_bytes())
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from None


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ppm(path, pixels: np.ndarray) -> None:
    atomic_write_bytes(path, encode_ppm(pixels))


def to_float(pixels: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float64 in [0, 1]."""
    return np.asarray(pixels, dtype=np.float64).transpose(2, 0, 1) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3, H, W) float -> (H, W, 3) uint8 via round(255 * clamp(x, 0, 1))."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(img * 255.0).astype(np.uint8).transpose(1, 2, 0)


def gray_to_uint8(values: np.ndarray) -> np.ndarray:
    """(H, W) values in [0, 1] -> (H, W, 3) uint8 gray."""
    v = np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.repeat(v[:, :, None], 3, axis=2)


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".ppm" and p.is_file())
