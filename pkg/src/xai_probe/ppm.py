"""Minimal binary netpbm I/O: P6 color images, P5 graymaps (8- and 16-bit).

Images travel through the pipeline as float64 arrays in [0, 1] with shape
(3, H, W); graymaps as (H, W). Files use maxval 255 except score maps,
which use maxval 65535 (big-endian samples, per the netpbm spec).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InputError


def _read_header_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated integers after the magic, skipping
    '#' comments. Returns the values and the offset of the raster start."""
    tokens: list[int] = []
    pos = 2  # past the 2-byte magic
    while len(tokens) < count:
        if pos >= len(data):
            raise ConfigError("truncated netpbm header")
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos : pos + 1].isdigit():
                pos += 1
            tokens.append(int(data[start:pos]))
        else:
            raise ConfigError(f"unexpected byte {ch!r} in netpbm header")
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def write_ppm(path, img: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] as binary P6, maxval 255."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise InputError(f"expected (3, H, W) image, got shape {img.shape}")
    _, h, w = img.shape
    raster = np.round(img * 255.0).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(raster.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file into a (3, H, W) float64 array in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] != b"P6":
        raise ConfigError(f"{path}: not a binary PPM (P6) file")
    (w, h, maxval), offset = _read_header_tokens(data, 3)
    if maxval != 255:
        raise ConfigError(f"{path}: unsupported maxval {maxval}")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=offset)
    img = raster.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0
    return img


def write_pgm(path, gray: np.ndarray, maxval: int = 255) -> None:
    """Write a (H, W) integer graymap as binary P5.

    maxval 255 stores one byte per sample, maxval 65535 two (big-endian).
    """
    if gray.ndim != 2:
        raise InputError(f"expected (H, W) graymap, got shape {gray.shape}")
    h, w = gray.shape
    if maxval == 255:
        raster = gray.astype(np.uint8).tobytes()
    elif maxval == 65535:
        raster = gray.astype(">u2").tobytes()
    else:
        raise InputError(f"unsupported maxval {maxval}")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(raster)


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a binary P5 file. Returns (values, maxval); dtype is int64."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] != b"P5":
        raise ConfigError(f"{path}: not a binary PGM (P5) file")
    (w, h, maxval), offset = _read_header_tokens(data, 3)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    raster = np.frombuffer(data, dtype=dtype, count=w * h, offset=offset)
    return raster.reshape(h, w).astype(np.int64), maxval


def write_mask(path, mask: np.ndarray) -> None:
    """Write a boolean (H, W) mask as P5 with values {0, 255}."""
    write_pgm(path, np.where(mask, 255, 0))


def read_mask(path) -> np.ndarray:
    """Read a mask written by write_mask back into a boolean array."""
    values, _ = read_pgm(path)
    return values > 0
