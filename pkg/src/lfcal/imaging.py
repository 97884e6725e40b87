"""Float images, bilinear resampling, and binary PGM/PPM I/O."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError


@dataclass(frozen=True, eq=False)
class Image:
    """Row-major samples in [0, 1]; shape ``(height, width)`` or ``(height, width, 3)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] not in (1, 3)):
            raise ValidationError(f"image must be HxW or HxWx3, got shape {data.shape}")
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if not np.all(np.isfinite(data)):
            raise ValidationError("image contains non-finite samples")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape


def bilinear_sample(data, x, y):
    """Sample ``data`` at float pixel coordinates; outside the image returns 0.

    Returns ``(samples, valid)`` where ``valid`` marks in-bounds coordinates.
    """
    data = np.asarray(data, dtype=float)
    h, w = data.shape[:2]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.where(valid, x, 0.0)
    yc = np.where(valid, y, 0.0)
    x0 = np.clip(np.floor(xc).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(yc).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    if data.ndim == 3:
        fx, fy, m = fx[..., None], fy[..., None], valid[..., None]
    else:
        m = valid
    top = data[y0, x0] * (1 - fx) + data[y0, x1] * fx
    bot = data[y1, x0] * (1 - fx) + data[y1, x1] * fx
    return np.where(m, top * (1 - fy) + bot * fy, 0.0), valid


# ---------------------------------------------------------------------------
# PNM
# ---------------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pnm(path) -> Image:
    """Read a binary PGM (P5) or PPM (P6) with maxval <= 255."""
    with open(path, "rb") as fh:
        raw = fh.read()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if not m:
            raise ParseError("truncated header", context=str(path))
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r}; expected P5 or P6", context=str(path))
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError("non-integer header field", context=str(path)) from None
    if width < 1 or height < 1 or not 0 < maxval <= 255:
        raise ParseError(f"bad header values {width}x{height} maxval {maxval}", context=str(path))
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    body = raw[pos:pos + n]
    if len(body) != n:
        raise ParseError(f"expected {n} sample bytes, found {len(body)}", context=str(path))
    arr = np.frombuffer(body, dtype=np.uint8).astype(float) / maxval
    shape = (height, width) if channels == 1 else (height, width, 3)
    return Image(arr.reshape(shape))


def to_bytes(img: Image) -> bytes:
    data = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    magic = b"P5" if img.channels == 1 else b"P6"
    return magic + f"\n{img.width} {img.height}\n255\n".encode() + data.tobytes()


def write_pnm(img: Image, path):
    """Write P5 or P6 depending on channel count; atomic via rename."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(to_bytes(img))
    os.replace(tmp, path)


def quantize(img: Image) -> Image:
    """Round samples to the 8-bit grid used by PGM/PPM."""
    return Image(np.clip(np.rint(img.data * 255.0), 0, 255) / 255.0)
