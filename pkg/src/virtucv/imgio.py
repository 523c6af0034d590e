"""Image persistence: RGB PNG for 8-bit buffers, PFM for float depth.

PNG stores lit/mask/normal buffers losslessly; a write/read round trip
reproduces the array byte for byte.

Depth uses the Portable FloatMap (PFM) format because PNG has no standard
float channel.  Layout written here:

    Pf\n
    {width} {height}\n
    -1.0\n
    <height rows of width float32 values, bottom row first, little-endian>

The negative scale marks little-endian data, as PFM readers expect.  +inf
(the no-hit sentinel) is written as the IEEE infinity bit pattern and read
back exactly.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def write_png(path: str, rgb: np.ndarray) -> None:
    """Write an (h, w, 3) uint8 array as an RGB PNG."""
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) uint8 array, got {rgb.dtype} {rgb.shape}")
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def read_png(path: str) -> np.ndarray:
    """Read an RGB PNG back into an (h, w, 3) uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_pfm(path: str, depth: np.ndarray) -> None:
    """Write an (h, w) float32 array as a grayscale little-endian PFM."""
    if depth.dtype != np.float32 or depth.ndim != 2:
        raise ValueError(f"expected (h, w) float32 array, got {depth.dtype} {depth.shape}")
    h, w = depth.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    rows = np.ascontiguousarray(depth[::-1], dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rows.tobytes())


def read_pfm(path: str) -> np.ndarray:
    """Read a grayscale PFM back into an (h, w) float32 array."""
    with open(path, "rb") as fh:
        magic = _read_token(fh)
        if magic != b"Pf":
            raise ValueError(f"not a grayscale PFM (magic {magic!r})")
        w = int(_read_token(fh))
        h = int(_read_token(fh))
        scale = float(_read_token(fh))
        if w <= 0 or h <= 0:
            raise ValueError(f"bad PFM dimensions {w}x{h}")
        dtype = "<f4" if scale < 0 else ">f4"
        data = fh.read(w * h * 4)
    if len(data) != w * h * 4:
        raise ValueError(f"PFM truncated: expected {w * h * 4} bytes, got {len(data)}")
    rows = np.frombuffer(data, dtype=dtype).reshape(h, w)
    return np.ascontiguousarray(rows[::-1]).astype(np.float32, copy=False)


def _read_token(fh) -> bytes:
    """One whitespace-delimited header token; consumes the single terminator."""
    token = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise ValueError("PFM header truncated")
        if ch in b" \t\r\n":
            if token:
                return token
            continue
        token += ch
