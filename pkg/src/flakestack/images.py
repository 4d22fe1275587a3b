"""Float image I/O (PFM) and 8-bit tonemapped previews.

PFM layout: ASCII header ('PF' color / 'Pf' gray, then width height, then a
negative scale marking little-endian floats), followed by float32 rows stored
bottom-to-top. Arrays in memory keep row 0 at the top of the image.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import FileFormatError, ParameterError


def write_pfm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        kind = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        kind = b"PF"
    else:
        raise ParameterError(f"image must be (h, w) or (h, w, 3), got {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(kind + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(np.flipud(image), dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()

    def token(off):
        while off < len(raw) and raw[off : off + 1].isspace():
            off += 1
        start = off
        while off < len(raw) and not raw[off : off + 1].isspace():
            off += 1
        if start == off:
            raise FileFormatError("truncated pfm header")
        return raw[start:off], off + 1

    kind, off = token(0)
    if kind not in (b"PF", b"Pf"):
        raise FileFormatError(f"not a pfm file (magic {kind!r})")
    wtok, off = token(off)
    htok, off = token(off)
    stok, off = token(off)
    try:
        w, h, scale = int(wtok), int(htok), float(stok)
    except ValueError as exc:
        raise FileFormatError(f"malformed pfm header: {exc}") from exc
    if w <= 0 or h <= 0 or scale == 0.0:
        raise FileFormatError("malformed pfm header")
    channels = 3 if kind == b"PF" else 1
    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    if len(raw) - off < 4 * count:
        raise FileFormatError("truncated pfm payload")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=off).astype(np.float32)
    data = data * abs(scale) if abs(scale) != 1.0 else data
    img = data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
    return np.flipud(img).copy()


def tonemap(image: np.ndarray) -> np.ndarray:
    """Map radiance to display: x/(1+x) compression then gamma 1/2.2."""
    x = np.maximum(np.asarray(image, dtype=np.float64), 0.0)
    return (x / (1.0 + x)) ** (1.0 / 2.2)


def write_png_preview(path, image: np.ndarray) -> None:
    arr = np.clip(tonemap(image) * 255.0 + 0.5, 0.0, 255.0).astype(np.uint8)
    mode = "RGB" if arr.ndim == 3 else "L"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")
