"""Float RGB raster plus the on-disk image formats (PPM, PFM, PNG).

PFM is the lossless interchange format (32-bit little-endian float, bottom-up
rows per the format spec). PPM/PNG are 8-bit previews with a plain linear
clamp to [0, 1], no color management.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidInputError


@dataclass
class ImageBuffer:
    pixels: np.ndarray                      # (H, W, 3) float
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise InvalidInputError("pixels must be (H, W, 3)")
        if not np.all(np.isfinite(self.pixels)):
            raise InvalidInputError("non-finite pixel values")
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @staticmethod
    def filled(width, height, value=(0.0, 0.0, 0.0)) -> "ImageBuffer":
        px = np.broadcast_to(np.asarray(value, dtype=np.float64), (height, width, 3)).copy()
        return ImageBuffer(px, np.asarray(value, dtype=np.float64))


def to_uint8(pixels) -> np.ndarray:
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


# -- PPM (P6, 8-bit) --------------------------------------------------------

def encode_ppm(img: ImageBuffer) -> bytes:
    body = to_uint8(img.pixels).tobytes()
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + body


def write_ppm(img: ImageBuffer, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))


def read_ppm(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P6"):
        raise FormatError("ppm: bad magic")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    data = np.frombuffer(raw[pos:pos + w * h * 3], dtype=np.uint8)
    if data.size != w * h * 3:
        raise FormatError("ppm: truncated")
    return ImageBuffer(data.reshape(h, w, 3).astype(np.float64) / maxval)


# -- PFM (32-bit float, little-endian) ---------------------------------------

def encode_pfm(img: ImageBuffer) -> bytes:
    header = f"PF\n{img.width} {img.height}\n-1.0\n".encode("ascii")
    rows = img.pixels[::-1].astype("<f4")  # PFM stores rows bottom-up
    return header + rows.tobytes()


def write_pfm(img: ImageBuffer, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pfm(img))


def read_pfm(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise FormatError("pfm: bad header")
    if parts[0] == b"Pf":
        raise FormatError("pfm: grayscale not supported")
    w, h = (int(v) for v in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    body = parts[3]
    if len(body) < w * h * 3 * 4:
        raise FormatError("pfm: truncated")
    data = np.frombuffer(body[:w * h * 12], dtype=dtype).reshape(h, w, 3)
    return ImageBuffer(data[::-1].astype(np.float64))


# -- PNG (8-bit RGB, zlib, filter 0) -----------------------------------------

def encode_png(img: ImageBuffer) -> bytes:
    u8 = to_uint8(img.pixels)
    h, w, _ = u8.shape
    raster = b"".join(b"\x00" + u8[r].tobytes() for r in range(h))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (struct.pack(">I", len(payload)) + tag + payload
                + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(raster, 9)) + chunk(b"IEND", b""))


def load_image(path) -> ImageBuffer:
    """Load by extension (.pfm or .ppm)."""
    p = str(path)
    if p.endswith(".pfm"):
        return read_pfm(p)
    if p.endswith(".ppm"):
        return read_ppm(p)
    raise FormatError(f"unsupported image extension: {p}")


def save_image(img: ImageBuffer, path) -> None:
    p = str(path)
    if p.endswith(".pfm"):
        write_pfm(img, p)
    elif p.endswith(".ppm"):
        write_ppm(img, p)
    elif p.endswith(".png"):
        with open(p, "wb") as fh:
            fh.write(encode_png(img))
    else:
        raise FormatError(f"unsupported image extension: {p}")
