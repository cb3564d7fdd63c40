"""Raster data model, sensor-count normalization and file I/O.

Images are 3-plane float32 rasters in channel-major (R, G, B) order. The
canonical interchange format is RAWF:

    offset  size  field
    0       4     magic b"RAWF"
    4       4     version      u32 LE (= 1)
    8       4     height       u32 LE
    12      4     width        u32 LE
    16      4     channels     u32 LE (= 3)
    20      4     dtype        u32 LE (0 = float32 LE)
    24      4     meta_length  u32 LE
    28      n     UTF-8 JSON metadata
    28+n    ...   planar payload, 3 * height * width float32 LE

16-bit binary PGM/PPM are supported as a lossy bridge only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

RAWF_MAGIC = b"RAWF"
RAWF_VERSION = 1
_HEADER = struct.Struct("<4s6I")
MAX_DIM = 1 << 16
DISPLAY_GAMMA = 1.0 / 2.2


class RasterFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RasterMeta:
    bit_depth: int = 16
    black_level: tuple[int, int, int] = (0, 0, 0)
    white_level: int = 65535
    sensor_name: str = ""
    sidecar: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        bl = self.black_level
        if np.isscalar(bl):
            bl = (int(bl),) * 3
        object.__setattr__(self, "black_level", tuple(int(b) for b in bl))
        if len(self.black_level) != 3:
            raise ValueError("black_level needs one entry per channel")
        if not 1 <= self.bit_depth <= 32:
            raise ValueError(f"unsupported bit depth {self.bit_depth}")
        top = (1 << self.bit_depth) - 1
        if self.white_level > top:
            raise ValueError(f"white_level {self.white_level} exceeds 2^{self.bit_depth}-1")
        for b in self.black_level:
            if not 0 <= b < self.white_level:
                raise ValueError(
                    f"need 0 <= black_level < white_level, got {b} / {self.white_level}")

    def to_dict(self) -> dict:
        return {
            "bit_depth": self.bit_depth,
            "black_level": list(self.black_level),
            "white_level": self.white_level,
            "sensor_name": self.sensor_name,
            "sidecar": self.sidecar,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RasterMeta":
        return cls(
            bit_depth=int(d.get("bit_depth", 16)),
            black_level=tuple(d.get("black_level", (0, 0, 0))),
            white_level=int(d.get("white_level", 65535)),
            sensor_name=str(d.get("sensor_name", "")),
            sidecar=dict(d.get("sidecar", {})),
        )


class LinearRawImage:
    """Immutable 3 x H x W float32 raster with capture metadata."""

    __slots__ = ("data", "meta")

    def __init__(self, data, meta: RasterMeta | None = None):
        arr = np.array(data, dtype=np.float32, copy=True)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"expected planar (3, H, W) data, got {arr.shape}")
        if arr.shape[1] == 0 or arr.shape[2] == 0:
            raise ValueError("image must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "meta", meta if meta is not None else RasterMeta())

    def __setattr__(self, name, value):
        raise AttributeError("LinearRawImage is immutable")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def with_data(self, data, meta: RasterMeta | None = None) -> "LinearRawImage":
        return LinearRawImage(data, self.meta if meta is None else meta)

    def __repr__(self):
        return f"LinearRawImage({self.height}x{self.width}, sensor={self.meta.sensor_name!r})"


def normalize_raw(counts, meta: RasterMeta) -> LinearRawImage:
    """Map integer sensor counts of shape (3, H, W) into [0, 1] linear RAW."""
    counts = np.asarray(counts)
    if counts.ndim != 3 or counts.shape[0] != len(meta.black_level):
        raise ValueError(f"counts shape {counts.shape} does not match 3 metadata channels")
    top = (1 << meta.bit_depth) - 1
    if counts.size and (counts.min() < 0 or counts.max() > top):
        raise ValueError(f"counts outside [0, {top}] for {meta.bit_depth}-bit data")
    black = np.asarray(meta.black_level, dtype=np.float64)[:, None, None]
    span = float(meta.white_level) - black
    out = np.clip((counts.astype(np.float64) - black) / span, 0.0, 1.0)
    return LinearRawImage(out, meta)


def pack_bayer_rggb(mosaic, meta: RasterMeta) -> LinearRawImage:
    """Half-resolution 3-channel image from an RGGB mosaic; G averages both green sites."""
    cfa = str(meta.sidecar.get("cfa", "RGGB")).upper()
    if cfa != "RGGB":
        raise ValueError(f"unsupported CFA layout {cfa!r}")
    mosaic = np.asarray(mosaic)
    if mosaic.ndim != 2:
        raise ValueError("mosaic must be a 2-D array")
    h, w = mosaic.shape
    if h % 2 or w % 2:
        raise ValueError(f"mosaic dimensions must be even, got {h}x{w}")
    m = mosaic.astype(np.float64)
    r = m[0::2, 0::2]
    g = 0.5 * (m[0::2, 1::2] + m[1::2, 0::2])
    b = m[1::2, 1::2]
    top = (1 << meta.bit_depth) - 1
    if m.size and (m.min() < 0 or m.max() > top):
        raise ValueError(f"counts outside [0, {top}] for {meta.bit_depth}-bit data")
    black = np.asarray(meta.black_level, dtype=np.float64)[:, None, None]
    planes = np.stack([r, g, b])
    out = np.clip((planes - black) / (float(meta.white_level) - black), 0.0, 1.0)
    return LinearRawImage(out, meta)


# --- RAWF -------------------------------------------------------------------

def encode_rawf(image: LinearRawImage) -> bytes:
    meta = json.dumps(image.meta.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = _HEADER.pack(RAWF_MAGIC, RAWF_VERSION, image.height, image.width, 3, 0, len(meta))
    payload = np.ascontiguousarray(image.data, dtype="<f4").tobytes()
    return header + meta + payload


def decode_rawf(buf: bytes) -> LinearRawImage:
    if len(buf) < _HEADER.size:
        raise RasterFormatError("truncated RAWF header")
    magic, version, height, width, channels, dtype, mlen = _HEADER.unpack_from(buf, 0)
    if magic != RAWF_MAGIC:
        raise RasterFormatError(f"bad magic {magic!r}")
    if version != RAWF_VERSION:
        raise RasterFormatError(f"unsupported RAWF version {version}")
    if channels != 3 or dtype != 0:
        raise RasterFormatError(f"unsupported layout channels={channels} dtype={dtype}")
    if not (0 < height <= MAX_DIM and 0 < width <= MAX_DIM):
        raise RasterFormatError(f"dimension overflow {height}x{width}")
    start = _HEADER.size + mlen
    need = start + 3 * height * width * 4
    if len(buf) < need:
        raise RasterFormatError(f"truncated payload: {len(buf)} < {need} bytes")
    if len(buf) > need:
        raise RasterFormatError(f"trailing bytes after payload ({len(buf) - need})")
    try:
        meta = RasterMeta.from_dict(json.loads(buf[_HEADER.size:start].decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RasterFormatError(f"bad metadata blob: {exc}") from exc
    data = np.frombuffer(buf, dtype="<f4", count=3 * height * width, offset=start)
    return LinearRawImage(data.reshape(3, height, width), meta)


# --- PNM --------------------------------------------------------------------

def _pnm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise RasterFormatError("truncated PNM header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def decode_pnm(buf: bytes, meta: RasterMeta | None = None) -> LinearRawImage:
    (magic, w, h, maxval), pos = _pnm_tokens(buf, 4)
    if magic not in (b"P5", b"P6"):
        raise RasterFormatError(f"unsupported PNM type {magic!r}")
    width, height, maxval = int(w), int(h), int(maxval)
    if not (0 < height <= MAX_DIM and 0 < width <= MAX_DIM):
        raise RasterFormatError(f"dimension overflow {height}x{width}")
    if not 0 < maxval <= 65535:
        raise RasterFormatError(f"bad maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = ">u2" if maxval > 255 else "u1"
    n = height * width * channels
    if len(buf) - pos < n * np.dtype(dtype).itemsize:
        raise RasterFormatError("truncated PNM payload")
    samples = np.frombuffer(buf, dtype=dtype, count=n, offset=pos).astype(np.int64)
    if channels == 1:
        planes = np.broadcast_to(samples.reshape(1, height, width), (3, height, width))
    else:
        planes = samples.reshape(height, width, 3).transpose(2, 0, 1)
    if meta is None:
        meta = RasterMeta(bit_depth=16 if maxval > 255 else 8, black_level=(0, 0, 0),
                          white_level=maxval)
    return normalize_raw(planes, meta)


def encode_pnm(image: LinearRawImage, gamma: float = DISPLAY_GAMMA) -> bytes:
    """16-bit P6 preview with a power-law display transform (lossy)."""
    disp = np.clip(image.data.astype(np.float64), 0.0, 1.0) ** gamma
    q = np.floor(disp * 65535.0 + 0.5).astype(">u2")
    header = f"P6\n{image.width} {image.height}\n65535\n".encode("ascii")
    return header + np.ascontiguousarray(q.transpose(1, 2, 0)).tobytes()


def read_raster(path, meta: RasterMeta | None = None) -> LinearRawImage:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] == RAWF_MAGIC:
        return decode_rawf(buf)
    if buf[:2] in (b"P5", b"P6"):
        return decode_pnm(buf, meta)
    raise RasterFormatError(f"{path}: unrecognized raster format")


def write_raster(image: LinearRawImage, path) -> None:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm", ".pgm"):
        path.write_bytes(encode_pnm(image))
    else:
        path.write_bytes(encode_rawf(image))
