"""Bilateral grid of structured 3x3 color matrices.

Each cell holds nine raw coefficients (d_hat[3], a_hat[6]) that map to
``M = diag(exp(tanh(d_hat))) @ (I + k * tanh(A_hat))`` with a zero-diagonal
mixing term. Matrices are materialized once per grid and slicing
interpolates the materialized entries, never the raw coefficients.

Slicing convention, identical on all three axes: the continuous coordinate
``u = x * G_w / W`` (resp. ``y * G_h / H``, ``l * G_d``) selects the lower
vertex ``i0 = clamp(floor(u), 0, G - 1)``, upper vertex
``i1 = min(i0 + 1, G - 1)`` and fraction ``f = clamp(u - i0, 0, 1)``. At and
beyond the last vertex both corners coincide, which equals clamping. Interpolation is a nested lerp
``a + f * (b - a)``, which is exact on constant fields and at vertices.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .raster import LinearRawImage

DEFAULT_K = 0.05
DEFAULT_DEPTH = 8
DEFAULT_CELL = 16
# a_hat slot order: A12, A13, A21, A23, A31, A32
OFFDIAG = ((0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1))

GRID_MAGIC = b"RGRD"
_GRID_HEADER = struct.Struct("<4s5I")


@dataclass(frozen=True)
class GridCoeffs:
    """Raw grid coefficients, shape (G_d, G_h, G_w, 9): d_hat x3 then a_hat x6."""

    raw: np.ndarray
    k: float = DEFAULT_K

    def __post_init__(self):
        raw = np.array(self.raw, dtype=np.float64)
        if raw.ndim != 4 or raw.shape[-1] != 9:
            raise ValueError(f"expected (G_d, G_h, G_w, 9) coefficients, got {raw.shape}")
        if min(raw.shape[:3]) < 1:
            raise ValueError("grid dimensions must be positive")
        if not np.all(np.isfinite(raw)):
            raise ValueError("grid coefficients must be finite")
        if not 0.0 < self.k < 0.5:
            raise ValueError(f"activation bound k must lie in (0, 0.5), got {self.k}")
        raw.flags.writeable = False
        object.__setattr__(self, "raw", raw)

    @property
    def depth(self) -> int:
        return self.raw.shape[0]

    @property
    def height(self) -> int:
        return self.raw.shape[1]

    @property
    def width(self) -> int:
        return self.raw.shape[2]

    @classmethod
    def zeros(cls, image_height: int, image_width: int, depth: int = DEFAULT_DEPTH,
              cell: int = DEFAULT_CELL, k: float = DEFAULT_K) -> "GridCoeffs":
        gh = max(1, math.ceil(image_height / cell))
        gw = max(1, math.ceil(image_width / cell))
        return cls(np.zeros((depth, gh, gw, 9)), k)

    def materialize(self) -> np.ndarray:
        """Per-cell matrices, shape (G_d, G_h, G_w, 3, 3)."""
        return build_matrices(self.raw[..., :3], self.raw[..., 3:], self.k)


def gains(d_hat) -> np.ndarray:
    """Diagonal gains exp(tanh(d_hat)), each within [1/e, e]."""
    return np.exp(np.tanh(np.asarray(d_hat, dtype=np.float64)))


def mixing(a_hat, k: float = DEFAULT_K) -> np.ndarray:
    """Unit-diagonal mixing matrices I + k tanh(A_hat), shape (..., 3, 3)."""
    a = k * np.tanh(np.asarray(a_hat, dtype=np.float64))
    mix = np.zeros(a.shape[:-1] + (3, 3))
    mix[..., 0, 0] = mix[..., 1, 1] = mix[..., 2, 2] = 1.0
    for slot, (i, j) in enumerate(OFFDIAG):
        mix[..., i, j] = a[..., slot]
    return mix


def compose(d, mix) -> np.ndarray:
    """diag(d) @ mix over leading axes."""
    return np.asarray(d, dtype=np.float64)[..., :, None] * mix


def build_matrices(d_hat, a_hat, k: float = DEFAULT_K) -> np.ndarray:
    """Vectorized D(I + A) over leading axes of ``d_hat`` (..., 3) and ``a_hat`` (..., 6)."""
    d_hat = np.asarray(d_hat, dtype=np.float64)
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if not 0.0 < k < 0.5:
        raise ValueError(f"activation bound k must lie in (0, 0.5), got {k}")
    if not (np.all(np.isfinite(d_hat)) and np.all(np.isfinite(a_hat))):
        raise ValueError("coefficients must be finite")
    return compose(gains(d_hat), mixing(a_hat, k))


def build_matrix(d_hat, a_hat, k: float = DEFAULT_K) -> np.ndarray:
    d_hat = np.asarray(d_hat, dtype=np.float64)
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if d_hat.shape != (3,) or a_hat.shape != (6,):
        raise ValueError("build_matrix takes 3 gain and 6 mixing coefficients")
    return build_matrices(d_hat, a_hat, k)


def invert_cell(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    inv = np.linalg.inv(M)
    resid = np.max(np.abs(inv @ M - np.eye(3)), axis=(-2, -1))
    # Invertibility is guaranteed by construction for matrices from build_matrix.
    assert np.all(resid < 1e-10), f"inverse residual {np.max(resid):.3e}"
    return inv


def axis_coord(u, size: int):
    """Lower vertex index and fraction for continuous coordinate(s) ``u``."""
    u = np.asarray(u, dtype=np.float64)
    if size < 2:
        return np.zeros(u.shape, dtype=np.int64), np.zeros(u.shape)
    i0 = np.clip(np.floor(u), 0, size - 1).astype(np.int64)
    f = np.clip(u - i0, 0.0, 1.0)
    return i0, f


def trilinear_weights(fd: float, fh: float, fw: float) -> np.ndarray:
    """Eight corner weights indexed [dd, dh, dw] over {0,1}^3."""
    wd = np.array([1.0 - fd, fd])
    wh = np.array([1.0 - fh, fh])
    ww = np.array([1.0 - fw, fw])
    return wd[:, None, None] * wh[None, :, None] * ww[None, None, :]


def _lerp(a, b, f):
    return a + f * (b - a)


def slice_matrix(mats: np.ndarray, x: float, y: float, lum: float, W: int, H: int) -> np.ndarray:
    """Interpolated 3x3 matrix at pixel (x, y) with luminance ``lum``."""
    if not (0 <= x < W and 0 <= y < H):
        raise ValueError(f"pixel ({x}, {y}) outside {W}x{H} image")
    gd, gh, gw = mats.shape[:3]
    d0, fd = axis_coord(lum * gd, gd)
    h0, fh = axis_coord(y * gh / H, gh)
    w0, fw = axis_coord(x * gw / W, gw)
    d0, h0, w0 = int(d0), int(h0), int(w0)
    d1, h1, w1 = min(d0 + 1, gd - 1), min(h0 + 1, gh - 1), min(w0 + 1, gw - 1)

    def along_w(d, h):
        return _lerp(mats[d, h, w0], mats[d, h, w1], fw)

    def along_h(d):
        return _lerp(along_w(d, h0), along_w(d, h1), fh)

    return _lerp(along_h(d0), along_h(d1), fd)


@numba.njit(cache=True, nogil=True)
def _axis(u, size):
    if size < 2:
        return 0, 0, 0.0
    i0 = min(max(int(math.floor(u)), 0), size - 1)
    return i0, min(i0 + 1, size - 1), min(max(u - i0, 0.0), 1.0)


@numba.njit(cache=True, nogil=True)
def _render_kernel(mats, img, lum, out):
    # mats: (G_d, G_h, G_w, 9). Lerp order h, then w, then d; each step is
    # a + f * (b - a), exact on constant fields and at vertices.
    gd, gh, gw = mats.shape[0], mats.shape[1], mats.shape[2]
    H, W = img.shape[1], img.shape[2]
    w0s = np.empty(W, dtype=np.int64)
    w1s = np.empty(W, dtype=np.int64)
    fws = np.empty(W)
    for x in range(W):
        w0s[x], w1s[x], fws[x] = _axis(x * gw / W, gw)
    rowmats = np.empty((gd, gw, 9))
    for y in range(H):
        h0, h1, fh = _axis(y * gh / H, gh)
        for d in range(gd):
            for w in range(gw):
                for e in range(9):
                    a = mats[d, h0, w, e]
                    rowmats[d, w, e] = a + fh * (mats[d, h1, w, e] - a)
        for x in range(W):
            w0 = w0s[x]
            w1 = w1s[x]
            fw = fws[x]
            d0, d1, fd = _axis(lum[y, x] * gd, gd)
            v0 = np.float64(img[0, y, x])
            v1 = np.float64(img[1, y, x])
            v2 = np.float64(img[2, y, x])
            for r in range(3):
                acc = 0.0
                for c in range(3):
                    e = 3 * r + c
                    a0 = rowmats[d0, w0, e]
                    a0 = a0 + fw * (rowmats[d0, w1, e] - a0)
                    a1 = rowmats[d1, w0, e]
                    a1 = a1 + fw * (rowmats[d1, w1, e] - a1)
                    m = a0 + fd * (a1 - a0)
                    if c == 0:
                        acc = m * v0
                    elif c == 1:
                        acc = acc + m * v1
                    else:
                        acc = acc + m * v2
                out[r, y, x] = min(max(acc, 0.0), 1.0)


def render(mats: np.ndarray, data: np.ndarray, luminance: np.ndarray) -> np.ndarray:
    """clip(M(p) @ data(p), 0, 1) for planar ``data`` (3, H, W); float32 result."""
    if data.shape[1:] != luminance.shape:
        raise ValueError(f"luminance map {luminance.shape} does not match image {data.shape[1:]}")
    out = np.empty(data.shape, dtype=np.float32)
    gd, gh, gw = mats.shape[:3]
    _render_kernel(np.ascontiguousarray(mats, dtype=np.float64).reshape(gd, gh, gw, 9),
                   np.ascontiguousarray(data),
                   np.ascontiguousarray(luminance, dtype=np.float64), out)
    return out


def apply_grid(grid: GridCoeffs, mapped: LinearRawImage, luminance) -> LinearRawImage:
    luminance = np.asarray(luminance, dtype=np.float64)
    return mapped.with_data(render(grid.materialize(), mapped.data, luminance))


# --- serialization ------------------------------------------------------------

def grid_header(grid: GridCoeffs) -> dict:
    return {"G_d": grid.depth, "G_h": grid.height, "G_w": grid.width, "k": grid.k}


def encode_grid_payload(grid: GridCoeffs) -> bytes:
    """RAWF-style payload: magic, version, G_d, G_h, G_w, dtype(1 = float64 LE), data."""
    head = _GRID_HEADER.pack(GRID_MAGIC, 1, grid.depth, grid.height, grid.width, 1)
    return head + np.ascontiguousarray(grid.raw, dtype="<f8").tobytes()


def decode_grid_payload(buf: bytes, header: dict) -> GridCoeffs:
    if len(buf) < _GRID_HEADER.size:
        raise ValueError("truncated grid payload")
    magic, version, gd, gh, gw, dtype = _GRID_HEADER.unpack_from(buf, 0)
    if magic != GRID_MAGIC or version != 1 or dtype != 1:
        raise ValueError("unrecognized grid payload")
    if (gd, gh, gw) != (header["G_d"], header["G_h"], header["G_w"]):
        raise ValueError("grid payload dimensions disagree with header")
    n = gd * gh * gw * 9
    if len(buf) != _GRID_HEADER.size + 8 * n:
        raise ValueError("grid payload length mismatch")
    raw = np.frombuffer(buf, dtype="<f8", count=n, offset=_GRID_HEADER.size)
    return GridCoeffs(raw.reshape(gd, gh, gw, 9), float(header["k"]))


def save_grid(grid: GridCoeffs, header_path, payload_path) -> None:
    Path(header_path).write_text(json.dumps(grid_header(grid), sort_keys=True))
    Path(payload_path).write_bytes(encode_grid_payload(grid))


def load_grid(header_path, payload_path) -> GridCoeffs:
    header = json.loads(Path(header_path).read_text())
    return decode_grid_payload(Path(payload_path).read_bytes(), header)
