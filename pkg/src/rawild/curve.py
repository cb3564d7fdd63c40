"""Per-channel Bezier tone curve with residual-anchored control points.

Interior control points sit on the uniform ramp i/n and are displaced by a
bounded residual, ``p_i = clip(i/n + tanh(delta_i) / 2, 0, 1)``, with the
endpoints pinned to 0 and 1. Evaluation runs De Casteljau on the offsets
from the ramp and adds ``t`` back; the Bernstein sum of the ramp is exactly
``t``, so zero residuals give a bit-exact identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb

import numpy as np

from .raster import LinearRawImage

DEFAULT_DEGREE = 8
MAX_DEGREE = 16
CHANNELS = ("R", "G", "B")


@dataclass(frozen=True)
class CurveParams:
    degree: int
    residuals: np.ndarray  # (3, degree - 1)
    control_points: np.ndarray  # (3, degree + 1), derived

    def to_json(self) -> str:
        return json.dumps({"degree": self.degree, "residuals": self.residuals.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "CurveParams":
        rec = json.loads(text)
        return control_points_from_residuals(rec["residuals"], int(rec["degree"]))

    @classmethod
    def identity(cls, degree: int = DEFAULT_DEGREE) -> "CurveParams":
        return control_points_from_residuals(np.zeros((3, degree - 1)), degree)


def control_points_from_residuals(residuals, degree: int = DEFAULT_DEGREE,
                                  ordered: bool = False) -> CurveParams:
    """Build curve parameters from raw residuals.

    With ``ordered=True`` the interior points of each channel are sorted, an
    isotonic projection that guarantees a non-decreasing curve.
    """
    n = int(degree)
    if n < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    delta = np.asarray(residuals, dtype=np.float64)
    if delta.size != 3 * (n - 1):
        raise ValueError(f"expected {3 * (n - 1)} residuals for degree {n}, got {delta.size}")
    delta = delta.reshape(3, n - 1)
    if not np.all(np.isfinite(delta)):
        raise ValueError("residuals must be finite")
    ramp = np.arange(1, n) / n
    interior = np.clip(ramp + 0.5 * np.tanh(delta), 0.0, 1.0)
    if ordered:
        interior = np.sort(interior, axis=1)
    p = np.empty((3, n + 1))
    p[:, 0] = 0.0
    p[:, -1] = 1.0
    p[:, 1:-1] = interior
    delta = delta.copy()
    delta.flags.writeable = False
    p.flags.writeable = False
    return CurveParams(degree=n, residuals=delta, control_points=p)


def _de_casteljau(coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Bezier with scalar coefficients ``coeffs`` evaluated at array ``t``."""
    if not np.any(coeffs):
        return np.zeros_like(t)
    s = 1.0 - t
    work = [np.full_like(t, c) for c in coeffs]
    for level in range(len(coeffs) - 1, 0, -1):
        for i in range(level):
            work[i] = s * work[i] + t * work[i + 1]
    return work[0]


def bezier_eval(points, t):
    """Bezier curve with arbitrary control ``points`` at ``t``, no clamping."""
    t = np.asarray(t, dtype=np.float64)
    g = _de_casteljau(np.asarray(points, dtype=np.float64), t)
    return g if g.ndim else float(g)


def _ramp_offsets(params: CurveParams, c: int) -> np.ndarray:
    n = params.degree
    return params.control_points[c] - np.arange(n + 1) / n


def eval_curve(params: CurveParams, c: int, t, clamp: bool = True):
    """g_c(t). ``t`` outside [0, 1] is clamped unless ``clamp=False``.

    The unclamped form is the polynomial itself, used by derivative checks.
    """
    t = np.asarray(t, dtype=np.float64)
    if clamp:
        t = np.clip(t, 0.0, 1.0)
    g = t + _de_casteljau(_ramp_offsets(params, c), t)
    if clamp:
        p = params.control_points[c]
        g = np.clip(g, p.min(), p.max())
    return g if g.ndim else float(g)


def curve_derivative(params: CurveParams, c: int, t, clamp: bool = True):
    t = np.asarray(t, dtype=np.float64)
    if clamp:
        t = np.clip(t, 0.0, 1.0)
    n = params.degree
    diffs = n * np.diff(params.control_points[c])
    d = _de_casteljau(diffs, t)
    return d if d.ndim else float(d)


def bernstein_basis(n: int, t) -> np.ndarray:
    """B_{n,i}(t) for i = 0..n, stacked on the last axis."""
    t = np.asarray(t, dtype=np.float64)[..., None]
    i = np.arange(n + 1)
    binom = np.array([comb(n, k) for k in range(n + 1)], dtype=np.float64)
    return binom * (1.0 - t) ** (n - i) * t ** i


def grad_wrt_controls(params: CurveParams, c: int, t) -> np.ndarray:
    """dg_c/dp_{c,i}: the Bernstein weight vector at ``t`` (g is linear in p)."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    return bernstein_basis(params.degree, t)


def apply_curve(params: CurveParams, image: LinearRawImage) -> LinearRawImage:
    out = np.empty(image.data.shape, dtype=np.float64)
    for c in range(3):
        out[c] = eval_curve(params, c, image.data[c].astype(np.float64))
    return image.with_data(out)


def is_monotone(params: CurveParams, c: int) -> bool:
    """Sufficient test: ordered control points imply a non-decreasing curve."""
    return bool(np.all(np.diff(params.control_points[c]) >= 0.0))
