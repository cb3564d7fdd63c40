"""Spectral tables, per-channel sensitivity PCA, Planckian SPDs and CCM fitting.

Every spectrum lives on the 33-sample grid 400..720 nm at 10 nm spacing.
Bundled tables live in ``rawild/data``; set ``RAWILD_SPECTRAL_DIR`` to a
directory with the same file names to substitute other measurements.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .numerics import LsqSolution, solve_lsq

WAVELENGTHS_NM = np.arange(400, 721, 10)
N_BANDS = WAVELENGTHS_NM.size
DELTA_LAMBDA = 10.0

# CODATA 2018 exact SI values
PLANCK_H = 6.62607015e-34
LIGHT_C = 299792458.0
BOLTZMANN_K = 1.380649e-23

PCA_EPS = 1e-12
SAMPLE_EPS = 1e-8

SENSITIVITY_FILE = "camera_sensitivities.csv"
REFLECTANCE_FILE = "colorchecker_reflectance.csv"
D65_FILE = "d65.csv"


class SpectralDataError(ValueError):
    pass


@dataclass(frozen=True)
class CameraSensitivity:
    """Per-channel sensitivity curves, shape (33, 3) with columns R, G, B."""

    curves: np.ndarray
    name: str = ""

    def __post_init__(self):
        c = np.array(self.curves, dtype=np.float64)
        if c.shape != (N_BANDS, 3):
            raise SpectralDataError(f"sensitivity must be {N_BANDS}x3, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise SpectralDataError("sensitivity contains non-finite values")
        c.flags.writeable = False
        object.__setattr__(self, "curves", c)


@dataclass(frozen=True)
class PcaModel:
    """Two-component PCA per channel; arrays are indexed [channel, ...]."""

    mean: np.ndarray        # (3, 33)
    scale: np.ndarray       # (3, 33)
    components: np.ndarray  # (3, 33, 2)
    z_mean: np.ndarray      # (3, 2)
    z_std: np.ndarray       # (3, 2)
    z_min: np.ndarray       # (3, 2)
    z_max: np.ndarray       # (3, 2)
    explained_variance_ratio: np.ndarray  # (3, 2)
    coefficients: np.ndarray  # (3, n_cameras, 2)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in self.__dataclass_fields__}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PcaModel":
        rec = json.loads(text)
        return cls(**{k: np.asarray(rec[k], dtype=np.float64) for k in cls.__dataclass_fields__})

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def reconstruct(self, coeffs) -> np.ndarray:
        """Unclipped curves sigma * V @ zeta + mu, shape (33, 3)."""
        coeffs = np.asarray(coeffs, dtype=np.float64).reshape(3, 2)
        out = np.einsum("cwk,ck->cw", self.components, coeffs) * self.scale + self.mean
        return out.T


# --- data loading -------------------------------------------------------------

def _data_text(name: str, data_dir=None) -> str:
    base = data_dir or os.environ.get("RAWILD_SPECTRAL_DIR")
    if base:
        path = Path(base) / name
        if path.exists():
            return path.read_text()
    return resources.files("rawild").joinpath("data", name).read_text()


def _check_grid(wl, what: str):
    wl = np.asarray(wl, dtype=np.float64)
    if wl.shape != WAVELENGTHS_NM.shape or not np.allclose(wl, WAVELENGTHS_NM):
        raise SpectralDataError(
            f"{what}: wavelength grid must be 400..720 nm in 10 nm steps ({len(wl)} rows found)")


def parse_sensitivity_csv(text: str) -> list[CameraSensitivity]:
    cams: list[tuple[str, list[list[float]]]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.lower().startswith("camera:"):
                cams.append((body.split(":", 1)[1].strip(), []))
            continue
        if line.lower().startswith("wavelength"):
            if [h.strip() for h in line.split(",")] != ["wavelength", "R", "G", "B"]:
                raise SpectralDataError(f"line {lineno}: header must be wavelength,R,G,B")
            continue
        if not cams:
            raise SpectralDataError(f"line {lineno}: data before any '# camera:' line")
        fields = line.split(",")
        if len(fields) != 4:
            raise SpectralDataError(f"line {lineno}: expected 4 fields, got {len(fields)}")
        cams[-1][1].append([float(f) for f in fields])

    out = []
    for name, rows in cams:
        arr = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
        _check_grid(arr[:, 0], f"camera {name!r}")
        curves = arr[:, 1:]
        if np.any(curves < -1e-9):
            raise SpectralDataError(f"camera {name!r}: negative sensitivity")
        curves = np.clip(curves, 0.0, None)
        peaks = curves.max(axis=0)
        if np.any(peaks <= 0):
            raise SpectralDataError(f"camera {name!r}: a channel is identically zero")
        if not np.allclose(peaks, 1.0, rtol=0, atol=1e-9):
            curves = curves / peaks
        out.append(CameraSensitivity(curves, name))
    return out


def load_sensitivity_db(path=None, expected_count: int | None = 28) -> list[CameraSensitivity]:
    text = Path(path).read_text() if path is not None else _data_text(SENSITIVITY_FILE)
    db = parse_sensitivity_csv(text)
    if expected_count is not None and len(db) != expected_count:
        raise SpectralDataError(f"expected {expected_count} cameras, found {len(db)}")
    return db


def format_sensitivity_csv(db: list[CameraSensitivity]) -> str:
    buf = io.StringIO()
    buf.write("wavelength,R,G,B\n")
    for i, cam in enumerate(db):
        buf.write(f"# camera: {cam.name or f'camera-{i:02d}'}\n")
        for wl, row in zip(WAVELENGTHS_NM, cam.curves):
            buf.write(f"{wl},{float(row[0])!r},{float(row[1])!r},{float(row[2])!r}\n")
    return buf.getvalue()


def load_reflectances(data_dir=None) -> np.ndarray:
    """ColorChecker reflectance table, shape (33, 24)."""
    rows = list(csv.reader(io.StringIO(_data_text(REFLECTANCE_FILE, data_dir))))
    arr = np.asarray([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    _check_grid(arr[:, 0], "reflectance table")
    if arr.shape[1] != 25:
        raise SpectralDataError(f"reflectance table needs 24 patch columns, got {arr.shape[1] - 1}")
    return arr[:, 1:]


def load_d65(data_dir=None) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(_data_text(D65_FILE, data_dir))))
    arr = np.asarray([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    _check_grid(arr[:, 0], "D65 table")
    return arr[:, 1]


# --- PCA ----------------------------------------------------------------------

def _stack(db) -> np.ndarray:
    return np.stack([cam.curves for cam in db])  # (n, 33, 3)


def fit_pca(db: list[CameraSensitivity], n_components: int = 2) -> PcaModel:
    X = _stack(db)
    if X.shape[0] < 3:
        raise ValueError("PCA needs at least three cameras")
    means, scales, comps, zs, evr = [], [], [], [], []
    for c in range(3):
        Xc = X[:, :, c]
        mu = Xc.mean(axis=0)
        sd = Xc.std(axis=0)
        sigma = np.maximum(sd, PCA_EPS)
        # wavelengths with no spread carry only centering round-off; zero them
        Xs = np.where(sd > PCA_EPS, (Xc - mu) / sigma, 0.0)
        _, s, vt = np.linalg.svd(Xs, full_matrices=False)
        V = vt[:n_components].T.copy()
        # deterministic sign: largest-magnitude loading positive
        for k in range(n_components):
            if V[np.argmax(np.abs(V[:, k])), k] < 0:
                V[:, k] = -V[:, k]
        Z = Xs @ V
        total = float(np.sum(s ** 2))
        evr.append((s[:n_components] ** 2) / total if total > 0 else np.zeros(n_components))
        means.append(mu)
        scales.append(sigma)
        comps.append(V)
        zs.append(Z)
    Z = np.stack(zs)
    return PcaModel(
        mean=np.stack(means), scale=np.stack(scales), components=np.stack(comps),
        z_mean=Z.mean(axis=1), z_std=Z.std(axis=1), z_min=Z.min(axis=1), z_max=Z.max(axis=1),
        explained_variance_ratio=np.stack(evr), coefficients=Z,
    )


def sample_coefficients(pca: PcaModel, rng: np.random.Generator) -> np.ndarray:
    """Gaussian draw around the coefficient means, clipped to the observed extrema."""
    zeta = pca.z_mean + pca.z_std * rng.standard_normal(pca.z_mean.shape)
    return np.clip(zeta, pca.z_min, pca.z_max)


def sensitivity_from_coefficients(pca: PcaModel, coeffs, name: str = "sampled") -> CameraSensitivity:
    tilde = pca.reconstruct(coeffs)
    return CameraSensitivity(np.maximum(tilde, 0.0) / (tilde.max(axis=0) + SAMPLE_EPS), name)


def sample_sensitivity(pca: PcaModel, rng: np.random.Generator,
                       coeffs=None) -> CameraSensitivity:
    if coeffs is None:
        coeffs = sample_coefficients(pca, rng)
    return sensitivity_from_coefficients(pca, coeffs)


def mean_sensitivity(db: list[CameraSensitivity]) -> CameraSensitivity:
    if not db:
        raise ValueError("empty sensitivity database")
    return CameraSensitivity(_stack(db).mean(axis=0), "mean")


# --- illuminants and chart responses ------------------------------------------

def planck_radiance(T: float, wavelengths_nm=WAVELENGTHS_NM) -> np.ndarray:
    """Black-body spectral exitance 2 pi h c^2 / (lambda^5 (exp(hc / (k T lambda)) - 1))."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    lam = np.asarray(wavelengths_nm, dtype=np.float64) * 1e-9
    return 2.0 * np.pi * PLANCK_H * LIGHT_C ** 2 / (
        lam ** 5 * np.expm1(PLANCK_H * LIGHT_C / (BOLTZMANN_K * T * lam)))


def planck_spd(T: float) -> np.ndarray:
    b = planck_radiance(T)
    return b / b.max()


def chart_response(sens: CameraSensitivity, illum, reflectance: np.ndarray | None = None) -> np.ndarray:
    """Un-normalized 24x3 patch response sum_l R(l, p) illum(l) S_c(l) dl."""
    R = load_reflectances() if reflectance is None else np.asarray(reflectance, dtype=np.float64)
    if R.shape != (N_BANDS, 24):
        raise SpectralDataError(f"reflectance table must be {N_BANDS}x24, got {R.shape}")
    illum = np.asarray(illum, dtype=np.float64)
    if illum.shape != (N_BANDS,):
        raise SpectralDataError(f"illuminant must have {N_BANDS} samples")
    return (R * illum[:, None]).T @ sens.curves * DELTA_LAMBDA


def colorchecker_response(sens: CameraSensitivity, illum,
                          reflectance: np.ndarray | None = None) -> np.ndarray:
    """Green-normalized patch response: the whole matrix divided by its mean green value."""
    P = chart_response(sens, illum, reflectance)
    g = P[:, 1].mean()
    if not g > 0:
        raise SpectralDataError("green patch response is not positive")
    return P / g


def fit_ccm(P_A, P_B) -> tuple[np.ndarray, LsqSolution]:
    """M minimizing ||P_A M^T - P_B||_F, with the solver diagnostics."""
    sol = solve_lsq(P_A, P_B)
    return sol.X.T.copy(), sol
