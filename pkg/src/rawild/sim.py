"""Physics-based RAW sensor simulation.

Chain, applied per pixel once the two white-balance gain vectors are fixed:

    x_bal = x * g_wb_src                          source gray-world balance
    y     = alpha (diag(g_tint) M_ccm + eps) x_bal + beta
    y_hat = y / g_wb_tgt                          target camera's own balance
    y_hat = max(y_hat, 0)
    y'    = S_sat tanh(y_hat / S_sat)             highlight roll-off
    out   = floor(y' / S_sat (2^b - 1) + 0.5) / (2^b - 1)

Each stage can be switched off (the stage becomes the identity) for testing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import numerics
from .numerics import RankDeficientError
from .raster import LinearRawImage, RasterMeta
from .spectral import (
    DELTA_LAMBDA,
    CameraSensitivity,
    PcaModel,
    colorchecker_response,
    fit_ccm,
    planck_spd,
    sample_coefficients,
    sensitivity_from_coefficients,
)

STAGES = ("source_wb", "transform", "target_wb", "clamp", "rolloff", "quantize")
MAX_CCM_RETRIES = 8
GAIN_EPS = 1e-8
RESPONSE_EPS = 1e-12


@dataclass
class SimConfig:
    u_range: tuple[float, float] = (-3.0, 3.0)
    mired_range: tuple[float, float] = (50.0, 400.0)
    tint_range: tuple[float, float] = (-0.04, 0.04)
    tint_scale: float = 15.0
    crosstalk_range: tuple[float, float] = (-0.05, 0.05)
    black_offset_range: tuple[float, float] = (-0.02, 0.02)
    sat_range: tuple[float, float] = (0.9, 1.0)
    bit_depths: tuple[int, ...] = (10, 12, 14, 16)
    stage_toggles: dict[str, bool] = field(default_factory=lambda: {s: True for s in STAGES})
    seed: int = 0

    def __post_init__(self):
        for name in ("u_range", "mired_range", "tint_range", "crosstalk_range",
                     "black_offset_range", "sat_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name}: low {lo} exceeds high {hi}")
            setattr(self, name, (float(lo), float(hi)))
        if self.mired_range[0] <= 0:
            raise ValueError("mired range must be positive")
        if self.sat_range[0] <= 0:
            raise ValueError("saturation threshold must be positive")
        self.bit_depths = tuple(int(b) for b in self.bit_depths)
        if not self.bit_depths or any(not 8 <= b <= 24 for b in self.bit_depths):
            raise ValueError(f"bit depths must lie in [8, 24], got {self.bit_depths}")
        toggles = {s: True for s in STAGES}
        for k, v in dict(self.stage_toggles).items():
            if k not in toggles:
                raise ValueError(f"unknown stage {k!r}; stages are {', '.join(STAGES)}")
            toggles[k] = bool(v)
        self.stage_toggles = toggles

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class SimParams:
    u: float
    alpha: float
    mired: float
    T: float
    delta_uv: float
    tint_scale: float
    sensitivity: CameraSensitivity
    illuminant: np.ndarray
    illuminant_source: str
    coeffs: np.ndarray | None
    ccm: np.ndarray
    ccm_residual: float
    epsilon: np.ndarray
    beta: np.ndarray
    g_tint: np.ndarray
    g_wb_tgt: np.ndarray
    S_sat: float
    bits: int
    seed: int | None = None
    pca_hash: str | None = None
    ccm_attempts: int = 1

    @property
    def full_matrix(self) -> np.ndarray:
        return assemble_full_matrix(self.alpha, self.g_tint, self.ccm, self.epsilon)


def tint_gain(delta_uv: float, s: float = 15.0) -> np.ndarray:
    return np.array([max(1.0 - 0.5 * s * delta_uv, 0.1), 1.0, max(1.0 - s * delta_uv, 0.1)])


def gray_world_gains(image) -> np.ndarray:
    data = image.data if isinstance(image, LinearRawImage) else np.asarray(image)
    means = data.reshape(3, -1).astype(np.float64).mean(axis=1)
    if np.any(means < GAIN_EPS):
        raise ValueError(f"channel mean below {GAIN_EPS}: {means.tolist()}")
    gains = means[1] / means
    gains[1] = 1.0
    return gains


def target_wb_gains(sens: CameraSensitivity, illum) -> np.ndarray:
    r = sens.curves.T @ np.asarray(illum, dtype=np.float64) * DELTA_LAMBDA
    if np.any(r < RESPONSE_EPS):
        raise ValueError(f"channel response below {RESPONSE_EPS}: {r.tolist()}")
    g = r[1] / r
    g[1] = 1.0
    return g


def assemble_full_matrix(alpha, g_tint, ccm, epsilon) -> np.ndarray:
    return alpha * (np.diag(g_tint) @ np.asarray(ccm) + np.asarray(epsilon))


def rolloff(x, S_sat: float):
    if not S_sat > 0:
        raise ValueError("S_sat must be positive")
    return S_sat * np.tanh(np.asarray(x, dtype=np.float64) / S_sat)


def quantize(x, bits: int, S_sat: float = 1.0):
    if not 8 <= bits <= 24:
        raise ValueError(f"bit depth {bits} outside [8, 24]")
    levels = float((1 << bits) - 1)
    k = np.floor(np.asarray(x, dtype=np.float64) / S_sat * levels + 0.5)
    return np.clip(k, 0.0, levels) / levels


def sample_params(config: SimConfig, pca: PcaModel, proxy_response: np.ndarray,
                  rng: np.random.Generator, pins: dict | None = None,
                  reflectance: np.ndarray | None = None, seed: int | None = None) -> SimParams:
    """Draw one simulation parameter set.

    Draw order is fixed (u, then per attempt mired and PCA coefficients, then
    tint, crosstalk, black offsets, S_sat, bit depth) and every value is drawn
    even when pinned, so pinning one value never shifts the others.

    ``pins`` may override: u, mired, delta_uv, coeffs, sensitivity,
    illuminant (33 samples), epsilon, beta, S_sat, bits.
    """
    pins = dict(pins or {})
    unknown = set(pins) - {"u", "mired", "delta_uv", "coeffs", "sensitivity", "illuminant",
                           "epsilon", "beta", "S_sat", "bits"}
    if unknown:
        raise ValueError(f"unknown pins: {sorted(unknown)}")

    u = numerics.uniform(rng, *config.u_range)
    u = float(pins.get("u", u))

    last_err = None
    for attempt in range(1, MAX_CCM_RETRIES + 2):
        mired = float(pins.get("mired", numerics.uniform(rng, *config.mired_range)))
        drawn = sample_coefficients(pca, rng)
        coeffs = np.asarray(pins.get("coeffs", drawn), dtype=np.float64)
        if "sensitivity" in pins:
            sens, coeffs = pins["sensitivity"], None
        else:
            sens = sensitivity_from_coefficients(pca, coeffs)
        T = 1e6 / mired
        if "illuminant" in pins:
            illum, source = np.asarray(pins["illuminant"], dtype=np.float64), "pinned"
        else:
            illum, source = planck_spd(T), "planck"
        try:
            P_B = colorchecker_response(sens, illum, reflectance)
            ccm, sol = fit_ccm(proxy_response, P_B)
            g_wb_tgt = target_wb_gains(sens, illum)
            break
        except (RankDeficientError, ValueError) as exc:
            last_err = exc
    else:
        raise RuntimeError(f"no usable sensor draw after {MAX_CCM_RETRIES} retries") from last_err

    delta_uv = float(pins.get("delta_uv", numerics.uniform(rng, *config.tint_range)))
    lo, hi = config.crosstalk_range
    eps = np.zeros((3, 3))
    off = rng.uniform(lo, hi, size=6) if hi > lo else np.full(6, lo)
    eps[~np.eye(3, dtype=bool)] = off
    eps = np.asarray(pins.get("epsilon", eps), dtype=np.float64)
    if np.any(np.diag(eps) != 0):
        raise ValueError("crosstalk diagonal must be zero")
    lo, hi = config.black_offset_range
    beta = rng.uniform(lo, hi, size=3) if hi > lo else np.full(3, lo)
    beta = np.asarray(pins.get("beta", beta), dtype=np.float64)
    S_sat = float(pins.get("S_sat", numerics.uniform(rng, *config.sat_range)))
    bits = int(pins.get("bits", numerics.uniform_choice(rng, config.bit_depths)))

    return SimParams(
        u=u, alpha=float(2.0 ** u), mired=mired, T=T, delta_uv=delta_uv,
        tint_scale=config.tint_scale, sensitivity=sens, illuminant=illum,
        illuminant_source=source, coeffs=coeffs, ccm=ccm, ccm_residual=sol.residual_fro,
        epsilon=eps, beta=beta, g_tint=tint_gain(delta_uv, config.tint_scale),
        g_wb_tgt=g_wb_tgt, S_sat=S_sat, bits=bits, seed=seed, pca_hash=pca.digest(),
        ccm_attempts=attempt,
    )


@dataclass(frozen=True)
class SimResult:
    values: np.ndarray  # float64 (3, H, W), the exact chain output
    image: LinearRawImage  # float32 raster of ``values``
    provenance: dict


def _resolve_toggles(toggles) -> dict[str, bool]:
    out = {s: True for s in STAGES}
    for k, v in (toggles or {}).items():
        if k not in out:
            raise ValueError(f"unknown stage {k!r}")
        out[k] = bool(v)
    return out


def apply_sim(image: LinearRawImage, params: SimParams, toggles: dict | None = None,
              source_gains=None) -> SimResult:
    """Run the chain on one image.

    ``source_gains`` pins the source gray-world gains; by default they are
    computed from the image itself.
    """
    t = _resolve_toggles(toggles)
    x = image.data.astype(np.float64).reshape(3, -1)
    g_src = np.ones(3)
    if t["source_wb"]:
        g_src = gray_world_gains(image) if source_gains is None else np.asarray(source_gains, float)
        x = x * g_src[:, None]
    if t["transform"]:
        x = params.full_matrix @ x + params.beta[:, None]
    if t["target_wb"]:
        x = x / params.g_wb_tgt[:, None]
    if t["clamp"]:
        x = np.maximum(x, 0.0)
    if t["rolloff"]:
        x = rolloff(x, params.S_sat)
    if t["quantize"]:
        x = quantize(x, params.bits, params.S_sat)
    values = x.reshape(image.data.shape)

    meta = image.meta
    if t["quantize"]:
        meta = RasterMeta(bit_depth=params.bits, black_level=(0, 0, 0),
                          white_level=(1 << params.bits) - 1,
                          sensor_name=meta.sensor_name, sidecar=dict(meta.sidecar))
    out = image.with_data(values, meta)
    return SimResult(values=values, image=out, provenance=provenance_record(params, g_src, t))


def provenance_record(params: SimParams, g_src, toggles: dict) -> dict:
    return {
        "seed": params.seed,
        "rng": numerics.RNG_ALGORITHM,
        "u": params.u,
        "alpha": params.alpha,
        "mired": params.mired,
        "T": params.T,
        "illuminant": params.illuminant_source,
        "delta_uv": params.delta_uv,
        "s": params.tint_scale,
        "S_sat": params.S_sat,
        "bits": params.bits,
        "epsilon": params.epsilon.tolist(),
        "beta": params.beta.tolist(),
        "g_tint": params.g_tint.tolist(),
        "g_wb_src": np.asarray(g_src, dtype=np.float64).tolist(),
        "g_wb_tgt": params.g_wb_tgt.tolist(),
        "ccm": params.ccm.tolist(),
        "ccm_residual": params.ccm_residual,
        "ccm_attempts": params.ccm_attempts,
        "toggles": dict(toggles),
        "pca_model_hash": params.pca_hash,
        "camera_draw_coeffs": None if params.coeffs is None else params.coeffs.tolist(),
    }


def provenance_json(record: dict) -> str:
    return json.dumps(record, indent=2, sort_keys=True)


def params_digest(params: SimParams) -> str:
    rec = provenance_record(params, np.ones(3), {})
    return hashlib.sha256(json.dumps(rec, sort_keys=True).encode()).hexdigest()


def with_pins(params: SimParams, **changes) -> SimParams:
    """Copy of ``params`` with fields replaced; alpha follows u when u is given."""
    if "u" in changes and "alpha" not in changes:
        changes["alpha"] = float(2.0 ** changes["u"])
    if "delta_uv" in changes and "g_tint" not in changes:
        changes["g_tint"] = tint_gain(changes["delta_uv"], params.tint_scale)
    return replace(params, **changes)
