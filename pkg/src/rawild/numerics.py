"""Shared numerical substrate: least squares, finite-difference checks, seeded RNG.

All math here runs in float64. Rasters are stored as float32 elsewhere and
promoted at the call sites that feed these helpers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# Part of the provenance contract: replaying a record requires the same bit generator.
RNG_ALGORITHM = "numpy.random.PCG64"


class RankDeficientError(ValueError):
    """Raised when a least-squares design matrix does not have full column rank."""

    def __init__(self, message: str, singular_values: np.ndarray):
        super().__init__(message)
        self.singular_values = np.asarray(singular_values, dtype=np.float64)


@dataclass(frozen=True)
class LsqSolution:
    """Minimizer of ||A X - B||_F together with fit diagnostics.

    ``X`` has shape (n, k) for A of shape (m, n) and B of shape (m, k).
    ``condition`` is the 2-norm condition number of A.
    """

    X: np.ndarray
    residual_fro: float
    condition: float
    rank: int
    singular_values: np.ndarray


def solve_lsq(A, B, rcond: float | None = None) -> LsqSolution:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    squeeze = B.ndim == 1
    if squeeze:
        B = B[:, None]
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise ValueError(f"incompatible shapes A{A.shape}, B{B.shape}")
    m, n = A.shape
    if m < n:
        raise ValueError(f"underdetermined system: {m} rows < {n} columns")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("non-finite entries in least-squares inputs")

    sv = np.linalg.svd(A, compute_uv=False)
    if rcond is None:
        rcond = max(m, n) * np.finfo(np.float64).eps
    tol = rcond * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    if rank < n:
        raise RankDeficientError(f"design matrix rank {rank} < {n}", sv)

    # Householder QR; R is square upper triangular and nonsingular at full rank.
    Q, R = np.linalg.qr(A, mode="reduced")
    X = _solve_upper(R, Q.T @ B)
    resid = float(np.linalg.norm(A @ X - B))
    cond = float(sv[0] / sv[-1])
    if squeeze:
        X = X[:, 0]
    return LsqSolution(X=X, residual_fro=resid, condition=cond, rank=rank, singular_values=sv)


def _solve_upper(R: np.ndarray, Y: np.ndarray) -> np.ndarray:
    n = R.shape[0]
    X = np.zeros((n, Y.shape[1]))
    for i in range(n - 1, -1, -1):
        X[i] = (Y[i] - R[i, i + 1:] @ X[i + 1:]) / R[i, i]
    return X


def central_difference(f: Callable, x, h: float = 1e-4) -> np.ndarray:
    """Jacobian of ``f`` at ``x`` by central differences, shape f(x).shape + x.shape."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    f0 = np.asarray(f(x), dtype=np.float64)
    jac = np.empty(f0.shape + x.shape)
    flat_x = x.reshape(-1)
    for idx in range(flat_x.size):
        xp = flat_x.copy()
        xm = flat_x.copy()
        xp[idx] += h
        xm[idx] -= h
        fp = np.asarray(f(xp.reshape(x.shape)), dtype=np.float64)
        fm = np.asarray(f(xm.reshape(x.shape)), dtype=np.float64)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise FloatingPointError(f"non-finite function value near coordinate {idx}")
        jac.reshape(f0.shape + (flat_x.size,))[..., idx] = (fp - fm) / (2.0 * h)
    return jac


def finite_diff_check(f: Callable, x, analytic, h: float = 1e-4, floor: float = 1e-8) -> float:
    """Max relative error between ``analytic`` and a central-difference Jacobian.

    The error is ``max|numeric - analytic| / max(max|numeric|, floor)``: the
    finite-difference result is the reference scale, so an analytic gradient
    that is off by a factor of two reports an error of 1.0.
    """
    numeric = central_difference(f, x, h)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != numeric.shape:
        analytic = analytic.reshape(numeric.shape)
    scale = max(float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(numeric - analytic)) / scale)


def elementwise_diff_check(f: Callable, x, analytic, h: float = 1e-4,
                           floor: float = 1e-8) -> float:
    """:func:`finite_diff_check` for an elementwise map, whose Jacobian is diagonal.

    Perturbs all coordinates at once, so a grid of points costs two calls.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    fp = np.asarray(f(x + h), dtype=np.float64)
    fm = np.asarray(f(x - h), dtype=np.float64)
    if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
        raise FloatingPointError("non-finite function value")
    numeric = (fp - fm) / (2.0 * h)
    scale = max(float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(numeric - np.asarray(analytic, dtype=np.float64))) / scale)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(master: int, index: int) -> int:
    """Stable per-item seed from a master seed and an item index."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    if not lo <= hi:
        raise ValueError(f"invalid range [{lo}, {hi}]")
    u = rng.random()
    if lo == hi:
        return float(lo)
    return float(lo + (hi - lo) * u)


def uniform_choice(rng: np.random.Generator, options: Sequence):
    if len(options) == 0:
        raise ValueError("cannot choose from an empty set")
    return options[int(rng.integers(len(options)))]


def normal(rng: np.random.Generator, mu: float, sigma: float) -> float:
    if not sigma >= 0:
        raise ValueError("sigma must be non-negative")
    z = rng.standard_normal()
    return float(mu + sigma * z)
