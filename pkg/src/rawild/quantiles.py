"""Per-channel quantile descriptor, exact and soft-sorted.

Quantile convention (both paths): for rank r in 1..Q the position in the
sorted sample is ``h = (N - 1) * r / Q`` and the value interpolates linearly
between the order statistics at floor(h) and floor(h) + 1.

The soft path replaces the sort with a smooth surrogate. Soft ranks are
``s_j = sum_{k != j} sigmoid((x_j - x_k) / tau)``; a Gaussian kernel in rank
space (bandwidth ``rank_bandwidth``) maps them onto the integer slots
0..N-1, and the same interpolation rule is applied to the soft-sorted vector.
As tau -> 0 on distinct samples the soft ranks become exact integers and the
soft quantiles reduce to the hard ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .raster import LinearRawImage

DEFAULT_Q = 64
DEFAULT_TAU = 1e-3
DEFAULT_RANK_BANDWIDTH = 0.1
DEFAULT_SUBSAMPLE_CAP = 4096
_CHUNK = 1024


@dataclass(frozen=True)
class QuantileDescriptor:
    values: np.ndarray  # (3, Q)

    @property
    def Q(self) -> int:
        return self.values.shape[-1]

    def to_json(self) -> str:
        return json.dumps({"Q": self.Q, "channels": self.values.tolist()})

    def to_csv(self) -> str:
        return "\n".join(",".join(repr(float(v)) for v in row) for row in self.values) + "\n"


def _interp_positions(n: int, Q: int) -> tuple[np.ndarray, np.ndarray]:
    # exact integer arithmetic for floor and fraction of (n - 1) * r / Q
    num = (n - 1) * np.arange(1, Q + 1, dtype=np.int64)
    lo = num // Q
    frac = (num % Q) / Q
    return lo, frac


def _interp_sorted(sorted_vals: np.ndarray, Q: int) -> np.ndarray:
    n = sorted_vals.shape[-1]
    lo, frac = _interp_positions(n, Q)
    hi = np.minimum(lo + 1, n - 1)
    a = sorted_vals[..., lo]
    b = sorted_vals[..., hi]
    return a + frac * (b - a)


def hard_quantile_row(samples, Q: int = DEFAULT_Q) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot take quantiles of an empty sample")
    if Q < 1:
        raise ValueError("Q must be >= 1")
    return _interp_sorted(np.sort(x), Q)


def hard_quantiles(image: LinearRawImage, Q: int = DEFAULT_Q) -> QuantileDescriptor:
    data = image.data.reshape(3, -1).astype(np.float64)
    return QuantileDescriptor(np.stack([hard_quantile_row(ch, Q) for ch in data]))


def soft_ranks(x: np.ndarray, tau: float) -> np.ndarray:
    """Pairwise-logistic soft ranks, zero-based; O(N^2) time in row chunks."""
    n = x.size
    ranks = np.empty(n)
    for start in range(0, n, _CHUNK):
        block = x[start:start + _CHUNK, None] - x[None, :]
        # logistic via tanh avoids overflow for tiny tau
        ranks[start:start + _CHUNK] = np.sum(0.5 * (1.0 + np.tanh(block / (2.0 * tau))), axis=1)
    return ranks - 0.5  # drop the self term sigmoid(0)


def soft_sort(x, tau: float = DEFAULT_TAU,
              rank_bandwidth: float = DEFAULT_RANK_BANDWIDTH) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    s = soft_ranks(x, tau)
    n = x.size
    out = np.empty(n)
    slots = np.arange(n, dtype=np.float64)
    for start in range(0, n, _CHUNK):
        logits = -0.5 * ((slots[start:start + _CHUNK, None] - s[None, :]) / rank_bandwidth) ** 2
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        out[start:start + _CHUNK] = w @ x
    return out


def soft_quantiles(samples, Q: int = DEFAULT_Q, tau: float = DEFAULT_TAU,
                   rank_bandwidth: float = DEFAULT_RANK_BANDWIDTH) -> np.ndarray:
    """Smooth surrogate of :func:`hard_quantile_row`; one descriptor row."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if not rank_bandwidth > 0:
        raise ValueError("rank bandwidth must be positive")
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("soft quantiles need at least two samples")
    if Q < 1:
        raise ValueError("Q must be >= 1")
    return _interp_sorted(soft_sort(x, tau, rank_bandwidth), Q)


def strided_subsample(x: np.ndarray, cap: int) -> np.ndarray:
    if x.size <= cap:
        return x
    stride = -(-x.size // cap)
    return x[::stride][:cap]


def descriptor_for_image(image: LinearRawImage, Q: int = DEFAULT_Q, mode: str = "hard",
                         tau: float = DEFAULT_TAU,
                         subsample_cap: int = DEFAULT_SUBSAMPLE_CAP) -> QuantileDescriptor:
    if subsample_cap < Q:
        raise ValueError(f"subsample cap {subsample_cap} is below Q={Q}")
    if mode == "hard":
        return hard_quantiles(image, Q)
    if mode != "soft":
        raise ValueError(f"unknown descriptor mode {mode!r}")
    data = image.data.reshape(3, -1).astype(np.float64)
    rows = [soft_quantiles(strided_subsample(ch, subsample_cap), Q, tau) for ch in data]
    return QuantileDescriptor(np.stack(rows))
