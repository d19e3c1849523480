"""Mergeable Gaussian sufficient statistics and the Fréchet distance.

Statistics are kept as raw sums (count, Σx, Σxxᵀ) in float64 so that the
statistics of a union are the componentwise sum of the parts; the greedy
search grows its candidate set this way without revisiting images.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import EmbeddingRecord
from .errors import DataFormatError, NearSingularWarning, NumericError

COVARIANCE_DENOMINATOR = "n-1"
NEGATIVE_EIG_WARN = 1e-6
FID_CLAMP = 1e-8


def _symmetric_gram(x: np.ndarray) -> np.ndarray:
    g = x.T @ x
    upper = np.triu(g)
    return upper + np.triu(g, 1).T


@dataclass(frozen=True, eq=False)
class GaussianStats:
    n: int
    sum: np.ndarray
    sum_outer: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.sum.shape[0])

    @classmethod
    def empty(cls, dimension: int) -> "GaussianStats":
        return cls(0, np.zeros(dimension), np.zeros((dimension, dimension)))

    @classmethod
    def from_array(cls, x: np.ndarray) -> "GaussianStats":
        """Statistics of the rows of ``x`` (converted to float64)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise DataFormatError("expected an (N, d) array")
        return cls(int(x.shape[0]), x.sum(axis=0), _symmetric_gram(x))

    @classmethod
    def from_moments(cls, n: int, mean: np.ndarray, cov: np.ndarray) -> "GaussianStats":
        """Stats whose ``mean_cov`` reproduces ``(mean, cov)`` for sample size ``n``."""
        mean = np.asarray(mean, dtype=np.float64)
        cov = np.asarray(cov, dtype=np.float64)
        return cls(n, n * mean, (n - 1) * cov + n * np.outer(mean, mean))

    def field_equal(self, other: "GaussianStats") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.sum, other.sum)
            and np.array_equal(self.sum_outer, other.sum_outer)
        )


def accumulate(records: Iterable[EmbeddingRecord] | np.ndarray, dimension: int | None = None) -> GaussianStats:
    """Sufficient statistics of a record collection (or an (N, d) descriptor array)."""
    if isinstance(records, np.ndarray):
        x = records
    else:
        vecs = [np.asarray(r.descriptor, dtype=np.float64) for r in records]
        if not vecs:
            return GaussianStats.empty(dimension or 0)
        dims = {v.shape for v in vecs}
        if len(dims) != 1:
            raise DataFormatError(f"descriptor dimension mismatch: {sorted(dims)}")
        x = np.stack(vecs)
    if dimension is not None and x.ndim == 2 and x.shape[1] != dimension:
        raise DataFormatError(f"dimension mismatch: expected {dimension}, got {x.shape[1]}")
    return GaussianStats.from_array(x)


def merge_stats(a: GaussianStats, b: GaussianStats) -> GaussianStats:
    if a.n == 0 and a.dimension == 0:
        return b
    if b.n == 0 and b.dimension == 0:
        return a
    if a.dimension != b.dimension:
        raise DataFormatError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    return GaussianStats(a.n + b.n, a.sum + b.sum, a.sum_outer + b.sum_outer)


def mean_cov(s: GaussianStats) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased (n-1) covariance."""
    if s.n < 2:
        raise NumericError(f"mean/covariance need at least 2 samples, have {s.n}")
    mean = s.sum / s.n
    c = (s.sum_outer - s.n * np.outer(mean, mean)) / (s.n - 1)
    return mean, (c + c.T) / 2


def _eigh(m: np.ndarray, label: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        return np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        try:
            cond = f"{np.linalg.cond(m):.3e}"
        except np.linalg.LinAlgError:
            cond = "undefined"
        raise NumericError(
            f"eigendecomposition of {label} failed ({exc}); condition number {cond}, "
            f"max |entry| {np.abs(m).max():.3e}"
        ) from None


def _clamp(w: np.ndarray, label: str) -> np.ndarray:
    top = float(w.max(initial=0.0))
    low = float(w.min(initial=0.0))
    if low < 0 and top > 0 and low < -NEGATIVE_EIG_WARN * top:
        warnings.warn(
            f"{label} has eigenvalue {low:.3e} (max {top:.3e}); clamped to 0, covariance near-singular",
            NearSingularWarning,
            stacklevel=3,
        )
    return np.clip(w, 0.0, None)


def trace_sqrt_product(cov_s: np.ndarray, cov_t: np.ndarray) -> float:
    """Tr((Σ_s Σ_t)^½) through the symmetric form Σ_s^½ Σ_t Σ_s^½."""
    cov_s = np.asarray(cov_s, dtype=np.float64)
    cov_t = np.asarray(cov_t, dtype=np.float64)
    if cov_s.shape != cov_t.shape or cov_s.ndim != 2 or cov_s.shape[0] != cov_s.shape[1]:
        raise DataFormatError(f"covariances must be square and equal-shaped, got {cov_s.shape} and {cov_t.shape}")
    if not (np.isfinite(cov_s).all() and np.isfinite(cov_t).all()):
        raise NumericError("covariance has non-finite entries")
    w, q = _eigh(cov_s, "source covariance")
    root = (q * np.sqrt(_clamp(w, "source covariance"))) @ q.T
    m = root @ cov_t @ root
    m = (m + m.T) / 2
    lam = _eigh(m, "covariance product")[0]
    return float(np.sqrt(_clamp(lam, "covariance product")).sum())


def frechet_distance(mu_s: np.ndarray, cov_s: np.ndarray, mu_t: np.ndarray, cov_t: np.ndarray) -> float:
    diff = np.asarray(mu_s, dtype=np.float64) - np.asarray(mu_t, dtype=np.float64)
    value = float(diff @ diff + np.trace(cov_s) + np.trace(cov_t) - 2.0 * trace_sqrt_product(cov_s, cov_t))
    if value < 0:
        if value < -FID_CLAMP:
            warnings.warn(f"FID evaluated to {value:.3e}; clamped to 0", NearSingularWarning, stacklevel=2)
        value = 0.0
    return value


def fid(s: GaussianStats, t: GaussianStats) -> float:
    """Fréchet distance between the Gaussians fitted to two stat blocks."""
    if s.dimension != t.dimension:
        raise DataFormatError(f"dimension mismatch: {s.dimension} vs {t.dimension}")
    mu_s, cov_s = mean_cov(s)
    mu_t, cov_t = mean_cov(t)
    return frechet_distance(mu_s, cov_s, mu_t, cov_t)
