"""Gaussian kernel density estimation with matrix bandwidths."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .psp_sim import GridTrajectory

__all__ = [
    "DegenerateSampleError",
    "Bandwidth",
    "DensityEstimate",
    "kde_eval",
    "select_bandwidth",
    "time_slice_density",
    "BANDWIDTH_METHODS",
]

BANDWIDTH_METHODS = ("normal_reference", "silverman_1d")


class DegenerateSampleError(ValueError):
    """Samples without spread: no bandwidth can be derived from them."""


@dataclass(frozen=True)
class Bandwidth:
    """Symmetric positive-definite ``d x d`` bandwidth matrix ``B``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise ValueError("bandwidth must be square")
        if not np.allclose(m, m.T, rtol=0, atol=1e-12):
            raise ValueError("bandwidth must be symmetric")
        if np.min(np.linalg.eigvalsh(m)) <= 0:
            raise ValueError("bandwidth must be positive definite (singular bandwidth)")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def scalar(cls, h: float, dim: int = 1) -> "Bandwidth":
        return cls(np.eye(dim) * float(h) ** 2)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def h(self) -> float:
        return float(np.sqrt(np.linalg.det(self.matrix)))


@dataclass(frozen=True)
class DensityEstimate:
    samples: np.ndarray
    bandwidth: Bandwidth
    kernel: str = "gaussian"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if len(s) == 0:
            raise ValueError("density estimate needs at least one sample")
        if s.shape[1] != self.bandwidth.dim:
            raise ValueError("sample dimension does not match the bandwidth")
        object.__setattr__(self, "samples", s)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def kernel_matrix(self, x) -> np.ndarray:
        """``K(B^{-1/2}(x_k - z_i)) / sqrt(det B)`` as an ``(m, n)`` array."""
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            x = x.reshape(-1, self.dim)
        inv = np.linalg.inv(self.bandwidth.matrix)
        diff = x[:, None, :] - self.samples[None, :, :]
        q = np.einsum("mni,ij,mnj->mn", diff, inv, diff)
        norm = (2 * np.pi) ** (-self.dim / 2) / self.bandwidth.h
        return norm * np.exp(-0.5 * q)

    def __call__(self, x, weights: Optional[np.ndarray] = None) -> np.ndarray:
        """Density at the rows of ``x``; optional per-sample weights replace 1."""
        km = self.kernel_matrix(x)
        if weights is None:
            return km.mean(axis=1)
        return km @ np.asarray(weights, dtype=float) / len(self.samples)


def kde_eval(est: DensityEstimate, x) -> float:
    """``(1 / (n sqrt(det B))) sum_i K(B^{-1/2} (x - z_i))`` with Gaussian K."""
    return float(est(np.asarray(x, dtype=float).reshape(1, -1))[0])


def _as_2d(samples) -> np.ndarray:
    s = np.asarray(samples, dtype=float)
    return s[:, None] if s.ndim == 1 else s


def select_bandwidth(samples, method: Optional[str] = None) -> Bandwidth:
    """Rule-of-thumb bandwidths.

    ``silverman_1d``: ``h = 0.9 min(sd, IQR/1.34) n^(-1/5)``.
    ``normal_reference``: ``B = (4/(d+2))^(2/(d+4)) n^(-2/(d+4)) Sigma_hat``.
    The default is ``silverman_1d`` in 1D and ``normal_reference`` otherwise.
    """
    s = _as_2d(samples)
    n, d = s.shape
    if method is None:
        method = "silverman_1d" if d == 1 else "normal_reference"
    if n < 2:
        raise DegenerateSampleError("at least two samples are needed to select a bandwidth")
    sd = s.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise DegenerateSampleError(
            "samples have zero spread in some coordinate; add jitter or treat them as an atom"
        )
    if method == "silverman_1d":
        if d != 1:
            raise ValueError("silverman_1d is a univariate rule")
        q75, q25 = np.percentile(s[:, 0], [75, 25])
        spread = min(sd[0], (q75 - q25) / 1.34) if q75 > q25 else sd[0]
        return Bandwidth.scalar(0.9 * spread * n ** (-0.2))
    if method == "normal_reference":
        cov = np.atleast_2d(np.cov(s, rowvar=False))
        cov = 0.5 * (cov + cov.T)
        if np.min(np.linalg.eigvalsh(cov)) <= 1e-14 * np.max(np.abs(cov)):
            raise DegenerateSampleError("sample covariance is singular")
        factor = (4.0 / (d + 2)) ** (2.0 / (d + 4)) * n ** (-2.0 / (d + 4))
        return Bandwidth(factor * cov)
    raise ValueError(f"unknown bandwidth method {method!r}; choose from {BANDWIDTH_METHODS}")


def time_slice_density(dataset: Sequence[GridTrajectory], j: int, bandwidth=None) -> DensityEstimate:
    """KDE of ``X(h_j)`` from the ``j``-th sample of every trajectory.

    ``bandwidth`` is a :class:`Bandwidth`, a method name, or ``None`` for the
    default rule.
    """
    if not dataset:
        raise ValueError("empty dataset")
    n_pts = dataset[0].n_points
    horizon = dataset[0].horizon
    for g in dataset:
        if g.n_points != n_pts or g.horizon != horizon:
            raise ValueError("trajectories do not share a common grid")
    if not 0 <= j < n_pts:
        raise IndexError(f"grid index {j} outside [0, {n_pts})")
    pts = np.array([g.samples[j] for g in dataset])
    if not isinstance(bandwidth, Bandwidth):
        bandwidth = select_bandwidth(pts, bandwidth)
    return DensityEstimate(pts, bandwidth)
