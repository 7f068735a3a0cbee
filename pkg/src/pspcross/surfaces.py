"""Crossing surfaces: 1D levels and oriented polylines in the plane."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

__all__ = [
    "Level",
    "Segment",
    "PolylineSurface",
    "square",
    "surface_integral",
    "quadrature_nodes",
    "normal_at",
    "tube_indicator",
    "distance",
    "surface_from_config",
    "surface_to_config",
    "rot90",
]

DEFAULT_STEP = 0.1
ON_SURFACE_TOL = 1e-9


def rot90(v) -> np.ndarray:
    """Counterclockwise quarter turn."""
    v = np.asarray(v, dtype=float)
    return np.array([-v[1], v[0]])


@dataclass(frozen=True)
class Level:
    x_star: float

    @property
    def dim(self) -> int:
        return 1


@dataclass(frozen=True)
class Segment:
    """Oriented segment ``[AB]`` with normal ``rot90(B - A) / |B - A|``."""

    A: tuple
    B: tuple

    def __post_init__(self):
        a = tuple(float(v) for v in self.A)
        b = tuple(float(v) for v in self.B)
        if len(a) != 2 or len(b) != 2:
            raise ValueError("segments live in the plane")
        if a == b:
            raise ValueError("degenerate segment: A == B")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)

    @property
    def dim(self) -> int:
        return 2

    @property
    def a(self) -> np.ndarray:
        return np.array(self.A)

    @property
    def b(self) -> np.ndarray:
        return np.array(self.B)

    @property
    def direction(self) -> np.ndarray:
        return self.b - self.a

    @property
    def length(self) -> float:
        return float(np.hypot(*self.direction))

    @property
    def nu(self) -> np.ndarray:
        return rot90(self.direction) / self.length

    def point(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.a + u[..., None] * self.direction

    def distance(self, x) -> np.ndarray:
        """Euclidean distance from point(s) ``x`` to the closed segment."""
        x = np.asarray(x, dtype=float)
        d = self.direction
        u = np.clip(((x - self.a) @ d) / (d @ d), 0.0, 1.0)
        return np.linalg.norm(x - self.point(u), axis=-1)

    def reversed(self) -> "Segment":
        return Segment(self.B, self.A)


def _square_rho(c):
    def rho(x):
        x = np.asarray(x, dtype=float)
        return np.maximum(np.abs(x[..., 0]), np.abs(x[..., 1])) - c
    return rho


@dataclass(frozen=True)
class PolylineSurface:
    """Ordered oriented segments plus a defining function (negative inside)."""

    segments: tuple
    defining_fn: Optional[Callable] = None
    name: str = "polyline"

    @property
    def dim(self) -> int:
        return 2

    @property
    def length(self) -> float:
        return sum(s.length for s in self.segments)


def square(c: float) -> PolylineSurface:
    """Boundary of ``[-c, c]^2`` as four outward-oriented edges.

    Edge order is left, right, top, bottom, i.e. the four line integrals
    ``x1 = -c``, ``x1 = c``, ``x2 = c``, ``x2 = -c``.
    """
    if c <= 0:
        raise ValueError("square half-side must be positive")
    c = float(c)
    segs = (
        Segment((-c, -c), (-c, c)),
        Segment((c, c), (c, -c)),
        Segment((-c, c), (c, c)),
        Segment((c, -c), (-c, -c)),
    )
    return PolylineSurface(segs, _square_rho(c), name=f"square({c:g})")


Surface = Union[Level, Segment, PolylineSurface]


def _segments(surface) -> tuple:
    if isinstance(surface, Segment):
        return (surface,)
    if isinstance(surface, PolylineSurface):
        return surface.segments
    raise TypeError(f"not a planar surface: {surface!r}")


def quadrature_nodes(surface, step: float = DEFAULT_STEP):
    """Composite-midpoint nodes and weights for ``integral over S of f dsigma``.

    Each segment is split into ``ceil(length / step)`` equal cells.  For a
    level the counting measure gives the single node ``x_star`` with weight 1.
    Returns ``(points, weights, segment_index)``.
    """
    if step <= 0:
        raise ValueError("quadrature step must be positive")
    if isinstance(surface, Level):
        return np.array([[surface.x_star]]), np.array([1.0]), np.array([0])
    pts, wts, idx = [], [], []
    for k, seg in enumerate(_segments(surface)):
        m = max(1, math.ceil(seg.length / step - 1e-9))
        u = (np.arange(m) + 0.5) / m
        pts.append(seg.point(u))
        wts.append(np.full(m, seg.length / m))
        idx.append(np.full(m, k))
    return np.vstack(pts), np.concatenate(wts), np.concatenate(idx)


def _apply(f, pts):
    vals = np.asarray(f(pts), dtype=float)
    if vals.shape != (len(pts),):
        vals = np.array([float(f(p)) for p in pts])
    return vals


def surface_integral(surface, f, step: float = DEFAULT_STEP) -> float:
    """Composite-midpoint approximation of ``integral over S of f dsigma``.

    ``f`` receives an ``(m, d)`` array of points and returns ``m`` values
    (scalar functions of a single point are accepted too).  NaN values are
    reported with the offending node and propagate to the result.
    """
    pts, wts, _ = quadrature_nodes(surface, step)
    vals = _apply(f, pts)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        warnings.warn(f"non-finite integrand at quadrature point {pts[bad[0]].tolist()}",
                      RuntimeWarning, stacklevel=2)
        return float("nan")
    return float(vals @ wts)


def normal_at(surface, x, tol: float = ON_SURFACE_TOL) -> np.ndarray:
    """Unit normal at a surface point; undefined at polyline vertices."""
    if isinstance(surface, Level):
        return np.array([1.0])
    x = np.asarray(x, dtype=float)
    hits = [s for s in _segments(surface) if s.distance(x) <= tol]
    if not hits:
        raise ValueError(f"point {x.tolist()} is not on the surface")
    for s in hits:
        for end in (s.a, s.b):
            if np.linalg.norm(x - end) <= tol and isinstance(surface, PolylineSurface):
                raise ValueError(f"normal undefined at vertex {end.tolist()}")
    return hits[0].nu


def distance(surface, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if isinstance(surface, Level):
        return np.abs(x[..., 0] - surface.x_star) if x.ndim else abs(float(x) - surface.x_star)
    return np.min([s.distance(x) for s in _segments(surface)], axis=0)


def tube_indicator(surface, x, delta: float):
    """Whether ``x`` lies in the closed ``delta``-tube around the surface."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return distance(surface, x) <= delta


def surface_from_config(cfg: dict):
    kind = cfg.get("type")
    if kind == "level":
        return Level(float(cfg["x"]))
    if kind == "segment":
        return Segment(tuple(cfg["A"]), tuple(cfg["B"]))
    if kind == "square":
        return square(float(cfg["c"]))
    raise ValueError(f"unknown surface type {kind!r}")


def surface_to_config(surface) -> dict:
    if isinstance(surface, Level):
        return {"type": "level", "x": surface.x_star}
    if isinstance(surface, Segment):
        return {"type": "segment", "A": list(surface.A), "B": list(surface.B)}
    if isinstance(surface, PolylineSurface) and surface.name.startswith("square("):
        return {"type": "square", "c": surface.segments[1].A[0]}
    raise ValueError("surface has no config form")
