"""Counting continuous crossings of levels and planar polylines.

Three views of the same quantity:

* grid counts, from consecutive samples of a :class:`GridTrajectory` (what an
  observer of discretized paths can compute),
* exact counts, from the arcs of an :class:`EventTrajectory`,
* occupation-time (local time) estimates, which converge to the count
  weighted by the speed through the surface.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .psp_sim import EventTrajectory, GridTrajectory
from .surfaces import Level, PolylineSurface, Segment, distance

__all__ = [
    "CrossingCount",
    "LocalTimeEstimate",
    "TangencyWarning",
    "segments_intersect",
    "segment_intersection_param",
    "count_level_grid",
    "count_segment_grid",
    "count_grid",
    "count_exact",
    "kac_numeric",
    "local_time",
]

ROOT_TOL = 1e-10
LAND_TOL = 1e-12
GENERIC_SUBGRID = 64


class TangencyWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class CrossingCount:
    total: int
    upward: int
    downward: int
    times: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if self.total != self.upward + self.downward:
            raise ValueError("total must equal upward + downward")


@dataclass(frozen=True)
class LocalTimeEstimate:
    delta: float
    value: float


def _det(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def segments_intersect(p, q, a, b):
    """Proper intersection of chords ``[p q]`` with segment ``[a b]``.

    Four orientation determinants; both products must be strictly negative,
    so touching and collinear configurations do not count.  Broadcasts over
    leading dimensions.
    """
    p, q, a, b = (np.asarray(v, dtype=float) for v in (p, q, a, b))
    ab = b - a
    pq = q - p
    d1 = _det(ab, p - a)
    d2 = _det(ab, q - a)
    d3 = _det(pq, a - p)
    d4 = _det(pq, b - p)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def segment_intersection_param(p, q, a, b):
    """Parameters ``(s, u)`` with ``p + s (q - p) = a + u (b - a)``.

    Solves the 2x2 linear system directly; returns ``None`` for parallel
    lines.  Independent of :func:`segments_intersect`.
    """
    p, q, a, b = (np.asarray(v, dtype=float) for v in (p, q, a, b))
    m = np.column_stack([q - p, a - b])
    if abs(np.linalg.det(m)) < 1e-300:
        return None
    try:
        s, u = np.linalg.solve(m, a - p)
    except np.linalg.LinAlgError:
        return None
    return float(s), float(u)


def count_level_grid(traj: GridTrajectory, level: Level) -> CrossingCount:
    """Strict sign changes of ``z_j - x_star`` between consecutive samples.

    A sample exactly on the level never completes a crossing, since the
    product test is strict.
    """
    if traj.dim != 1:
        raise ValueError("level crossings need a 1D trajectory")
    z = traj.samples[:, 0] - level.x_star
    change = z[:-1] * z[1:] < 0
    up = int(np.count_nonzero(change & (z[1:] > 0)))
    total = int(np.count_nonzero(change))
    return CrossingCount(total, up, total - up)


def _segment_list(surface):
    if isinstance(surface, Segment):
        return (surface,)
    if isinstance(surface, PolylineSurface):
        return surface.segments
    raise TypeError(f"not a planar surface: {surface!r}")


def count_segment_grid(traj: GridTrajectory, surface) -> CrossingCount:
    """Number of chords between consecutive samples that properly cross the surface."""
    if traj.dim != 2:
        raise ValueError("segment crossings need a 2D trajectory")
    p, q = traj.samples[:-1], traj.samples[1:]
    up = down = 0
    for seg in _segment_list(surface):
        hit = segments_intersect(p, q, seg.a, seg.b)
        outward = (q - p) @ seg.nu > 0
        up += int(np.count_nonzero(hit & outward))
        down += int(np.count_nonzero(hit & ~outward))
    return CrossingCount(up + down, up, down)


def count_grid(traj: GridTrajectory, surface) -> CrossingCount:
    if isinstance(surface, Level):
        return count_level_grid(traj, surface)
    return count_segment_grid(traj, surface)


# --------------------------------------------------------------------------
# exact counting


def _linear_roots(x0, v, dur, surface):
    """Crossings of the arc ``x0 + t v``, ``0 < t < dur``, as ``(t, sign)``."""
    out = []
    if isinstance(surface, Level):
        if v[0] != 0:
            t = (surface.x_star - x0[0]) / v[0]
            if 0 < t < dur:
                out.append((t, 1 if v[0] > 0 else -1))
        return out
    for seg in _segment_list(surface):
        d = seg.direction
        den = _det(v, d)
        if den == 0:
            continue  # parallel: sliding along the line is not a crossing
        w = seg.a - x0
        t = _det(w, d) / den
        u = _det(w, v) / den
        if 0 < t < dur and 0 <= u <= 1:
            out.append((t, 1 if v @ seg.nu > 0 else -1))
    return out


def _bisect(g, lo, hi, glo):
    while hi - lo > ROOT_TOL:
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if gm == 0:
            return mid
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _generic_roots(flow, x0, dur, surface):
    ts = np.linspace(0.0, dur, GENERIC_SUBGRID + 1)
    path = np.array([flow(x0, t) for t in ts])
    out = []
    if isinstance(surface, Level):
        checks = [(lambda p: p[..., 0] - surface.x_star, None)]
    else:
        checks = [((lambda p, s=s: _det(s.direction, p - s.a)), s) for s in _segment_list(surface)]
    for g_of, seg in checks:
        gv = g_of(path)
        for k in range(GENERIC_SUBGRID):
            if gv[k] * gv[k + 1] < 0:
                t = _bisect(lambda t: float(g_of(flow(x0, t))), ts[k], ts[k + 1], gv[k])
            elif gv[k] == 0 and 0 < k and gv[k - 1] * gv[k + 1] < 0:
                t = ts[k]
            else:
                continue
            x = flow(x0, t)
            r = flow.field(x)
            if seg is None:
                speed = float(r[0])
            else:
                u = float((x - seg.a) @ seg.direction / (seg.direction @ seg.direction))
                if not 0 <= u <= 1:
                    continue
                speed = float(r @ seg.nu)
            if abs(speed) < 1e-9:
                warnings.warn(f"near-tangent crossing at arc time {t:g}", TangencyWarning,
                              stacklevel=3)
            if 0 < t < dur:
                out.append((t, 1 if speed > 0 else -1))
    return out


def _merge(roots):
    roots = sorted(roots)
    merged = []
    for t, s in roots:
        if merged and t - merged[-1][0] <= ROOT_TOL:
            if merged[-1][1] != s:
                warnings.warn(f"double root at arc time {t:g} collapsed", TangencyWarning,
                              stacklevel=3)
            continue
        merged.append((t, s))
    return merged


def _strict_sign_change(roots, flow, x0, dur, rho):
    """Keep roots where the defining function changes sign strictly.

    Drops vertex touches of paths that slide along an edge or graze a corner.
    """
    kept = []
    ts = [0.0] + [t for t, _ in roots] + [dur]
    for k, (t, s) in enumerate(roots):
        eta = min(1e-7, 0.25 * (t - ts[k]), 0.25 * (ts[k + 2] - t))
        before = float(rho(flow(x0, t - eta)))
        after = float(rho(flow(x0, t + eta)))
        if before * after < 0:
            kept.append((t, s))
    return kept


def count_exact(traj: EventTrajectory, surface) -> CrossingCount:
    """Exact number of continuous crossings of ``surface`` by ``traj``.

    Linear arcs are solved in closed form; other flows use sign changes on
    a 64-point subgrid per arc refined by bisection.  Crossings on different
    edges at the same instant (polyline vertices) count once.  Jumps do not
    count, and a jump landing on the surface raises ``ValueError``.
    """
    model = traj.model
    times = []
    up = down = 0
    for k, (t0, dur, x0, y) in enumerate(traj.arcs()):
        if k > 0 and float(distance(surface, x0)) < LAND_TOL:
            raise ValueError(f"jump at time {t0:g} lands on the surface")
        flow = model.flows[y]
        if flow.velocity is not None:
            roots = _linear_roots(x0, flow.velocity, dur, surface)
        else:
            roots = _generic_roots(flow, x0, dur, surface)
        roots = _merge(roots)
        if isinstance(surface, PolylineSurface) and surface.defining_fn is not None:
            roots = _strict_sign_change(roots, flow, x0, dur, surface.defining_fn)
        for t, s in roots:
            times.append(t0 + t)
            if s > 0:
                up += 1
            else:
                down += 1
    return CrossingCount(up + down, up, down, tuple(times))


# --------------------------------------------------------------------------
# occupation-time based quantities


def _window_fraction(f0, f1, lo, hi):
    """Fraction of each cell where the linear interpolant of f lies in [lo, hi]."""
    df = f1 - f0
    flat = df == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        s_lo = (lo - f0) / df
        s_hi = (hi - f0) / df
    a = np.clip(np.minimum(s_lo, s_hi), 0.0, 1.0)
    b = np.clip(np.maximum(s_lo, s_hi), 0.0, 1.0)
    frac = np.where(flat, ((f0 >= lo) & (f0 <= hi)).astype(float), b - a)
    return frac


def kac_numeric(f, df, level: float, delta: float, time_step: float,
                t_end: float, t_start: float = 0.0) -> float:
    """``(1/2 delta) integral |f'(t)| 1{|f(t) - level| <= delta} dt``.

    Trapezoid weights for ``|f'|`` on a regular grid; within each cell the
    indicator is integrated exactly against the linear interpolant of ``f``,
    so the window edges do not snap to grid nodes.
    """
    if delta <= 0 or time_step <= 0:
        raise ValueError("delta and time_step must be positive")
    n = max(1, math.ceil((t_end - t_start) / time_step - 1e-9))
    t = np.linspace(t_start, t_end, n + 1)
    fv = np.asarray(f(t), dtype=float)
    dv = np.abs(np.asarray(df(t), dtype=float))
    h = (t_end - t_start) / n
    frac = _window_fraction(fv[:-1], fv[1:], level - delta, level + delta)
    return float(np.sum(0.5 * (dv[:-1] + dv[1:]) * frac) * h / (2 * delta))


def local_time(traj: GridTrajectory, target, delta: float) -> LocalTimeEstimate:
    """``(1/2 delta)`` times the time spent within ``delta`` of the target.

    ``target`` is a :class:`Level`, a ``(Level, mode_label)`` pair for the
    mode-restricted local time, or a planar surface (closed delta-tube).
    The time integral uses the left rectangle rule on the grid.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    mode = None
    if isinstance(target, tuple):
        target, mode = target
    z = traj.samples[:-1]
    inside = np.asarray(distance(target, z), dtype=float) <= delta
    if mode is not None:
        if traj.modes is None:
            raise ValueError("mode-restricted local time needs mode data")
        labels = traj.mode_labels
        code = [k for k, lab in enumerate(labels) if lab == mode or str(lab) == str(mode)]
        if not code:
            raise ValueError(f"unknown mode {mode!r}")
        inside &= traj.modes[:-1] == code[0]
    occupation = traj.step * np.count_nonzero(inside)
    return LocalTimeEstimate(delta, occupation / (2 * delta))
