"""Estimators of the mean number of continuous crossings.

``monte_carlo`` averages grid counts.  ``kr_nonstationary`` and
``kr_stationary`` plug kernel density estimates into the Kac-Rice formula
(time-integrated density, resp. invariant density, integrated over the
surface against the speed through it).  ``closed_form`` and
``exact_oracle`` provide reference values.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .crossing_count import count_exact, count_grid
from .density import DegenerateSampleError, DensityEstimate, select_bandwidth
from .psp_sim import GridTrajectory, ProcessModel, builtin_models, double_well, rng_stream, simulate_event
from .surfaces import DEFAULT_STEP, Level, Segment, quadrature_nodes

__all__ = [
    "SpeedProjection",
    "CrossingEstimate",
    "model_speed_projection",
    "monte_carlo",
    "kr_nonstationary",
    "kr_stationary",
    "closed_form",
    "exact_oracle",
    "METHODS",
]

METHODS = ("monte_carlo", "kr_nonstationary", "kr_stationary", "closed_form", "exact_oracle")


@dataclass(frozen=True)
class SpeedProjection:
    """Positive and negative parts of ``(r(x), nu(x))`` on a surface.

    ``parts(points, normals)`` returns the two nonnegative arrays.  A
    model-derived projection also carries ``per_mode(points, normals)``, the
    ``(n_modes, m)`` array of ``|(r_y(x), nu(x))|``, used to weight samples
    by their observed mode.
    """

    parts: Callable
    source: str = "model-derived"
    per_mode: Optional[Callable] = None
    scale: float = 1.0
    data: Optional[dict] = field(default=None, compare=False)

    def absolute(self, points, normals) -> np.ndarray:
        pos, neg = self.parts(points, normals)
        return self.scale * (np.asarray(pos) + np.asarray(neg))

    def mode_table(self, points, normals) -> Optional[np.ndarray]:
        if self.per_mode is None:
            return None
        return self.scale * np.asarray(self.per_mode(points, normals))

    def scaled(self, factor: float) -> "SpeedProjection":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return SpeedProjection(self.parts, self.source, self.per_mode, self.scale * factor, self.data)


@dataclass(frozen=True)
class CrossingEstimate:
    value: float
    method: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.value >= 0:
            raise ValueError("crossing estimates are nonnegative")

    def to_dict(self) -> dict:
        return {"value": self.value, "method": self.method, "meta": self.meta}


def model_speed_projection(model: ProcessModel) -> SpeedProjection:
    """Speed projection computed from the model's vector fields."""

    def projections(points, normals):
        pts = np.asarray(points, dtype=float)
        nrm = np.asarray(normals, dtype=float)
        rows = []
        for fl in model.flows:
            r = np.atleast_2d(fl.field(pts)) if fl.velocity is None else np.broadcast_to(fl.velocity, pts.shape)
            rows.append(np.einsum("md,md->m", r, nrm))
        return np.array(rows)

    def per_mode(points, normals):
        return np.abs(projections(points, normals))

    def parts(points, normals):
        proj = projections(points, normals)
        # without mode information the modes are taken as equally likely
        return np.clip(proj, 0, None).mean(axis=0), np.clip(-proj, 0, None).mean(axis=0)

    return SpeedProjection(parts, "model-derived", per_mode)


def _surface_nodes(surface, step):
    pts, wts, idx = quadrature_nodes(surface, step)
    if isinstance(surface, Level):
        normals = np.ones((1, 1))
    elif isinstance(surface, Segment):
        normals = np.broadcast_to(surface.nu, pts.shape)
    else:
        normals = np.array([surface.segments[k].nu for k in idx])
    return pts, wts, normals


def _common_grid(dataset: Sequence[GridTrajectory]):
    if not dataset:
        raise ValueError("empty dataset")
    g0 = dataset[0]
    for g in dataset:
        if g.n_points != g0.n_points or g.horizon != g0.horizon or g.dim != g0.dim:
            raise ValueError("trajectories do not share a common grid")
    return g0.horizon, g0.n_points, g0.dim


def _weighted_density(samples, modes, nodes, normals, sp, table, bandwidth):
    """``sum_i |(r_{y_i}(x), nu(x))| K_B(x - z_i) / n`` at each node."""
    est = DensityEstimate(samples, bandwidth)
    km = est.kernel_matrix(nodes)
    if table is not None and modes is not None:
        return np.einsum("mn,nm->m", km, table[modes]) / len(samples)
    return km.mean(axis=1) * sp.absolute(nodes, normals)


def _speed_table(sp, nodes, normals, have_modes):
    table = sp.mode_table(nodes, normals)
    if table is None or have_modes:
        return table
    if np.allclose(table, table[0]):
        return None
    raise ValueError("mode-dependent speed projection needs mode data in the dataset; "
                     "supply a mode-free speed projection instead")


def monte_carlo(dataset: Sequence[GridTrajectory], surface) -> CrossingEstimate:
    """Mean over trajectories of the grid crossing counts."""
    if not dataset:
        raise ValueError("empty dataset")
    counts = np.array([count_grid(g, surface).total for g in dataset], dtype=float)
    se = float(counts.std(ddof=1) / math.sqrt(len(counts))) if len(counts) > 1 else 0.0
    return CrossingEstimate(float(counts.mean()), "monte_carlo",
                            {"n": len(dataset), "n_H": dataset[0].n_points, "h": dataset[0].step, "se": se})


def time_weights(n_points: int, horizon: float, quadrature: str = "rectangle") -> np.ndarray:
    """Weights of the time sum over the grid.

    ``rectangle`` gives every one of the ``n_H`` points the weight
    ``H/(n_H - 1)`` (total ``H n_H/(n_H - 1)``); ``trapezoid`` halves the
    two end weights so that they sum to ``H``.
    """
    w = np.full(n_points, horizon / (n_points - 1))
    if quadrature == "trapezoid":
        w[[0, -1]] *= 0.5
    elif quadrature != "rectangle":
        raise ValueError(f"unknown time quadrature {quadrature!r}")
    return w


def kr_nonstationary(dataset: Sequence[GridTrajectory], surface, sp: SpeedProjection,
                     bw_method: Optional[str] = None, *, step: float = DEFAULT_STEP,
                     quadrature: str = "rectangle") -> CrossingEstimate:
    """Plug-in Kac-Rice estimate with one KDE per time slice.

    ``int_S |(r, nu)| sum_j w_j p_hat_j(x) dsigma(x)``.  Slices whose
    samples have no spread (all trajectories at the same point, e.g. a
    common start) carry no density and are skipped.
    """
    horizon, n_pts, dim = _common_grid(dataset)
    nodes, wts, normals = _surface_nodes(surface, step)
    have_modes = all(g.modes is not None for g in dataset)
    table = _speed_table(sp, nodes, normals, have_modes)
    tw = time_weights(n_pts, horizon, quadrature)
    stack = np.stack([g.samples for g in dataset], axis=1)  # (n_H, n, d)
    modes = np.stack([g.modes for g in dataset], axis=1) if have_modes else None
    integrand = np.zeros(len(nodes))
    skipped = 0
    hs = []
    for j in range(n_pts):
        try:
            bw = select_bandwidth(stack[j], bw_method)
        except DegenerateSampleError:
            skipped += 1
            continue
        hs.append(bw.h)
        dens = _weighted_density(stack[j], None if modes is None else modes[j],
                                 nodes, normals, sp, table, bw)
        integrand += tw[j] * dens
    if skipped:
        warnings.warn(f"{skipped} degenerate time slice(s) skipped", RuntimeWarning, stacklevel=2)
    value = float(integrand @ wts)
    meta = {"n": len(dataset), "n_H": n_pts, "h": horizon / (n_pts - 1), "step": step,
            "quadrature": quadrature, "skipped_slices": skipped,
            "bandwidth_h_median": float(np.median(hs)) if hs else None}
    return CrossingEstimate(max(value, 0.0), "kr_nonstationary", meta)


def kr_stationary(dataset: Sequence[GridTrajectory], surface, sp: SpeedProjection,
                  bw_method: Optional[str] = None, *, step: float = DEFAULT_STEP,
                  horizon: Optional[float] = None):
    """Stationary plug-in estimate, one per trajectory, and their mean.

    Each trajectory's samples give a KDE of the invariant density; the
    estimate is ``H int_S |(r, nu)| mu_hat(x) dsigma(x)``.  ``horizon``
    defaults to the observation window.
    """
    if not dataset:
        raise ValueError("empty dataset")
    nodes, wts, normals = _surface_nodes(surface, step)
    per = []
    for g in dataset:
        H = g.horizon if horizon is None else float(horizon)
        table = _speed_table(sp, nodes, normals, g.modes is not None)
        bw = select_bandwidth(g.samples, bw_method)
        dens = _weighted_density(g.samples, g.modes, nodes, normals, sp, table, bw)
        per.append(CrossingEstimate(max(H * float(dens @ wts), 0.0), "kr_stationary",
                                    {"n_H": g.n_points, "h": g.step, "bandwidth_h": bw.h}))
    vals = np.array([c.value for c in per])
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    mean = CrossingEstimate(float(vals.mean()), "kr_stationary",
                            {"n": len(dataset), "n_H": dataset[0].n_points, "h": dataset[0].step,
                             "step": step, "se": se})
    return per, mean


def closed_form(process_id: str, params: dict, surface, horizon: float) -> CrossingEstimate:
    """Stationary Kac-Rice value ``H sum_y |r_y(x)| p(x, y)`` for 1D models.

    Both builtin 1D models have unit speed in each mode and an invariant
    mode law independent of position, so this is ``H p_X(x)``.
    """
    if not isinstance(surface, Level):
        raise ValueError(f"no invariant density registered for {process_id} on this surface")
    x = surface.x_star
    if process_id == "telegraph1d":
        a, b = float(params.get("a", 1.0)), float(params.get("b", 2.0))
        if not b > a > 0:
            raise ValueError("the telegraph process needs b > a > 0")
        k = b - a
        density = 0.5 * k * math.exp(-k * abs(x))
        meta = {}
    elif process_id == "pdsa":
        beta = float(params.get("beta", 7.0))
        z = quad(lambda s: math.exp(-beta * float(double_well(s))), -10.0, 10.0,
                 limit=200, epsabs=1e-13, epsrel=1e-12)[0]
        density = math.exp(-beta * float(double_well(x))) / z
        meta = {"Z": z}
    else:
        raise ValueError(f"no invariant density registered for process {process_id!r}")
    # sum over the two modes of |r_y| * p(x) / 2, with |r_y| = 1
    value = horizon * sum(1.0 * density * 0.5 for _ in (-1, 1))
    return CrossingEstimate(value, "closed_form", {"process": process_id, "H": horizon, **meta})


def exact_oracle(model: ProcessModel, surface, horizon: float, n_ref: int = 5000,
                 seed: int = 0, **sim_kwargs) -> CrossingEstimate:
    """Mean exact crossing count over ``n_ref`` fresh simulations."""
    if n_ref < 1:
        raise ValueError("n_ref must be at least 1")
    counts = np.empty(n_ref)
    for i in range(n_ref):
        traj = simulate_event(model, rng_stream(seed, 0, i), horizon, **sim_kwargs)
        counts[i] = count_exact(traj, surface).total
    se = float(counts.std(ddof=1) / math.sqrt(n_ref)) if n_ref > 1 else 0.0
    return CrossingEstimate(float(counts.mean()), "exact_oracle",
                            {"n_ref": n_ref, "seed": seed, "se": se, "H": horizon})


def make_model(process_id: str, params: Optional[dict] = None) -> ProcessModel:
    factories = builtin_models()
    if process_id not in factories:
        raise ValueError(f"unknown process {process_id!r}; choose from {sorted(factories)}")
    return factories[process_id](**(params or {}))
