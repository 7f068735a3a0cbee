"""Piecewise deterministic process models and their simulation.

A process is described by one vector field per mode, a state-dependent jump
rate and a post-jump mark kernel.  Trajectories are simulated exactly at the
event level (jump times and marks) and can then be observed on a regular
time grid, which is the data format the estimators work with.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Optional, Sequence

import numpy as np

__all__ = [
    "SimulationError",
    "VectorField",
    "Flow",
    "ProcessModel",
    "EventTrajectory",
    "GridTrajectory",
    "rng_stream",
    "simulate_event",
    "simulate_many",
    "sample_grid",
    "telegraph_invariant_sample",
    "telegraph1d",
    "pdsa",
    "double_well",
    "telegraph2d",
    "builtin_models",
    "write_grid_csv",
    "read_grid_csv",
    "write_dataset_csv",
    "read_dataset_csv",
]

DEFAULT_MAX_EVENTS = 10**6
THINNING_WINDOW = 0.1
THINNING_SUBGRID = 16
THINNING_SAFETY = 1.5
THINNING_MAX_REFINEMENTS = 20


class SimulationError(RuntimeError):
    """Raised when a model cannot be simulated as specified."""


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream identified by ``(seed, *keys)``.

    Streams are derived from a seed sequence spawn key, so that trajectory
    ``k`` of replicate ``r`` gets the same numbers regardless of how many
    other trajectories are simulated or in which order.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class VectorField:
    dim: int
    func: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x) -> np.ndarray:
        v = np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)
        if v.shape[-1:] != (self.dim,):
            v = np.reshape(v, np.shape(x))
        return v

    @classmethod
    def constant(cls, velocity) -> "VectorField":
        vel = np.atleast_1d(np.asarray(velocity, dtype=float))
        return cls(vel.size, lambda x: np.broadcast_to(vel, np.shape(x)).copy())


class Flow:
    """Solution map ``phi(x, t)`` of ``x' = field(x)``.

    Uses the closed form when ``analytic`` is given, otherwise classical RK4
    with a fixed step.  Linear flows (constant velocity) are flagged through
    ``velocity`` so callers can vectorize and solve crossings in closed form.
    """

    def __init__(self, field: VectorField, analytic=None, step: float = 1e-3, velocity=None):
        if step <= 0:
            raise ValueError("integration step must be positive")
        self.field = field
        self.analytic = analytic
        self.step = float(step)
        self.velocity = None if velocity is None else np.atleast_1d(np.asarray(velocity, dtype=float))

    @classmethod
    def linear(cls, velocity) -> "Flow":
        vel = np.atleast_1d(np.asarray(velocity, dtype=float))
        return cls(VectorField.constant(vel), analytic=lambda x, t: x + t * vel, velocity=vel)

    @property
    def dim(self) -> int:
        return self.field.dim

    def __call__(self, x, t: float) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if t == 0:
            return x.copy()
        if t < 0:
            raise ValueError("flows are only evaluated forward in time")
        if self.analytic is not None:
            return np.asarray(self.analytic(x, t), dtype=float)
        return self._rk4(x, t)

    def _rk4(self, x: np.ndarray, t: float) -> np.ndarray:
        n = max(1, math.ceil(t / self.step - 1e-12))
        h = t / n
        f = self.field
        for _ in range(n):
            k1 = f(x)
            k2 = f(x + 0.5 * h * k1)
            k3 = f(x + 0.5 * h * k2)
            k4 = f(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return x

    def advance_many(self, x0: np.ndarray, ts: np.ndarray) -> np.ndarray:
        """``phi(x0[k], ts[k])`` for every row ``k``."""
        x0 = np.asarray(x0, dtype=float)
        ts = np.asarray(ts, dtype=float)
        if self.velocity is not None:
            return x0 + ts[:, None] * self.velocity[None, :]
        return np.array([self(x, t) for x, t in zip(x0, ts)]).reshape(x0.shape)


@dataclass
class ProcessModel:
    """Euclidean-mode piecewise deterministic Markov process.

    ``rate(x, y)`` is the total jump rate out of mode index ``y`` at position
    ``x``; ``transition(x, y, rng)`` draws the post-jump mark.  When
    ``hazard_pieces`` is given it must return the rate along the arc started
    at ``(x, y)`` as a list of ``(end_time, rate)`` pieces, piecewise
    constant in time, which enables exact inversion instead of thinning.
    """

    name: str
    dim: int
    modes: tuple
    flows: tuple
    rate: Callable[[np.ndarray, int], float]
    transition: Callable[[np.ndarray, int, np.random.Generator], tuple]
    initial: Callable[[np.random.Generator], tuple]
    hazard_pieces: Optional[Callable[[np.ndarray, int], list]] = None
    invariant_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: dict = field(default_factory=dict)
    rate_vectorized: bool = False

    def __post_init__(self):
        if len(self.flows) != len(self.modes):
            raise ValueError("one flow per mode is required")
        for fl in self.flows:
            if fl.dim != self.dim:
                raise ValueError("flow dimension does not match the model")

    def mode_index(self, label: Hashable) -> int:
        return self.modes.index(label)

    def velocity(self, x, y: int) -> np.ndarray:
        return self.flows[y].field(x)

    @property
    def is_linear(self) -> bool:
        return all(fl.velocity is not None for fl in self.flows)


@dataclass(frozen=True)
class EventTrajectory:
    """Exact path: jump times, post-jump positions and modes, horizon."""

    model: ProcessModel
    horizon: float
    times: np.ndarray
    points: np.ndarray
    modes: np.ndarray

    def __post_init__(self):
        t = self.times
        if t[0] != 0.0:
            raise ValueError("trajectories start at time 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("jump times must be strictly increasing")
        if t[-1] > self.horizon:
            raise ValueError("last event after the horizon")
        for arr in (self.times, self.points, self.modes):
            arr.setflags(write=False)

    @property
    def n_jumps(self) -> int:
        return len(self.times) - 1

    def arcs(self):
        """Yield ``(start_time, duration, start_point, mode)`` per arc."""
        ends = np.append(self.times[1:], self.horizon)
        for k in range(len(self.times)):
            yield self.times[k], ends[k] - self.times[k], self.points[k], int(self.modes[k])

    def state(self, t: float):
        if not 0 <= t <= self.horizon:
            raise ValueError("time outside [0, horizon]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        y = int(self.modes[k])
        return self.model.flows[y](self.points[k], t - self.times[k]), y


@dataclass(frozen=True)
class GridTrajectory:
    """Observation of a path on the regular grid ``H (j-1)/(n_H-1)``."""

    horizon: float
    samples: np.ndarray
    velocities: Optional[np.ndarray] = None
    modes: Optional[np.ndarray] = None
    mode_labels: Optional[tuple] = None

    def __post_init__(self):
        if self.samples.ndim != 2 or len(self.samples) < 2:
            raise ValueError("samples must be an (n_H, d) array with n_H >= 2")

    @property
    def n_points(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def step(self) -> float:
        return self.horizon / (self.n_points - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_points)


# --------------------------------------------------------------------------
# simulation


def _delay_from_pieces(pieces, e: float) -> float:
    """First time the cumulative piecewise-constant hazard reaches ``e``."""
    start = 0.0
    for end, lam in pieces:
        if lam > 0:
            span = end - start
            if lam * span >= e:
                return start + e / lam
            e -= lam * span
        start = end
        if math.isinf(start):
            break
    return math.inf


def _rates_along(model: ProcessModel, x, y: int, ts: np.ndarray) -> np.ndarray:
    pts = model.flows[y].advance_many(np.repeat(x[None, :], len(ts), axis=0), ts)
    if model.rate_vectorized:
        return np.asarray(model.rate(pts, y), dtype=float)
    return np.array([model.rate(p, y) for p in pts], dtype=float)


def _delay_by_thinning(model: ProcessModel, x, y: int, rng, remaining: float) -> float:
    flow = model.flows[y]
    s = 0.0
    while s < remaining:
        w = min(THINNING_WINDOW, remaining - s)
        ts = s + np.linspace(0.0, w, THINNING_SUBGRID)
        bound = THINNING_SAFETY * float(np.max(_rates_along(model, x, y, ts)))
        if not math.isfinite(bound):
            raise SimulationError(f"non-finite jump rate near time offset {s:g}")
        for _ in range(THINNING_MAX_REFINEMENTS):
            if bound <= 0.0:
                tau = math.inf
                break
            u = s
            violated = False
            while True:
                u += rng.exponential(1.0 / bound)
                if u >= s + w:
                    tau = math.inf
                    break
                lam = float(model.rate(flow(x, u), y))
                if not math.isfinite(lam):
                    raise SimulationError(f"non-finite jump rate at time offset {u:g}")
                if lam > bound:
                    bound = 2.0 * lam
                    violated = True
                    break
                if rng.random() * bound < lam:
                    tau = u
                    break
            if not violated:
                break
        else:
            raise SimulationError(
                f"jump-rate bound kept failing near time offset {s:g}; "
                "is the rate bounded on compacts?"
            )
        if not math.isinf(tau):
            return tau
        s += w
    return math.inf


def simulate_event(model: ProcessModel, rng, horizon: float, *, start=None,
                   max_events: int = DEFAULT_MAX_EVENTS) -> EventTrajectory:
    """Simulate one exact trajectory on ``[0, horizon]``.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed.  ``start``
    overrides the model's initial law with a fixed ``(point, mode_index)``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = rng_stream(rng)
    if start is None:
        x, y = model.initial(rng)
    else:
        x, y = start
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = int(y)
    times, points, modes = [0.0], [x], [y]
    t = 0.0
    while True:
        remaining = horizon - t
        if model.hazard_pieces is not None:
            tau = _delay_from_pieces(model.hazard_pieces(x, y), rng.exponential())
        else:
            tau = _delay_by_thinning(model, x, y, rng, remaining)
        if tau >= remaining:
            break
        if tau <= 0.0:
            raise SimulationError(f"simultaneous jumps at time {t:g} are not supported")
        pre = model.flows[y](x, tau)
        x, y = model.transition(pre, y, rng)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t += tau
        times.append(t)
        points.append(x)
        modes.append(int(y))
        if len(times) > max_events:
            raise SimulationError(
                f"more than {max_events} events before time {t:g}; explosive jump rate?"
            )
    return EventTrajectory(model, float(horizon), np.array(times), np.array(points),
                           np.array(modes, dtype=int))


def simulate_many(model: ProcessModel, n: int, horizon: float, seed: int,
                  replicate: int = 0, **kwargs) -> list[EventTrajectory]:
    """``n`` independent trajectories, trajectory ``i`` on stream ``(seed, replicate, i)``."""
    return [simulate_event(model, rng_stream(seed, replicate, i), horizon, **kwargs)
            for i in range(n)]


def sample_grid(traj: EventTrajectory, n_points: int) -> GridTrajectory:
    """Exact states and velocities of ``traj`` on ``n_points`` regular times."""
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    model = traj.model
    tgrid = np.linspace(0.0, traj.horizon, n_points)
    idx = np.searchsorted(traj.times, tgrid, side="right") - 1
    modes = traj.modes[idx]
    dt = tgrid - traj.times[idx]
    start = traj.points[idx]
    samples = np.empty((n_points, model.dim))
    velocities = np.empty((n_points, model.dim))
    for y in np.unique(modes):
        sel = modes == y
        flow = model.flows[y]
        samples[sel] = flow.advance_many(start[sel], dt[sel])
        if flow.velocity is not None:
            velocities[sel] = flow.velocity
        else:
            velocities[sel] = np.array([flow.field(p) for p in samples[sel]])
    return GridTrajectory(traj.horizon, samples, velocities, modes, model.modes)


# --------------------------------------------------------------------------
# builtin models


def telegraph_invariant_sample(u: float, a: float, b: float) -> float:
    """Position drawn from the invariant law of the 1D telegraph process.

    Inverse transform of the Laplace density ``(b-a)/2 exp(-(b-a)|x|)``.
    """
    if not b > a > 0:
        raise ValueError("the telegraph process needs b > a > 0")
    if not 0.0 < u < 1.0:
        raise ValueError("u must lie in (0, 1)")
    k = b - a
    lo, hi = math.log(2 * u), math.log(2 * (1 - u))
    return (lo / k if lo < 0 else 0.0) - (hi / k if hi < 0 else 0.0)


def _flip_mode(x, y, rng):
    return x, 1 - y


def telegraph1d(a: float = 1.0, b: float = 2.0, start=None) -> ProcessModel:
    """Velocity +-1, switching at rate ``a`` towards the origin and ``b`` away from it.

    Modes are ``(-1, +1)``.  Without ``start`` the initial mark is drawn from
    the invariant law, so the process is stationary.
    """
    if not b > a > 0:
        raise ValueError("the telegraph process needs b > a > 0")
    modes = (-1, 1)
    flows = (Flow.linear([-1.0]), Flow.linear([1.0]))

    def rate(x, y):
        return a if x[0] * modes[y] <= 0 else b

    def pieces(x, y):
        xy = x[0] * modes[y]
        if xy < 0:
            return [(abs(x[0]), a), (math.inf, b)]
        return [(math.inf, b)]

    if start is None:
        def initial(rng):
            return np.array([telegraph_invariant_sample(rng.random(), a, b)]), int(rng.integers(2))
    else:
        x0, y0 = start

        def initial(rng):
            return np.array([float(x0)]), modes.index(y0)

    def density(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * (b - a) * np.exp(-(b - a) * np.abs(x))

    return ProcessModel("telegraph1d", 1, modes, flows, rate, _flip_mode, initial,
                        hazard_pieces=pieces,
                        invariant_density=density if start is None else None,
                        params={"a": a, "b": b})


def double_well(x):
    """``U(x) = 0.05 (x^4 + x^3 - 4 x^2)``."""
    x = np.asarray(x, dtype=float)
    return 0.05 * (x**4 + x**3 - 4 * x**2)


def _double_well_grad(x):
    x = np.asarray(x, dtype=float)
    return 0.05 * (4 * x**3 + 3 * x**2 - 8 * x)


class _GibbsSampler:
    """Rejection sampler for ``exp(-beta U) / Z`` on a bounded support."""

    def __init__(self, beta, potential, support=(-6.0, 6.0)):
        self.beta = beta
        self.potential = potential
        self.lo, self.hi = support
        grid = np.linspace(self.lo, self.hi, 20001)
        # the grid max can miss the true max by O(step^2); pad it
        self.log_bound = float(np.max(-beta * potential(grid))) + 1e-3

    def __call__(self, rng) -> float:
        while True:
            x = rng.uniform(self.lo, self.hi)
            if math.log(rng.random()) <= -self.beta * float(self.potential(x)) - self.log_bound:
                return x


def pdsa(beta: float = 7.0, potential=double_well, gradient=_double_well_grad,
         start=None, support=(-6.0, 6.0)) -> ProcessModel:
    """Piecewise deterministic simulated annealing, rate ``beta [y U'(x)]_+``.

    Without ``start`` the initial position follows the Gibbs law
    ``exp(-beta U)/Z`` (with a uniform mode), which is invariant.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    modes = (-1, 1)
    flows = (Flow.linear([-1.0]), Flow.linear([1.0]))

    def rate(x, y):
        # accepts a single point (1,) or a stack of points (k, 1)
        return beta * np.maximum(0.0, modes[y] * gradient(np.asarray(x)[..., 0]))

    gibbs = _GibbsSampler(beta, potential, support)
    if start is None:
        def initial(rng):
            return np.array([gibbs(rng)]), int(rng.integers(2))
    else:
        x0, y0 = start

        def initial(rng):
            return np.array([float(x0)]), modes.index(y0)

    from scipy.integrate import quad

    z_beta = quad(lambda s: math.exp(-beta * float(potential(s))), *support, limit=200)[0]

    def density(x):
        return np.exp(-beta * potential(np.asarray(x, dtype=float))) / z_beta

    return ProcessModel("pdsa", 1, modes, flows, rate, _flip_mode, initial,
                        invariant_density=density if start is None else None,
                        params={"beta": beta, "Z": z_beta}, rate_vectorized=True)


_CARDINAL = {"N": (0.0, 1.0), "S": (0.0, -1.0), "E": (1.0, 0.0), "W": (-1.0, 0.0)}


def quadrant(x) -> str:
    """Quadrant with the boundary conventions of the 2D telegraph rates."""
    x1, x2 = float(x[0]), float(x[1])
    if x1 >= 0:
        return "NE" if x2 >= 0 else "SE"
    return "SW" if x2 <= 0 else "NW"


def telegraph2d_rates(a: float, b: float):
    """``rates(x, y_label) -> {target_label: rate}`` for the 2D telegraph process."""
    table = {
        # (quadrant, from) -> {to: rate}
        ("SW", "W"): {"N": 1.0}, ("SW", "S"): {"N": b}, ("NE", "S"): {"N": a},
        ("NE", "E"): {"S": 1.0}, ("NE", "N"): {"S": b}, ("SW", "N"): {"S": a},
        ("NW", "N"): {"E": 1.0}, ("NW", "W"): {"E": b}, ("SE", "W"): {"E": a},
        ("SE", "S"): {"W": 1.0}, ("SE", "E"): {"W": b}, ("NW", "E"): {"W": a},
    }

    def rates(x, label):
        return table.get((quadrant(x), label), {})

    return rates


def telegraph2d(a: float = 1.0, b: float = 2.0, start=(0.0, 0.0)) -> ProcessModel:
    """Two-dimensional telegraph process with cardinal unit velocities.

    ``start`` is either a point (uniform initial mode) or ``(point, mode_label)``.
    """
    if not b > a > 0:
        raise ValueError("the 2D telegraph process needs b > a > 0")
    modes = ("N", "S", "E", "W")
    flows = tuple(Flow.linear(_CARDINAL[m]) for m in modes)
    table = telegraph2d_rates(a, b)

    def rate(x, y):
        return float(sum(table(x, modes[y]).values()))

    def transition(x, y, rng):
        out = table(x, modes[y])
        targets = list(out)
        w = np.array([out[k] for k in targets])
        if w.sum() <= 0:
            raise SimulationError(f"jump from mode {modes[y]} at {x} with zero rate")
        pick = targets[int(rng.choice(len(targets), p=w / w.sum()))] if len(targets) > 1 else targets[0]
        return x, modes.index(pick)

    def pieces(x, y):
        v = np.array(_CARDINAL[modes[y]])
        axis = 0 if v[0] != 0 else 1
        coord = x[axis] * v[axis]  # signed position along the motion
        # the moving coordinate changes sign (quadrant change) once at most
        breaks = []
        if coord < 0 or (coord == 0 and v[axis] < 0):
            breaks.append(-coord)
        out, prev = [], 0.0
        for end in breaks + [math.inf]:
            mid = prev + (1.0 if math.isinf(end) else 0.5 * (end - prev))
            out.append((end, rate(x + mid * v, y)))
            prev = end
        return out

    if len(start) == 2 and not isinstance(start[1], str):
        x0 = np.asarray(start, dtype=float)

        def initial(rng):
            return x0.copy(), int(rng.integers(4))
    else:
        x0, lab = np.asarray(start[0], dtype=float), start[1]

        def initial(rng):
            return x0.copy(), modes.index(lab)

    return ProcessModel("telegraph2d", 2, modes, flows, rate, transition, initial,
                        hazard_pieces=pieces, params={"a": a, "b": b})


def builtin_models() -> dict:
    """Factories of the three builtin models keyed by process id."""
    return {"telegraph1d": telegraph1d, "pdsa": pdsa, "telegraph2d": telegraph2d}


# --------------------------------------------------------------------------
# CSV export


def _grid_header(dim: int, with_vel: bool) -> list[str]:
    cols = ["t"] + [f"x{k + 1}" for k in range(dim)] + ["mode"]
    if with_vel:
        cols += [f"v{k + 1}" for k in range(dim)]
    return cols


def _grid_rows(g: GridTrajectory):
    with_vel = g.velocities is not None
    for j, t in enumerate(g.times):
        mode = "" if g.modes is None else g.mode_labels[int(g.modes[j])]
        row = [repr(float(t))] + [repr(float(v)) for v in g.samples[j]] + [str(mode)]
        if with_vel:
            row += [repr(float(v)) for v in g.velocities[j]]
        yield row


def write_grid_csv(g: GridTrajectory, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(_grid_header(g.dim, g.velocities is not None))
    w.writerows(_grid_rows(g))


def write_dataset_csv(dataset: Sequence[GridTrajectory], fh) -> None:
    """Several trajectories in one file, with a leading ``traj`` column."""
    if not dataset:
        raise ValueError("empty dataset")
    g0 = dataset[0]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["traj"] + _grid_header(g0.dim, g0.velocities is not None))
    for i, g in enumerate(dataset):
        for row in _grid_rows(g):
            w.writerow([str(i)] + row)


def _parse_mode(label: str, labels):
    if label == "":
        return None
    for k, lab in enumerate(labels):
        if str(lab) == label:
            return k
    raise ValueError(f"unknown mode label {label!r}")


def _grid_from_rows(header, rows, mode_labels) -> GridTrajectory:
    xcols = [k for k, c in enumerate(header) if c.startswith("x")]
    vcols = [k for k, c in enumerate(header) if c.startswith("v")]
    mcol = header.index("mode") if "mode" in header else None
    tcol = header.index("t")
    arr = np.array([[float(r[k]) for k in xcols] for r in rows])
    t = np.array([float(r[tcol]) for r in rows])
    vel = np.array([[float(r[k]) for k in vcols] for r in rows]) if vcols else None
    raw_modes = [r[mcol] for r in rows] if mcol is not None else []
    if mode_labels is None and any(raw_modes):
        mode_labels = tuple(sorted(set(raw_modes)))
    modes = None
    if any(raw_modes):
        modes = np.array([_parse_mode(m, mode_labels) for m in raw_modes], dtype=int)
    if not np.allclose(t, np.linspace(0.0, t[-1], len(t)), rtol=0, atol=1e-9 * max(1.0, t[-1])):
        raise ValueError("trajectory times are not a regular grid starting at 0")
    return GridTrajectory(float(t[-1]), arr, vel, modes, mode_labels if modes is not None else None)


def read_grid_csv(fh, mode_labels=None) -> GridTrajectory:
    rows = list(csv.reader(fh))
    return _grid_from_rows(rows[0], rows[1:], mode_labels)


def read_dataset_csv(fh, mode_labels=None) -> list[GridTrajectory]:
    rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "traj":
        raise ValueError("dataset CSV must start with a 'traj' column")
    header = rows[0][1:]
    groups: dict[str, list] = {}
    for r in rows[1:]:
        groups.setdefault(r[0], []).append(r[1:])
    return [_grid_from_rows(header, g, mode_labels) for _, g in sorted(groups.items(), key=lambda kv: int(kv[0]))]


def grid_to_csv_string(g: GridTrajectory) -> str:
    buf = io.StringIO()
    write_grid_csv(g, buf)
    return buf.getvalue()
