"""GPS trajectories: ingestion, daily regridding, speed projections, crossing curves.

Positions are ``(lon, lat)`` in decimal degrees and the time unit is the
hour, so velocities are in degrees per hour.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .estimators import CrossingEstimate, SpeedProjection, kr_nonstationary, monte_carlo
from .lowess import lowess
from .psp_sim import EventTrajectory, GridTrajectory, rng_stream, simulate_event, telegraph2d
from .surfaces import Segment

log = logging.getLogger(__name__)

DEFAULT_COLUMNS = {
    "timestamp": "timestamp",
    "lat": "location-lat",
    "lon": "location-long",
    "ground_speed": "ground-speed",
    "heading": "heading",
}
ID_COLUMN = "individual-local-identifier"
REF_LAT = 53.6
M_PER_DEG_LAT = 111200.0
M_PER_DEG_LON_EQ = 111320.0
SECONDS_PER_DAY = 86400.0
DEFAULT_N_POINTS = 468
DEFAULT_EPS = 0.01
DEFAULT_DX_PROJ = 0.01
HEADINGS = ("compass", "literal")

SEA_A, SEA_B = (6.9, 53.7), (7.5, 53.77)
INLAND_A, INLAND_B = (7.45, 53.7), (8.05, 53.7)


@dataclass(frozen=True)
class GpsRecord:
    timestamp: dt.datetime
    lat: float
    lon: float
    ground_speed: float
    heading: float
    animal: str = ""

    def __post_init__(self):
        if not -90 <= self.lat <= 90:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180 <= self.lon <= 180:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if not self.ground_speed >= 0:
            raise ValueError(f"negative ground speed {self.ground_speed}")
        if not 0 <= self.heading < 360:
            raise ValueError(f"heading {self.heading} outside [0, 360)")


def _parse_time(text: str) -> dt.datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    t = dt.datetime.fromisoformat(text)
    if t.tzinfo is None:
        return t.replace(tzinfo=dt.timezone.utc)
    return t.astimezone(dt.timezone.utc)


def ingest_csv(path, column_map: Optional[dict] = None, id_column: Optional[str] = ID_COLUMN,
               strict: bool = False) -> list[GpsRecord]:
    """Read GPS records, sorted by animal then time.

    ``column_map`` maps the fields ``timestamp, lat, lon, ground_speed,
    heading`` to CSV column names.  Rows that fail to parse or validate are
    skipped and counted in a warning, unless ``strict``.  The id column is
    optional; without it every row belongs to one animal.
    """
    cols = {**DEFAULT_COLUMNS, **(column_map or {})}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        missing = [c for c in cols.values() if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        has_id = id_column is not None and id_column in reader.fieldnames
        records, bad = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = GpsRecord(
                    _parse_time(row[cols["timestamp"]]),
                    float(row[cols["lat"]]),
                    float(row[cols["lon"]]),
                    float(row[cols["ground_speed"]]),
                    float(row[cols["heading"]]),
                    row[id_column] if has_id else "",
                )
            except (ValueError, TypeError) as exc:
                if strict:
                    raise ValueError(f"{path}:{lineno}: {exc}") from exc
                bad.append((lineno, str(exc)))
                continue
            records.append(rec)
    if bad:
        warnings.warn(f"{path}: skipped {len(bad)} invalid row(s); first at line {bad[0][0]}: {bad[0][1]}",
                      RuntimeWarning, stacklevel=2)
    if not records:
        raise ValueError(f"{path}: no valid records")
    records.sort(key=lambda r: (r.animal, r.timestamp))
    return records


def velocity_vector(rec: GpsRecord, ref_lat: float = REF_LAT, convention: str = "compass"):
    """Recorded speed and heading as ``(v_lon, v_lat)`` in degrees per hour.

    ``compass`` reads the heading clockwise from north, giving east/north
    components ``v (sin h, cos h)``.  ``literal`` applies ``v (cos t, sin t)``
    to the heading shifted to start from east, ``t = h - 90``.
    Meters are converted with a fixed reference latitude.
    """
    if abs(ref_lat) >= 89:
        raise ValueError("reference latitude too close to a pole")
    h = math.radians(rec.heading)
    if convention == "compass":
        east, north = rec.ground_speed * math.sin(h), rec.ground_speed * math.cos(h)
    elif convention == "literal":
        t = h - math.pi / 2
        east, north = rec.ground_speed * math.cos(t), rec.ground_speed * math.sin(t)
    else:
        raise ValueError(f"unknown heading convention {convention!r}; choose from {HEADINGS}")
    v_lon = 3600.0 * east / (M_PER_DEG_LON_EQ * math.cos(math.radians(ref_lat)))
    v_lat = 3600.0 * north / M_PER_DEG_LAT
    return v_lon, v_lat


@dataclass(frozen=True)
class DayTrajectory:
    """One animal-day on the common daily grid (hours since midnight UTC)."""

    day: dt.date
    animal: str
    positions: np.ndarray
    velocities: np.ndarray
    n_records: int

    @property
    def n_points(self) -> int:
        return len(self.positions)

    @property
    def hours(self) -> np.ndarray:
        return np.linspace(0.0, 24.0, self.n_points)

    def to_grid(self) -> GridTrajectory:
        return GridTrajectory(24.0, self.positions, self.velocities)


def slice_and_regrid(records: Sequence[GpsRecord], min_count: int = 440, max_count: int = 467,
                     n_points: int = DEFAULT_N_POINTS, ref_lat: float = REF_LAT,
                     convention: str = "compass") -> list[DayTrajectory]:
    """Split records into UTC animal-days and interpolate each onto the daily grid.

    Days with a record count outside ``[min_count, max_count]`` are dropped.
    Grid points are ``j * 24h / (n_points - 1)``; positions are linearly
    interpolated (held constant beyond the first/last record) and velocities
    come from the nearest record in time.
    """
    groups: dict = {}
    for r in records:
        groups.setdefault((r.animal, r.timestamp.date()), []).append(r)
    grid_s = np.linspace(0.0, SECONDS_PER_DAY, n_points)
    days = []
    for (animal, day), recs in sorted(groups.items()):
        if not min_count <= len(recs) <= max_count:
            continue
        if len(recs) < 2:
            raise ValueError(f"day {day} of {animal!r} has fewer than two records")
        midnight = dt.datetime.combine(day, dt.time(), tzinfo=dt.timezone.utc)
        secs = np.array([(r.timestamp - midnight).total_seconds() for r in recs])
        lon = np.interp(grid_s, secs, [r.lon for r in recs])
        lat = np.interp(grid_s, secs, [r.lat for r in recs])
        vel = np.array([velocity_vector(r, ref_lat, convention) for r in recs])
        idx = np.searchsorted(secs, grid_s)
        idx = np.clip(idx, 1, len(secs) - 1)
        nearest = np.where(grid_s - secs[idx - 1] <= secs[idx] - grid_s, idx - 1, idx)
        days.append(DayTrajectory(day, animal, np.column_stack([lon, lat]), vel[nearest], len(recs)))
    log.info("retained %d of %d animal-days", len(days), len(groups))
    return days


# --------------------------------------------------------------------------
# speed projections


def _projection_pool(days: Sequence[DayTrajectory]):
    pos = np.vstack([d.positions for d in days])
    vel = np.vstack([d.velocities for d in days])
    return pos, vel


def speed_projection_estimate(days: Sequence[DayTrajectory], seg: Segment, eps: float = DEFAULT_EPS,
                              dx: float = DEFAULT_DX_PROJ, span: float = 2.0 / 3.0, iterations: int = 3,
                              averaging: str = "occupancy") -> SpeedProjection:
    """Speed projection on ``seg`` estimated from recorded velocities.

    The segment is walked at ``rho_k = A + k dx (B - A)``.  At each stop the
    data points within ``eps`` give the mean positive and mean negative
    parts of ``(v, nu)`` (zero when no point is close); both sequences are
    LOWESS-smoothed and linearly interpolated along the segment.

    ``averaging="occupancy"`` averages the parts over all close points, so
    that their sum estimates ``E|(r, nu)|`` locally.  ``"conditional"``
    averages each part over the points of that sign only and halves their
    sum, which assumes as many outward as inward passages.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not 0 < dx <= 1:
        raise ValueError("dx must lie in (0, 1]")
    if averaging not in ("occupancy", "conditional"):
        raise ValueError(f"unknown averaging {averaging!r}")
    pos, vel = _projection_pool(days)
    tree = cKDTree(pos)
    ks = np.arange(math.floor(1.0 / dx + 1e-9) + 1)
    u = ks * dx
    stops = seg.point(u)
    nu = seg.nu
    plus = np.zeros(len(u))
    minus = np.zeros(len(u))
    counts = np.zeros(len(u), dtype=int)
    for k, near in enumerate(tree.query_ball_point(stops, eps)):
        if not near:
            continue
        proj = vel[near] @ nu
        counts[k] = len(near)
        if averaging == "occupancy":
            plus[k] = np.clip(proj, 0, None).mean()
            minus[k] = np.clip(-proj, 0, None).mean()
        else:
            plus[k] = proj[proj > 0].mean() if np.any(proj > 0) else 0.0
            minus[k] = -proj[proj < 0].mean() if np.any(proj < 0) else 0.0
    if not counts.any():
        warnings.warn("no data point within eps of the segment; speed projection is zero",
                      RuntimeWarning, stacklevel=2)
        s_plus, s_minus = plus, minus
    elif len(u) >= 2:
        s_plus = np.clip(lowess(u, plus, span, iterations), 0, None)
        s_minus = np.clip(lowess(u, minus, span, iterations), 0, None)
    else:
        s_plus, s_minus = plus, minus
    a, d = seg.a, seg.direction

    def parts(points, normals=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        t = np.clip(((pts - a) @ d) / (d @ d), 0.0, 1.0)
        return np.interp(t, u, s_plus), np.interp(t, u, s_minus)

    scale = 0.5 if averaging == "conditional" else 1.0
    data = {"u": u, "raw_plus": plus, "raw_minus": minus, "plus": s_plus, "minus": s_minus,
            "counts": counts, "eps": eps, "dx": dx}
    return SpeedProjection(parts, "data-estimated", None, scale, data)


# --------------------------------------------------------------------------
# segment families and crossing curves


@dataclass(frozen=True)
class SegmentFamily:
    segments: tuple
    direction_label: str
    distances: tuple


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def segment_families(A=SEA_A, B=SEA_B, A2=INLAND_A, B2=INLAND_B, dx: float = 0.01,
                     theta: float = math.pi / 247, count: int = 61, inland_sign: float = -1.0):
    """The sea and inland families of ``count`` segments.

    Sea: ``A_i = A + i dx R^i nu`` and ``B_i = A + R^i (B + i dx nu - A)``,
    i.e. ``[AB]`` rotated by ``i theta`` and pushed ``i dx`` along the rotated
    normal.  Inland: ``[A'B']`` translated by ``i dx`` along ``inland_sign``
    times its normal; the default -1 moves the default west-east segment
    south, away from the coast.  Distances are the offsets ``i dx``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if inland_sign not in (-1.0, 1.0):
        raise ValueError("inland_sign must be +1 or -1")
    base = Segment(A, B)
    base2 = Segment(A2, B2)
    a, b, nu = base.a, base.b, base.nu
    a2, b2, nu2 = base2.a, base2.b, inland_sign * base2.nu
    R = _rotation(theta)
    sea, inland = [], []
    Ri = np.eye(2)
    for i in range(count):
        ai = a + i * dx * (Ri @ nu)
        bi = a + Ri @ (b + i * dx * nu - a)
        sea.append(Segment(tuple(ai), tuple(bi)))
        inland.append(Segment(tuple(a2 + i * dx * nu2), tuple(b2 + i * dx * nu2)))
        Ri = R @ Ri
    dist = tuple(i * dx for i in range(count))
    return SegmentFamily(tuple(sea), "sea", dist), SegmentFamily(tuple(inland), "inland", dist)


def translated_family(A, B, dx: float, count: int, label: str = "custom") -> SegmentFamily:
    """``[AB]`` translated by ``i dx`` along its normal, ``i < count``."""
    base = Segment(A, B)
    segs = tuple(Segment(tuple(base.a + i * dx * base.nu), tuple(base.b + i * dx * base.nu))
                 for i in range(count))
    return SegmentFamily(segs, label, tuple(i * dx for i in range(count)))


def crossing_curve(days: Sequence[DayTrajectory], family: SegmentFamily, method: str = "kr",
                   eps: float = DEFAULT_EPS, dx_proj: float = DEFAULT_DX_PROJ,
                   bw_method: Optional[str] = None, step: float = 0.01,
                   averaging: str = "occupancy") -> list[tuple[float, float]]:
    """Daily mean crossing count of every segment of ``family``.

    ``kr`` combines the data-estimated speed projection with time-slice KDEs
    over days; ``mc`` averages the chord crossing counts over days.
    """
    if not days:
        raise ValueError("no days to estimate from")
    grids = [d.to_grid() for d in days]
    out = []
    for dist, seg in zip(family.distances, family.segments):
        if method == "mc":
            est = monte_carlo(grids, seg)
        elif method == "kr":
            if len(days) < 2:
                raise ValueError("the Kac-Rice curve needs at least two days")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                sp = speed_projection_estimate(days, seg, eps, dx_proj, averaging=averaging)
            est = kr_nonstationary(grids, seg, sp, bw_method, step=step)
        else:
            raise ValueError(f"unknown method {method!r}; use 'kr' or 'mc'")
        out.append((float(dist), est.value))
    return out


def write_curve_csv(rows, fh) -> None:
    """``rows`` are ``(distance, estimate, method, direction)`` tuples."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["distance", "estimate", "method", "direction"])
    for d, e, m, lab in rows:
        w.writerow([repr(float(d)), repr(float(e)), m, lab])


# --------------------------------------------------------------------------
# synthetic data


HEADING_OF_MODE = {"N": 0.0, "E": 90.0, "S": 180.0, "W": 270.0}


def degrees_per_unit(unit_m: float, ref_lat: float = REF_LAT):
    """Degrees of (lon, lat) per model length unit of ``unit_m`` meters."""
    return (unit_m / (M_PER_DEG_LON_EQ * math.cos(math.radians(ref_lat))), unit_m / M_PER_DEG_LAT)


def simulate_gps_days(n_days: int, seed: int, a: float = 1.0, b: float = 2.0,
                      origin=(7.7, 53.6), unit_m: float = 5000.0, ref_lat: float = REF_LAT,
                      n_records: int = 467, start=dt.date(2013, 6, 1)):
    """2D telegraph paths over 24 h recorded as GPS fixes.

    One model length unit is ``unit_m`` meters and the model moves one unit
    per hour.  Fixes are taken at ``j * 24h / n_records``, ``j < n_records``.
    Returns ``(records, event_trajectories)``.
    """
    model = telegraph2d(a, b)
    k_lon, k_lat = degrees_per_unit(unit_m, ref_lat)
    speed = unit_m / 3600.0
    dt_s = SECONDS_PER_DAY / n_records
    records, trajs = [], []
    for i in range(n_days):
        traj = simulate_event(model, rng_stream(seed, 0, i), 24.0)
        trajs.append(traj)
        midnight = dt.datetime.combine(start + dt.timedelta(days=i), dt.time(), tzinfo=dt.timezone.utc)
        for j in range(n_records):
            x, y = traj.state(j * dt_s / 3600.0)
            records.append(GpsRecord(
                midnight + dt.timedelta(seconds=j * dt_s),
                float(origin[1] + x[1] * k_lat),
                float(origin[0] + x[0] * k_lon),
                speed,
                HEADING_OF_MODE[model.modes[y]],
                "synthetic",
            ))
    return records, trajs


def write_gps_csv(records: Sequence[GpsRecord], fh, column_map: Optional[dict] = None) -> None:
    cols = {**DEFAULT_COLUMNS, **(column_map or {})}
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([cols["timestamp"], cols["lat"], cols["lon"], cols["ground_speed"], cols["heading"], ID_COLUMN])
    for r in records:
        w.writerow([r.timestamp.isoformat(timespec="microseconds"), repr(float(r.lat)), repr(float(r.lon)),
                    repr(float(r.ground_speed)), repr(float(r.heading)), r.animal])


def degree_grid(traj: EventTrajectory, n_points: int, origin=(7.7, 53.6), unit_m: float = 5000.0,
                ref_lat: float = REF_LAT) -> GridTrajectory:
    """Grid observation of a model path expressed in (lon, lat) degrees."""
    from .psp_sim import sample_grid

    g = sample_grid(traj, n_points)
    k = np.array(degrees_per_unit(unit_m, ref_lat))
    return GridTrajectory(g.horizon, np.asarray(origin) + g.samples * k, g.velocities * k,
                          g.modes, g.mode_labels)


__all__ = [
    "GpsRecord",
    "DayTrajectory",
    "SegmentFamily",
    "ingest_csv",
    "velocity_vector",
    "slice_and_regrid",
    "speed_projection_estimate",
    "segment_families",
    "translated_family",
    "crossing_curve",
    "write_curve_csv",
    "simulate_gps_days",
    "write_gps_csv",
    "degree_grid",
    "CrossingEstimate",
]
