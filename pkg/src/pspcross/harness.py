"""Replicated estimator experiments driven by a JSON-able config."""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .estimators import (
    closed_form,
    kr_nonstationary,
    kr_stationary,
    make_model,
    model_speed_projection,
    monte_carlo,
)
from .psp_sim import sample_grid, simulate_many
from .surfaces import surface_from_config

SCHEMA_VERSION = "pspcross-experiment/1"
THREADS_ENV = "PSPCROSS_THREADS"
ROW_HEADER = ["replicate", "seed", "estimator", "value", "status"]
SUMMARY_HEADER = ["estimator", "n_ok", "mean", "sd", "q1", "median", "q3"]

# short names accepted on the command line and in configs
ESTIMATOR_ALIASES = {
    "mc": "monte_carlo",
    "monte_carlo": "monte_carlo",
    "kr_ns": "kr_nonstationary",
    "kr_nonstationary": "kr_nonstationary",
    "kr_s": "kr_stationary",
    "kr_stationary": "kr_stationary",
    "closed_form": "closed_form",
}
PROCESS_ALIASES = {"telegraph": "telegraph1d", "telegraph1d": "telegraph1d", "pdsa": "pdsa",
                   "telegraph2d": "telegraph2d"}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def canonical_process(name: str) -> str:
    try:
        return PROCESS_ALIASES[name]
    except KeyError:
        raise ConfigError("process", f"unknown process {name!r}; choose from {sorted(PROCESS_ALIASES)}") from None


@dataclass
class ExperimentConfig:
    process: str = "telegraph1d"
    params: dict = field(default_factory=dict)
    surface: dict = field(default_factory=lambda: {"type": "level", "x": 0.0})
    horizon: float = 50.0
    h: Optional[float] = None
    n_points: Optional[int] = None
    n: int = 100
    replicates: int = 1
    estimators: list = field(default_factory=lambda: ["mc", "kr_ns", "kr_s"])
    bw_method: Optional[str] = None
    step: float = 0.1
    quadrature: str = "rectangle"
    seed: int = 0
    output: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        self.process = canonical_process(self.process)
        if not isinstance(self.params, dict):
            raise ConfigError("params", "must be a mapping")
        try:
            surface_from_config(self.surface)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("surface", str(exc)) from None
        if not self.horizon > 0:
            raise ConfigError("horizon", "must be positive")
        if self.h is None and self.n_points is None:
            raise ConfigError("h", "give the grid step h or the point count n_points")
        if self.n_points is not None and int(self.n_points) < 2:
            raise ConfigError("n_points", "must be at least 2")
        if self.h is not None and not self.h > 0:
            raise ConfigError("h", "must be positive")
        if self.h is not None and self.n_points is not None:
            if abs(self.h * (self.n_points - 1) - self.horizon) > 1e-9:
                raise ConfigError("h", f"h*(n_points-1) = {self.h * (self.n_points - 1)} differs from horizon {self.horizon}")
        if self.h is not None and self.n_points is None:
            k = self.horizon / self.h
            if abs(k - round(k)) > 1e-9 * max(1.0, k):
                raise ConfigError("h", "horizon is not a whole number of grid steps")
        if int(self.n) < 1:
            raise ConfigError("n", "need at least one trajectory")
        if int(self.replicates) < 1:
            raise ConfigError("replicates", "must be at least 1")
        if not self.estimators:
            raise ConfigError("estimators", "empty estimator list")
        for e in self.estimators:
            if e not in ESTIMATOR_ALIASES:
                raise ConfigError("estimators", f"unknown estimator {e!r}; choose from {sorted(ESTIMATOR_ALIASES)}")
        if not self.step > 0:
            raise ConfigError("step", "must be positive")
        if self.quadrature not in ("rectangle", "trapezoid"):
            raise ConfigError("quadrature", "must be 'rectangle' or 'trapezoid'")
        if self.bw_method not in (None, "normal_reference", "silverman_1d"):
            raise ConfigError("bw_method", f"unknown bandwidth method {self.bw_method!r}")
        try:
            make_model(self.process, self.params)
        except (TypeError, ValueError) as exc:
            raise ConfigError("params", str(exc)) from None

    @property
    def grid_points(self) -> int:
        if self.n_points is not None:
            return int(self.n_points)
        return int(round(self.horizon / self.h)) + 1

    @property
    def grid_step(self) -> float:
        return self.horizon / (self.grid_points - 1)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown config field")
        return cls(**d)

    @classmethod
    def from_json(cls, path, overrides: Optional[dict] = None) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        d.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)


def sweep(base: ExperimentConfig, **axes) -> list[ExperimentConfig]:
    """Cartesian product of config fields, e.g. ``sweep(cfg, n=[50, 100], h=[0.01, 2])``.

    Setting ``h`` clears ``n_points`` (and vice versa) unless both vary.
    """
    names = list(axes)
    out = []
    for values in itertools.product(*(axes[k] for k in names)):
        upd = dict(zip(names, values))
        if "h" in upd and "n_points" not in upd:
            upd["n_points"] = None
        if "n_points" in upd and "h" not in upd:
            upd["h"] = None
        out.append(replace(base, **upd))
    return out


@dataclass
class ReplicateResult:
    replicate: int
    seed: int
    values: dict
    errors: dict
    wall_time: float


def run_replicate(config: ExperimentConfig, replicate: int) -> ReplicateResult:
    """Simulate ``n`` trajectories on stream ``(seed, replicate, i)`` and apply every estimator.

    An estimator that raises is recorded as failed for this replicate only.
    """
    t0 = time.perf_counter()
    model = make_model(config.process, config.params)
    surface = surface_from_config(config.surface)
    values, errors = {}, {}
    try:
        trajs = simulate_many(model, int(config.n), config.horizon, config.seed, replicate)
        data = [sample_grid(t, config.grid_points) for t in trajs]
    except Exception as exc:  # the whole replicate is lost
        for e in config.estimators:
            errors[e] = f"simulation: {type(exc).__name__}: {exc}"
        return ReplicateResult(replicate, config.seed, values, errors, time.perf_counter() - t0)
    sp = model_speed_projection(model)
    for e in config.estimators:
        name = ESTIMATOR_ALIASES[e]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                if name == "monte_carlo":
                    est = monte_carlo(data, surface)
                elif name == "kr_nonstationary":
                    est = kr_nonstationary(data, surface, sp, config.bw_method, step=config.step,
                                           quadrature=config.quadrature)
                elif name == "kr_stationary":
                    est = kr_stationary(data, surface, sp, config.bw_method, step=config.step)[1]
                else:
                    est = closed_form(config.process, config.params, surface, config.horizon)
            values[e] = est.value
        except Exception as exc:
            errors[e] = f"{type(exc).__name__}: {exc}"
    return ReplicateResult(replicate, config.seed, values, errors, time.perf_counter() - t0)


def _run_one(args):
    return run_replicate(*args)


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return default
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(THREADS_ENV, f"not an integer: {raw!r}") from None
    return max(1, k)


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> list[ReplicateResult]:
    """All replicates, in replicate order regardless of the worker count."""
    config.validate()
    workers = worker_count() if workers is None else workers
    jobs = [(config, r) for r in range(int(config.replicates))]
    if workers <= 1 or len(jobs) == 1:
        return [run_replicate(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def _quartiles(v: np.ndarray):
    return np.quantile(v, [0.25, 0.5, 0.75], method="linear")


def summarize(config: ExperimentConfig, results: list[ReplicateResult]) -> list[dict]:
    out = []
    for e in config.estimators:
        v = np.array([r.values[e] for r in results if e in r.values])
        row = {"estimator": e, "n_ok": len(v)}
        if len(v):
            q1, med, q3 = _quartiles(v)
            row.update(mean=float(v.mean()), sd=float(v.std(ddof=1)) if len(v) > 1 else math.nan,
                       q1=float(q1), median=float(med), q3=float(q3))
        else:
            row.update(mean=math.nan, sd=math.nan, q1=math.nan, median=math.nan, q3=math.nan)
        out.append(row)
    return out


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def write_experiment_csv(config: ExperimentConfig, results: list[ReplicateResult], fh,
                         timings: bool = False) -> None:
    """Versioned CSV: one row per (replicate, estimator), then the summary block.

    Wall times are left out unless ``timings`` so that identical inputs give
    byte-identical files.
    """
    w = csv.writer(fh, lineterminator="\n")
    fh.write(f"# {SCHEMA_VERSION}\n")
    w.writerow(ROW_HEADER + (["wall_time"] if timings else []))
    for r in results:
        for e in config.estimators:
            if e in r.values:
                row = [r.replicate, r.seed, e, _fmt(float(r.values[e])), "ok"]
            else:
                row = [r.replicate, r.seed, e, "", "failed: " + r.errors.get(e, "unknown")]
            if timings:
                row.append(f"{r.wall_time:.3f}")
            w.writerow(row)
    fh.write("# summary\n")
    w.writerow(SUMMARY_HEADER)
    for s in summarize(config, results):
        w.writerow([_fmt(s[k]) for k in SUMMARY_HEADER])


def standard_grid(base: ExperimentConfig) -> list[ExperimentConfig]:
    """Sample sizes 50..1000 crossed with steps 0.01..2 for a 1D experiment."""
    return sweep(base, n=[50, 100, 200, 500, 1000], h=[0.01, 0.1, 1.0, 2.0])
