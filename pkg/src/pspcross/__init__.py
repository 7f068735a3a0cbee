"""Crossing counts of piecewise smooth stochastic processes.

Simulation of piecewise deterministic Markov processes, grid and exact
crossing counters, kernel density estimates, Monte Carlo and Kac-Rice
plug-in estimators, and a GPS trajectory pipeline.
"""

from .crossing_count import CrossingCount, count_exact, count_grid, kac_numeric, local_time
from .density import Bandwidth, DensityEstimate, kde_eval, select_bandwidth, time_slice_density
from .estimators import (
    CrossingEstimate,
    SpeedProjection,
    closed_form,
    exact_oracle,
    kr_nonstationary,
    kr_stationary,
    model_speed_projection,
    monte_carlo,
)
from .psp_sim import (
    EventTrajectory,
    GridTrajectory,
    ProcessModel,
    builtin_models,
    pdsa,
    rng_stream,
    sample_grid,
    simulate_event,
    simulate_many,
    telegraph1d,
    telegraph2d,
)
from .surfaces import Level, PolylineSurface, Segment, square, surface_integral

__version__ = "0.1.0"

__all__ = [
    "CrossingCount", "count_exact", "count_grid", "kac_numeric", "local_time",
    "Bandwidth", "DensityEstimate", "kde_eval", "select_bandwidth", "time_slice_density",
    "CrossingEstimate", "SpeedProjection", "closed_form", "exact_oracle", "kr_nonstationary",
    "kr_stationary", "model_speed_projection", "monte_carlo",
    "EventTrajectory", "GridTrajectory", "ProcessModel", "builtin_models", "pdsa", "rng_stream",
    "sample_grid", "simulate_event", "simulate_many", "telegraph1d", "telegraph2d",
    "Level", "PolylineSurface", "Segment", "square", "surface_integral",
]
