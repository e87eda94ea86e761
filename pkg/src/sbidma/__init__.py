"""Density evolution and peeling simulation for sparse-block IDMA."""
__version__ = "0.1.0"

from ._accel import BACKEND
from .params import ParamError, SystemParams, derive, sigma_from_snr
from .dt_oracle import (
    InterferenceProfile,
    PhiEstimate,
    PhiOracle,
    info_density_symbol,
    phi_dt,
    phi_exact_small,
    phi_memoized,
    sample_info_density,
)
from .de_engine import (
    DensityEvolution,
    de_step,
    exit_chart,
    find_fixed_points,
    pupe_curve,
    run_de,
    threshold_search,
)
from .graph_sim import FrameGraph, peel, sample_graph, simulate_pupe

__all__ = [
    "BACKEND", "ParamError", "SystemParams", "derive", "sigma_from_snr",
    "InterferenceProfile", "PhiEstimate", "PhiOracle", "info_density_symbol", "phi_dt", "phi_exact_small",
    "phi_memoized", "sample_info_density",
    "DensityEvolution", "de_step", "exit_chart", "find_fixed_points", "pupe_curve", "run_de", "threshold_search",
    "FrameGraph", "peel", "sample_graph", "simulate_pupe",
]
