"""Semidefinite programming for shared band-gap maximization."""

from .assemble import CrystalState, build_problem, dedupe_time_reversal, warm_start_scale
from .backends import BACKENDS, solve
from .driver import (Evaluation, IterationRecord, OptimizationConfig, OptimizationResult,
                     rms_change, run_optimization)
from .problem import (CellTerm, LmiBlock, Projector, SdpIterate, SdpProblem, TopoRow, lower_block,
                      minmax_problem, orbit_values, projector, realify, recover, tau, topo_rows,
                      upper_block)

__all__ = [
    "BACKENDS", "CellTerm", "CrystalState", "Evaluation", "IterationRecord", "LmiBlock",
    "OptimizationConfig", "OptimizationResult", "Projector", "SdpIterate", "SdpProblem", "TopoRow",
    "build_problem", "dedupe_time_reversal", "lower_block", "minmax_problem", "orbit_values",
    "projector", "realify", "recover", "rms_change", "run_optimization", "solve", "tau", "topo_rows",
    "upper_block", "warm_start_scale",
]
