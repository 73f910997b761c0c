"""Task offloading in an 802.11p vehicular fog: DCF delay model, SMDP planner, simulator."""

from .dcf import DcfParams, dcf_metrics, solve_fixed_point
from .kernels import BACKEND
from .model import SystemConfig, TransitionTable, build_table
from .sim import SimConfig, SimResult, simulate
from .solver import Policy, SolveResult, evaluate_policy, greedy_policy, solve

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DcfParams",
    "Policy",
    "SimConfig",
    "SimResult",
    "SolveResult",
    "SystemConfig",
    "TransitionTable",
    "build_table",
    "dcf_metrics",
    "evaluate_policy",
    "greedy_policy",
    "simulate",
    "solve",
    "solve_fixed_point",
]
