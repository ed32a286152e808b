"""cookie-walk-lab - simulation and coupling experiments for cookie random walks."""

__version__ = "0.3.0"
__author__ = "AgentGino"
__email__ = "himakar@qwik.tools"

from .criteria import ballisticity_condition, classify, search_parameters, total_drift
from .distributions import CookieEnvironment, JumpDistribution
from .renewal_speed import detect_cut_times, estimate_speed_naive, estimate_speed_renewal
from .walk_core import Trajectory, WalkState, simulate, step

__all__ = [
    "CookieEnvironment",
    "JumpDistribution",
    "Trajectory",
    "WalkState",
    "ballisticity_condition",
    "classify",
    "detect_cut_times",
    "estimate_speed_naive",
    "estimate_speed_renewal",
    "search_parameters",
    "simulate",
    "step",
    "total_drift",
]
