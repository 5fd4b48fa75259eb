"""Loadability boundary analysis for power networks in rectangular coordinates."""

from .boundary import (BoundaryVerdict, ConstraintSet, MarginResult, binding_q_limits, check_alarm,
                       check_on_boundary, margin)
from .case_io import (ModelPolicy, Network, NetworkCase, bundled_path, load_network, model_network,
                      parse_matpower, parse_network_json)
from .errors import LoadkitError
from .geometry import CircleDescriptor, intersect, power_circles
from .oracle import GridSpec, pareto_front, sample_region, singular_locus
from .pareto import ParetoPoint, locate_boundary_point, ray_margin_trace, sweep_front
from .powerflow import VoltageState, injections, jacobian, solve_power_flow
from .thevenin import load_sweep, thevenin_at, thevenin_margin

__version__ = "0.1.0"

__all__ = [
    "BoundaryVerdict", "CircleDescriptor", "ConstraintSet", "GridSpec", "LoadkitError", "MarginResult",
    "ModelPolicy", "Network", "NetworkCase", "ParetoPoint", "VoltageState", "binding_q_limits",
    "bundled_path", "check_alarm", "check_on_boundary", "injections", "intersect", "jacobian",
    "load_network", "load_sweep", "locate_boundary_point", "margin", "model_network", "parse_matpower",
    "parse_network_json", "pareto_front", "power_circles", "ray_margin_trace", "sample_region",
    "singular_locus", "solve_power_flow", "sweep_front", "thevenin_at", "thevenin_margin",
]
