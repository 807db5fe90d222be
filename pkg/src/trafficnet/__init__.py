"""Macroscopic traffic network flow with PP/FIFO junctions.

Equilibrium and feasibility analysis for constant input flows, throughput
optimal ramp metering and qualitative diagnostics of the network dynamics.
"""
from .network import (
    Link,
    LinkKind,
    Network,
    critical_point,
    is_merge_only,
    is_polytree,
    load_network,
    routing_matrices,
    validate,
)
from .dynamics import active_mode, flows, junction_alpha, mode_jacobian, vector_field
from .equilibrium import Classification, classify, find_equilibrium, freeflow_equilibrium
from .metering import optimal_metering, verify_plan
from .sim import settle, simulate, simulate_compactified
from .examples import load_example

__version__ = "0.1.0"

__all__ = [
    "Link", "LinkKind", "Network", "critical_point", "is_merge_only", "is_polytree",
    "load_network", "routing_matrices", "validate", "active_mode", "flows",
    "junction_alpha", "mode_jacobian", "vector_field", "Classification", "classify",
    "find_equilibrium", "freeflow_equilibrium", "optimal_metering", "verify_plan", "settle",
    "simulate", "simulate_compactified", "load_example",
]
