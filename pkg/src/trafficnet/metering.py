"""Throughput-optimal constant ramp metering.

The equilibrium flows on ordinary links are linear in the onramp discharges
``s``: ``f_O = G s`` with ``G = (I - A)^-1 B``. Maximising total discharge
subject to every ordinary link carrying at most its critical flow and each
onramp discharging at most ``min(d, sup demand)`` is a small linear program in
``s`` alone. Metering an onramp at its optimal discharge wherever that is below
its input flow realises the optimum as an equilibrium with all links in
freeflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import sim
from .diagrams import MeteredDemand
from .errors import VerificationFailed
from .network import Network, critical_flows, critical_point, routing_matrices, solve_unit_lower
from .simplex import LP_TOL, LPResult, maximize

UNMETERED = math.inf


def metered_network(network: Network, rates: Mapping[str, float]) -> Network:
    """Copy of ``network`` with onramp demands capped at ``rates`` (``inf`` leaves a ramp unmetered)."""
    links = []
    for link in network.links:
        m = rates.get(link.id, UNMETERED)
        if link.id in rates and not link.is_onramp:
            raise ValueError(f"cannot meter ordinary link {link.id!r}")
        if m < 0:
            raise ValueError(f"metering rate for {link.id!r} must be nonnegative, got {m}")
        if link.is_onramp and math.isfinite(m):
            base = link.demand
            if isinstance(base, MeteredDemand):
                base, m = base.base, min(m, base.rate)
            link = type(link)(link.id, link.kind, link.head, MeteredDemand(base, float(m)), link.tail, link.supply)
        links.append(link)
    return network.replace_links(links)


def discharge_matrix(network: Network) -> np.ndarray:
    """``G = (I - A)^-1 B``: ordinary-link flows per unit of onramp discharge."""
    rm = routing_matrices(network)
    G = np.zeros((len(rm.ordinary), len(rm.onramps)))
    for j in range(len(rm.onramps)):
        G[:, j] = solve_unit_lower(rm.A, rm.B[:, j])
    return G


@dataclass(frozen=True)
class MeteringPlan:
    rates: dict[str, float]  # UNMETERED where the ramp discharges its full input flow
    discharge: dict[str, float]  # optimal s per onramp
    link_flows: dict[str, float]  # optimal equilibrium flow per ordinary link
    predicted_flows: dict[str, float]
    throughput: float
    demand: dict[str, float]
    lp: LPResult
    slackness_gap: float

    @property
    def nonunique(self) -> bool:
        return self.lp.nonunique

    def report(self, network: Network) -> str:
        lines = [f"{'onramp':>8} {'demand':>12} {'discharge':>12} {'rate':>12}"]
        for l in network.onramp_ids:
            rate = "unmetered" if math.isinf(self.rates[l]) else f"{self.rates[l]:.6g}"
            lines.append(f"{l:>8} {self.demand[l]:>12.6g} {self.discharge[l]:>12.6g} {rate:>12}")
        lines.append(f"{'link':>8} {'flow':>12}")
        for l in network.link_order:
            lines.append(f"{l:>8} {self.predicted_flows[l]:>12.6g}")
        lines.append(f"throughput: {self.throughput:.6g}")
        if self.nonunique:
            lines.append("note: optimal discharge is not unique; throughput is")
        return "\n".join(lines)


def optimal_metering(network: Network, d=None, tol: float = LP_TOL) -> MeteringPlan:
    d_vec = network.demand_vector(d)
    onramps, ordinary = network.onramp_ids, network.ordinary_ids
    demand = {l: float(d_vec[network.index[l]]) for l in onramps}
    G = discharge_matrix(network)
    crit = critical_flows(network)
    h = np.array([crit[l] for l in ordinary])
    upper = np.array([min(demand[l], network.link[l].demand.sup) for l in onramps])
    # G >= 0 and s >= 0 make the lower bounds on link flows redundant
    lp = maximize(np.ones(len(onramps)), G, h, upper, tol=tol)
    s = lp.x
    f = G @ s
    rates = {}
    for l, x in zip(onramps, s):
        rates[l] = float(x) if x < demand[l] - tol * max(demand[l], 1.0) else UNMETERED
    discharge = {l: float(x) for l, x in zip(onramps, s)}
    link_flows = {l: float(x) for l, x in zip(ordinary, f)}
    return MeteringPlan(
        rates=rates,
        discharge=discharge,
        link_flows=link_flows,
        predicted_flows={**discharge, **link_flows},
        throughput=float(s.sum()),
        demand=demand,
        lp=lp,
        slackness_gap=lp.slackness_gap(G, h, upper),
    )


@dataclass(frozen=True)
class MeteredOutcome:
    """Settled behaviour of a metered network started from the zero state."""

    flows: dict[str, float]
    densities: dict[str, float]
    alpha: dict[str, float]
    throughput: float
    converged: bool
    deltas: dict[str, float] = field(default_factory=dict)
    congested: tuple[str, ...] = ()


def settle_metered(network: Network, d, rates: Mapping[str, float], **settle_options) -> MeteredOutcome:
    metered = metered_network(network, rates)
    d_vec = network.demand_vector(d)
    res = sim.settle(metered, d_vec, **settle_options)
    flows = dict(res.flows.outflow)
    return MeteredOutcome(
        flows=flows,
        densities=res.equilibrium_densities(),
        alpha=dict(res.flows.alpha),
        throughput=sum(flows[l] for l in network.onramp_ids),
        converged=res.converged,
    )


def verify_plan(network: Network, d, plan: MeteringPlan, rel_tol: float = 0.01, **settle_options) -> MeteredOutcome:
    """Simulate the metered network and check it settles to the predicted flows.

    Flows must match within ``rel_tol`` of the network capacity scale and every
    ordinary link must end at or below its critical density with all junctions
    unconstrained. Raises VerificationFailed with per-link deltas otherwise.
    """
    out = settle_metered(network, d, plan.rates, **settle_options)
    scale = sim.capacity_scale(network)
    deltas = {l: out.flows[l] - plan.predicted_flows[l] for l in network.link_order}
    congested = []
    for l in network.ordinary_ids:
        rho_c, _ = critical_point(network.link[l])
        if out.densities[l] > rho_c * (1 + rel_tol):
            congested.append(l)
    throttled = [v for v, a in out.alpha.items() if a < 1 - rel_tol]
    out = MeteredOutcome(out.flows, out.densities, out.alpha, out.throughput, out.converged,
                         deltas=deltas, congested=tuple(congested))
    problems = []
    if not out.converged:
        problems.append("metered network did not settle")
    off = {l: x for l, x in deltas.items() if abs(x) > rel_tol * scale}
    if off:
        problems.append("settled flows differ from prediction on " + ", ".join(sorted(off)))
    if congested:
        problems.append("links above critical density: " + ", ".join(congested))
    if throttled:
        problems.append("junctions not in freeflow: " + ", ".join(throttled))
    if problems:
        raise VerificationFailed("; ".join(problems), deltas=deltas)
    return out
