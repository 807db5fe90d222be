"""Equilibria of the network under constant input flows.

Feasible inputs have a unique equilibrium flow given by forward substitution
through the routing matrices, and a unique equilibrium density with every
ordinary link in freeflow. Infeasible inputs are handled by simulating the
compactified dynamics until the flows settle.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, sim
from .errors import CertificateFailed, InadmissibleDemand, NotConverged
from .network import Network, critical_flows, critical_point, is_polytree, routing_matrices, solve_unit_lower

FEAS_TOL = 1e-9


class Classification(enum.Enum):
    STRICTLY_FEASIBLE = "StrictlyFeasible"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"

    @property
    def feasible(self) -> bool:
        return self is not Classification.INFEASIBLE

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class JacobianCertificate:
    """Lower triangularity and diagonal sign of the freeflow Jacobian."""

    link_order: tuple[str, ...]
    jacobian: np.ndarray
    lower_triangular: bool
    diagonal_max: float

    @property
    def passed(self) -> bool:
        return self.lower_triangular and self.diagonal_max < 0

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.jacobian)


@dataclass(frozen=True)
class EquilibriumResult:
    """Classification of a constant input flow and, when known, its equilibrium.

    ``candidate`` always holds the forward-substitution flows (input flows on
    onramps); ``flows`` and ``densities`` are filled once an equilibrium has
    been computed. Infinite onramp densities are ``math.inf``.
    """

    classification: Classification
    demand: dict[str, float]
    candidate: dict[str, float]
    critical: dict[str, float]
    flows: dict[str, float] = field(default_factory=dict)
    densities: dict[str, float] = field(default_factory=dict)
    certificate: JacobianCertificate | None = None
    unique: bool | None = None
    converged: bool | None = None

    @property
    def overloaded(self) -> tuple[str, ...]:
        """Ordinary links whose candidate flow exceeds the critical flow."""
        return tuple(l for l, f in self.critical.items()
                     if self.candidate[l] - f > FEAS_TOL * max(f, 1.0))

    @property
    def saturated(self) -> tuple[str, ...]:
        return tuple(l for l, x in self.densities.items() if math.isinf(x))

    def throughput(self) -> float:
        return sum(self.flows[l] for l in self.demand) if self.flows else math.nan

    def report(self, network: Network) -> str:
        lines = [f"classification: {self.classification}"]
        if self.unique is not None or self.classification is Classification.INFEASIBLE:
            lines.append(f"unique equilibrium flow: {'yes' if self.unique else 'unknown'}")
        if self.classification is Classification.FEASIBLE:
            lines.append("unique density: unknown")
        lines.append(f"{'link':>8} {'kind':>8} {'demand':>12} {'flow':>12} {'density':>12} {'critical':>12}")
        for l in network.link_order:
            link = network.link[l]
            kind = "onramp" if link.is_onramp else "ordinary"
            dem = _fmt(self.demand[l]) if link.is_onramp else "-"
            flow = _fmt(self.flows[l]) if self.flows else _fmt(self.candidate[l]) + "*"
            dens = _fmt(self.densities[l]) if self.densities else "-"
            crit = "-" if link.is_onramp else _fmt(self.critical[l])
            lines.append(f"{l:>8} {kind:>8} {dem:>12} {flow:>12} {dens:>12} {crit:>12}")
        if not self.flows:
            lines.append("* forward-substitution flow, not an equilibrium")
        if self.flows:
            lines.append(f"throughput: {_fmt(self.throughput())}")
        if self.certificate is not None:
            lines.append(f"stability certificate: {'passed' if self.certificate.passed else 'failed'}")
        return "\n".join(lines)


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6g}"


# -- feasibility -------------------------------------------------------------


def check_admissible(network: Network, d) -> dict[str, float]:
    """Input flows must be nonnegative and within each onramp's demand range.

    The bound is inclusive when the onramp demand attains its supremum and
    strict otherwise. Raises InadmissibleDemand naming the offending onramps.
    """
    d_vec = network.demand_vector(d)
    demand = {l: float(d_vec[network.index[l]]) for l in network.onramp_ids}
    bad = []
    for l, x in demand.items():
        fn = network.link[l].demand
        if not (x >= 0 and math.isfinite(x)):
            bad.append(f"{l}: input flow {x} must be nonnegative and finite")
        elif fn.attains_sup and x > fn.sup * (1 + FEAS_TOL):
            bad.append(f"{l}: input flow {x} exceeds demand supremum {fn.sup}")
        elif not fn.attains_sup and x >= fn.sup:
            bad.append(f"{l}: input flow {x} reaches the unattained demand supremum {fn.sup}")
    if bad:
        raise InadmissibleDemand("; ".join(bad))
    return demand


def _candidate(network: Network, demand: dict[str, float]) -> dict[str, float]:
    rm = routing_matrices(network)
    d = np.array([demand[l] for l in rm.onramps], dtype=float)
    fe = solve_unit_lower(rm.A, rm.B @ d) if rm.ordinary else np.zeros(0)
    out = dict(demand)
    out.update({l: float(x) for l, x in zip(rm.ordinary, fe)})
    return out


def _classify_flows(candidate, critical, tol) -> Classification:
    strict = True
    for l, cap in critical.items():
        gap = candidate[l] - cap
        if gap > tol * cap:
            return Classification.INFEASIBLE
        if gap >= -tol * cap:
            strict = False
    return Classification.STRICTLY_FEASIBLE if strict else Classification.FEASIBLE


def classify(network: Network, d=None, tol: float = FEAS_TOL) -> EquilibriumResult:
    """Feasibility of the constant input flow ``d``.

    Feasible iff the forward-substitution flows stay at or below every critical
    flow (relative slack ``tol``); strictly feasible iff strictly below. The
    equilibrium flow is included when feasible.
    """
    demand = check_admissible(network, d)
    critical = critical_flows(network)
    candidate = _candidate(network, demand)
    cls = _classify_flows(candidate, critical, tol)
    flows = dict(candidate) if cls.feasible else {}
    return EquilibriumResult(cls, demand, candidate, critical, flows=flows,
                             unique=True if cls.feasible else None)


# -- feasible case -----------------------------------------------------------


def freeflow_equilibrium(network: Network, d=None, certify: bool = False) -> EquilibriumResult:
    """Equilibrium of a feasible input flow with every ordinary link in freeflow.

    Ordinary densities invert the demand on ``[0, rho_crit]``; onramp densities
    invert the onramp demand at the input flow.
    """
    result = classify(network, d)
    if not result.classification.feasible:
        raise ValueError(f"input flow is infeasible on links {result.overloaded}")
    densities = {}
    for l in network.link_order:
        link = network.link[l]
        f = result.flows[l]
        if link.is_onramp:
            densities[l] = link.demand.inverse(min(f, link.demand.sup))
        else:
            rho_c, phi_c = critical_point(link)
            densities[l] = min(link.demand.inverse(min(f, phi_c)), rho_c)
    cert = None
    strict = result.classification is Classification.STRICTLY_FEASIBLE
    out = EquilibriumResult(result.classification, result.demand, result.candidate, result.critical,
                            flows=result.flows, densities=densities,
                            unique=True if strict else None)
    if certify and strict:
        cert = stability_certificate(network, out)
        out = EquilibriumResult(out.classification, out.demand, out.candidate, out.critical,
                                flows=out.flows, densities=out.densities, certificate=cert,
                                unique=out.unique)
    return out


def stability_certificate(network: Network, result: EquilibriumResult, tol: float = 1e-12) -> JacobianCertificate:
    """Check the freeflow Jacobian at a strictly feasible equilibrium.

    Under ``link_order`` it must be lower triangular with a negative diagonal,
    which makes it Hurwitz. Raises CertificateFailed listing the offending
    entries otherwise.
    """
    if result.classification is not Classification.STRICTLY_FEASIBLE:
        raise ValueError("stability certificate needs a strictly feasible input flow")
    if not result.densities:
        result = freeflow_equilibrium(network, result.demand)
    J = dynamics.mode_jacobian(network, result.densities, dynamics.freeflow_mode(network))
    ids = network.link_order
    scale = max(float(np.abs(J).max()), 1.0)
    upper = [(ids[i], ids[k], float(J[i, k])) for i, k in zip(*np.triu_indices(len(ids), 1))
             if abs(J[i, k]) > tol * scale]
    diag = np.diag(J)
    nonneg = [(ids[i], ids[i], float(diag[i])) for i in range(len(ids)) if not diag[i] < 0]
    cert = JacobianCertificate(ids, J, not upper, float(diag.max()) if len(diag) else -math.inf)
    if upper or nonneg:
        raise CertificateFailed("freeflow jacobian is not lower triangular with negative diagonal",
                                entries=tuple(upper + nonneg))
    return cert


# -- infeasible case ---------------------------------------------------------


def equilibrium_infeasible(network: Network, d=None, **settle_options) -> EquilibriumResult:
    """Equilibrium flow reached by the compactified dynamics from the zero state.

    Onramps discharging less than their input flow get infinite density. The
    result is flagged unique when the network is a polytree, otherwise
    uniqueness is unknown. Raises NotConverged (carrying the partial result)
    when the flows have not settled by ``max_horizon``.
    """
    d_vec = network.demand_vector(d)
    demand = {l: float(d_vec[network.index[l]]) for l in network.onramp_ids}
    critical = critical_flows(network)
    candidate = _candidate(network, demand)
    try:
        check_admissible(network, demand)
        cls = _classify_flows(candidate, critical, FEAS_TOL)
    except InadmissibleDemand:
        cls = Classification.INFEASIBLE
    settled = sim.settle(network, demand, **settle_options)
    flows = dict(settled.flows.outflow)
    densities = settled.equilibrium_densities()
    result = EquilibriumResult(cls, demand, candidate, critical, flows=flows, densities=densities,
                               unique=True if is_polytree(network) else None,
                               converged=settled.converged)
    if not settled.converged:
        raise NotConverged(f"flows did not settle within {settled.time:.6g} hr "
                           f"(residual {settled.residual:.3g})", result=result)
    return result


def find_equilibrium(network: Network, d=None, certify: bool = False, **settle_options) -> EquilibriumResult:
    """Closed-form freeflow equilibrium when feasible, simulated equilibrium otherwise."""
    try:
        result = classify(network, d)
    except InadmissibleDemand:
        return equilibrium_infeasible(network, d, **settle_options)
    if result.classification.feasible:
        return freeflow_equilibrium(network, d, certify=certify)
    return equilibrium_infeasible(network, d, **settle_options)
