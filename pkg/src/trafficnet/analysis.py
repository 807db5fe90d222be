"""Qualitative diagnostics of the network dynamics.

* cooperativity: sign of the off-diagonal Jacobian entries over sampled states
* compartmental weights for merge-only networks with uniform offramp fractions
* the weighted 1-norm Lyapunov function ``V = sum_l W_l |F_l|`` along trajectories
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import dynamics, sim
from .errors import ConditionsNotMet
from .network import Network, is_merge_only

OFFDIAG_TOL = 1e-12


# -- sampling ------------------------------------------------------------------


def default_sampler(network: Network) -> Callable[[np.random.Generator], np.ndarray]:
    """Uniform states: ordinary links on ``[0, jam]``, onramps up to twice the
    density at which demand reaches 99% of its supremum."""
    kern = dynamics.kernel(network)
    hi = kern.jam.copy()
    for i, l in enumerate(network.link_order):
        link = network.link[l]
        if link.is_onramp:
            hi[i] = 2.0 * link.demand.inverse(0.99 * link.demand.sup)

    def sample(rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, hi)

    return sample


# -- cooperativity -------------------------------------------------------------


@dataclass(frozen=True)
class CooperativityViolation:
    state: dict[str, float]
    mode: str
    pair: tuple[str, str]  # (l, k): dF_l / d rho_k < 0
    value: float
    finite_difference: float


@dataclass
class CooperativityReport:
    cooperative_in_freeflow: bool
    violations: list[CooperativityViolation] = field(default_factory=list)
    sampled: int = 0
    skipped: int = 0
    freeflow_states: int = 0
    unconfirmed: int = 0
    min_freeflow_offdiag: float = math.inf

    @property
    def cooperative(self) -> bool:
        return not self.violations

    def pairs(self) -> set[tuple[str, str]]:
        return {v.pair for v in self.violations}

    def has(self, l: str, k: str) -> bool:
        return (l, k) in self.pairs()

    def summary(self) -> str:
        lines = [
            f"states sampled: {self.sampled} (skipped near mode boundaries: {self.skipped})",
            f"freeflow states: {self.freeflow_states}; cooperative in freeflow: {self.cooperative_in_freeflow}",
            f"violations: {len(self.violations)}",
        ]
        counts: dict[tuple[str, str], list[float]] = {}
        for v in self.violations:
            counts.setdefault(v.pair, []).append(v.value)
        for (l, k), vals in sorted(counts.items()):
            lines.append(f"  dF_{l}/drho_{k} < 0 at {len(vals)} states (most negative {min(vals):.6g})")
        return "\n".join(lines)


def cooperativity_scan(network: Network, sampler=None, n_samples: int = 1000, rng=None,
                       probes: Iterable = (), margin: float = 1e-9, fd_tol: float = 1e-5,
                       h: float = 1e-6) -> CooperativityReport:
    """Look for negative off-diagonal entries of the mode Jacobian.

    States within ``margin`` of a switching surface are skipped. Each negative
    entry is recomputed by central differences and kept only when the two agree
    within ``fd_tol``. ``probes`` are extra states checked before sampling.
    """
    kern = dynamics.kernel(network)
    rng = np.random.default_rng(rng)
    sampler = sampler or default_sampler(network)
    ids = network.link_order
    n = kern.n_links
    off = ~np.eye(n, dtype=bool)
    report = CooperativityReport(cooperative_in_freeflow=True)

    states = [network.vector(p) for p in probes]
    states += [None] * n_samples
    for state in states:
        rho = np.asarray(sampler(rng) if state is None else state, dtype=float)
        report.sampled += 1
        if kern.boundary_margin(rho) <= margin:
            report.skipped += 1
            continue
        mode = dynamics.active_mode(network, rho)
        J = kern.jacobian(rho, mode.as_indices(network))
        scale = max(1.0, float(np.abs(J).max()))
        if mode.freeflow:
            report.freeflow_states += 1
            low = float(J[off].min()) if n > 1 else math.inf
            report.min_freeflow_offdiag = min(report.min_freeflow_offdiag, low)
            if low < -OFFDIAG_TOL * scale:
                report.cooperative_in_freeflow = False
        neg = np.argwhere(off & (J < -OFFDIAG_TOL * scale))
        if not len(neg):
            continue
        Jfd = dynamics.finite_difference_jacobian(network, rho, h=h)
        for l, k in neg:
            if abs(Jfd[l, k] - J[l, k]) <= fd_tol and Jfd[l, k] < 0:
                report.violations.append(CooperativityViolation(
                    network.as_dict(rho), mode.label(), (ids[l], ids[k]), float(J[l, k]), float(Jfd[l, k])))
            else:
                report.unconfirmed += 1
    return report


# -- compartmental structure ---------------------------------------------------


@dataclass(frozen=True)
class CompartmentalWeights:
    weights: dict[str, float]
    gamma: dict[str, float]

    def vector(self, network: Network) -> np.ndarray:
        return network.vector(self.weights)

    def matrix(self, network: Network) -> np.ndarray:
        return np.diag(self.vector(network))


def compartmental_weights(network: Network) -> CompartmentalWeights:
    """Products of ``1 - Gamma`` along each link's unique path to a sink.

    A link entering junction ``v`` contributes ``1 - Gamma_v`` (or 1 when
    ``Gamma_v = 1``, which happens at sinks). Requires every junction to have at
    most one outgoing link and all links entering a junction to route the same
    fraction off the network; raises ConditionsNotMet otherwise.
    """
    check = is_merge_only(network)
    if not check.single_outlet:
        raise ConditionsNotMet("junctions with more than one outgoing link: " + "; ".join(check.reasons))
    if not check.uniform_offramp:
        raise ConditionsNotMet("offramp fractions differ between incoming links: " + "; ".join(check.reasons))
    W: dict[str, float] = {}
    for l in reversed(network.link_order):  # downstream links first
        v = network.link[l].head
        g = check.gamma[v]
        w = 1.0 if g >= 1.0 else 1.0 - g
        nxt = network.lout[v]
        W[l] = w * (W[nxt[0]] if nxt else 1.0)
    return CompartmentalWeights({l: W[l] for l in network.link_order}, dict(check.gamma))


@dataclass(frozen=True)
class CompartmentalCheck:
    ok: bool
    offdiagonal: tuple[tuple[int, int, float], ...]
    columns: tuple[tuple[int, float], ...]

    def __bool__(self):
        return self.ok


def is_compartmental(M, tol: float = 1e-12) -> CompartmentalCheck:
    """Off-diagonal entries nonnegative and column sums nonpositive.

    Both tests allow ``tol`` times ``max(1, max |M_ij|)`` of rounding.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    slack = tol * max(1.0, float(np.abs(M).max()) if M.size else 1.0)
    n = len(M)
    bad_off = tuple((int(i), int(j), float(M[i, j])) for i, j in zip(*np.nonzero(M < -slack)) if i != j)
    sums = M.sum(axis=0)
    bad_col = tuple((int(j), float(sums[j])) for j in range(n) if sums[j] > slack)
    return CompartmentalCheck(not bad_off and not bad_col, bad_off, bad_col)


# -- Lyapunov descent ----------------------------------------------------------


@dataclass(frozen=True)
class LyapunovTrace:
    times: np.ndarray
    values: np.ndarray
    max_increase: float
    slack: float

    @property
    def nonincreasing(self) -> bool:
        return self.max_increase <= self.slack

    def to_csv(self) -> str:
        rows = ["t,V"] + [f"{t!r},{v!r}" for t, v in zip(self.times.tolist(), self.values.tolist())]
        return "\n".join(rows) + "\n"


def lyapunov_trace(network: Network, trajectory: sim.Trajectory, weights: CompartmentalWeights | None = None,
                   rel_slack: float = 1e-6) -> LyapunovTrace:
    """``V(t) = sum_l W_l |F_l(rho(t))|`` along a trajectory, with the largest
    step-to-step increase and the allowed slack ``rel_slack * V(0)``."""
    weights = weights or compartmental_weights(network)
    W = weights.vector(network)
    V = np.abs(trajectory.rates) @ W
    inc = float(np.max(np.diff(V), initial=-math.inf))
    return LyapunovTrace(trajectory.times, V, inc, rel_slack * float(V[0]) if len(V) else 0.0)


def settled_flow_spread(network: Network, d, initial_states: Iterable, **settle_options) -> float:
    """Largest disagreement between flows settled from different initial states."""
    outs = []
    for x0 in initial_states:
        res = sim.settle(network, d, initial=x0, **settle_options)
        outs.append(network.vector(res.flows.outflow))
    if not outs:
        return 0.0
    arr = np.array(outs)
    return float(np.max(arr.max(axis=0) - arr.min(axis=0)))
