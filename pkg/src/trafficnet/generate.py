"""Random networks and input flows satisfying all modelling assumptions.

Used by the property tests and the command-line ``analyze`` sampling. Junctions
are created in topological order so acyclicity holds by construction; every
junction gets at least one incoming link and every non-sink junction routes a
positive fraction from each incoming link to each outgoing link.
"""
from __future__ import annotations

import numpy as np

from .diagrams import ExponentialDemand, ExponentialSupply, LinearDemand, LinearSupply
from .metering import discharge_matrix
from .network import Network, critical_flows, onramp, ordinary


def _ordinary_diagrams(rng: np.random.Generator, exponential: bool):
    jam = rng.uniform(150.0, 400.0)
    if exponential:
        a = rng.uniform(1500.0, 3000.0)
        demand = ExponentialDemand(a, rng.uniform(4.0, 12.0) / jam)
        supply = ExponentialSupply(rng.uniform(2000.0, 5000.0), rng.uniform(1.0, 6.0) / jam, jam)
        return demand, supply
    cap = rng.uniform(1500.0, 3000.0)
    v = rng.uniform(40.0, 80.0)
    w = rng.uniform(8.0, 30.0)
    supply_cap = np.inf if rng.random() < 0.5 else cap * rng.uniform(1.05, 1.5)
    return LinearDemand(v, cap), LinearSupply(w, jam, supply_cap)


def _onramp_demand(rng: np.random.Generator, exponential: bool):
    cap = rng.uniform(800.0, 3000.0)
    if exponential:
        return ExponentialDemand(cap, rng.uniform(0.01, 0.05))
    return LinearDemand(rng.uniform(30.0, 90.0), cap)


def random_network(rng=None, n_junctions: int | tuple[int, int] = (3, 6), exponential: float = 0.3,
                   polytree: bool = False, merge_only: bool = False, uniform_gamma: bool = True,
                   max_gamma: float = 0.3, extra_onramps: float = 0.4, max_parents: int = 2,
                   name: str = "random") -> Network:
    """Random acyclic network.

    ``polytree`` gives every junction after the first a single upstream link.
    ``merge_only`` builds an in-tree: each junction has at most one outgoing
    link, and with ``uniform_gamma`` all links entering a junction route the
    same fraction off the network.
    """
    rng = np.random.default_rng(rng)
    if isinstance(n_junctions, tuple):
        n_junctions = int(rng.integers(n_junctions[0], n_junctions[1] + 1))
    J = max(2, n_junctions)
    junctions = [f"v{i}" for i in range(J)]
    edges: list[tuple[int, int]] = []
    if merge_only:
        for j in range(J - 1):
            edges.append((j, int(rng.integers(j + 1, J))))
    else:
        for j in range(1, J):
            k = 1 if polytree else int(rng.integers(1, min(max_parents, j) + 1))
            for i in rng.choice(j, size=k, replace=False):
                edges.append((int(i), j))

    links = []
    for n, (i, j) in enumerate(edges):
        d, s = _ordinary_diagrams(rng, rng.random() < exponential)
        links.append(ordinary(f"o{n}", junctions[i], junctions[j], d, s))
    has_in = {j for _, j in edges}
    has_out = {i for i, _ in edges}
    n_ramp = 0
    for j in range(J):
        if j not in has_out:
            continue
        if j not in has_in or rng.random() < extra_onramps:
            links.append(onramp(f"r{n_ramp}", junctions[j], _onramp_demand(rng, rng.random() < exponential)))
            n_ramp += 1

    lin: dict[str, list[str]] = {v: [] for v in junctions}
    lout: dict[str, list[str]] = {v: [] for v in junctions}
    for l in links:
        lin[l.head].append(l.id)
        if l.tail is not None:
            lout[l.tail].append(l.id)
    split = {}
    for v in junctions:
        if not lout[v]:
            continue
        shared = rng.uniform(0.0, max_gamma)
        for l in lin[v]:
            gamma = shared if uniform_gamma else rng.uniform(0.0, max_gamma)
            share = rng.dirichlet(np.full(len(lout[v]), 2.0)) * 0.8 + 0.2 / len(lout[v])
            for k, x in zip(lout[v], share):
                split[(l, k)] = float((1.0 - gamma) * x)
    return Network(tuple(junctions), tuple(links), split, name=name)


def feasibility_limit(network: Network, direction) -> float:
    """Largest ``theta`` with ``theta * direction`` feasible (may be ``inf``)."""
    G = discharge_matrix(network)
    crit = critical_flows(network)
    h = np.array([crit[l] for l in network.ordinary_ids])
    load = G @ np.asarray(direction, dtype=float)
    with np.errstate(divide="ignore"):
        ratios = np.where(load > 0, h / load, np.inf)
    return float(ratios.min(initial=np.inf))


def random_demand(network: Network, rng=None, level: tuple[float, float] = (0.3, 0.95)) -> dict[str, float]:
    """Strictly feasible input flows at a random fraction ``level`` of the
    feasibility boundary along a random direction.

    Onramps stay at or below 95% of their demand supremum.
    """
    rng = np.random.default_rng(rng)
    sup = np.array([network.link[l].demand.sup for l in network.onramp_ids])
    direction = rng.uniform(0.2, 1.0, size=len(sup)) * sup
    theta = min(feasibility_limit(network, direction), float(np.min(0.95 * sup / direction, initial=np.inf)))
    d = direction * theta * rng.uniform(*level)
    return {l: float(x) for l, x in zip(network.onramp_ids, d)}


def random_infeasible_demand(network: Network, rng=None, level: tuple[float, float] = (1.2, 2.0)) -> dict[str, float]:
    """Input flows beyond the feasibility boundary by a factor ``level``.

    When no ordinary link limits the direction, onramps are driven past their
    demand supremum instead.
    """
    rng = np.random.default_rng(rng)
    sup = np.array([network.link[l].demand.sup for l in network.onramp_ids])
    direction = rng.uniform(0.2, 1.0, size=len(sup)) * sup
    theta = feasibility_limit(network, direction)
    if not np.isfinite(theta):
        theta = float(np.max(sup / direction))
    d = direction * theta * rng.uniform(*level)
    return {l: float(x) for l, x in zip(network.onramp_ids, d)}
