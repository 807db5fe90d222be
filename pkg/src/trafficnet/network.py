"""Traffic network graph: junctions, ordinary links, onramps and split ratios."""
from __future__ import annotations

import enum
import graphlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np

from . import diagrams
from .diagrams import Demand, Supply
from .errors import CycleDetected

SPLIT_TOL = 1e-12


class LinkKind(enum.Enum):
    ORDINARY = "ordinary"
    ONRAMP = "onramp"


@dataclass(frozen=True)
class Link:
    id: str
    kind: LinkKind
    head: str
    demand: Demand
    tail: str | None = None
    supply: Supply | None = None

    @property
    def is_onramp(self) -> bool:
        return self.kind is LinkKind.ONRAMP

    @property
    def jam_density(self) -> float:
        return math.inf if self.supply is None else self.supply.jam_density

    def to_dict(self) -> dict:
        out = {"id": self.id, "kind": self.kind.value, "tail": self.tail, "head": self.head,
               "demand": self.demand.to_dict()}
        if self.supply is not None:
            out["supply"] = self.supply.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Link":
        kind = LinkKind(data.get("kind", "ordinary"))
        supply = data.get("supply")
        return cls(
            id=str(data["id"]),
            kind=kind,
            head=str(data["head"]),
            tail=None if data.get("tail") is None else str(data["tail"]),
            demand=diagrams.demand_from_dict(data["demand"]),
            supply=None if supply is None else diagrams.supply_from_dict(supply),
        )


def ordinary(id, tail, head, demand, supply) -> Link:
    return Link(str(id), LinkKind.ORDINARY, str(head), demand, str(tail), supply)


def onramp(id, head, demand) -> Link:
    return Link(str(id), LinkKind.ONRAMP, str(head), demand)


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable traffic network.

    ``split`` maps ``(from_link, to_link)`` to the split ratio. ``demands`` holds
    optional default onramp input flows (as read from a network file).
    """

    junctions: tuple[str, ...]
    links: tuple[Link, ...]
    split: Mapping[tuple[str, str], float]
    demands: Mapping[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "junctions", tuple(str(v) for v in self.junctions))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "split", {(str(a), str(b)): float(x) for (a, b), x in self.split.items()})
        object.__setattr__(self, "demands", {str(k): float(x) for k, x in self.demands.items()})

    # -- lookup ------------------------------------------------------------

    @cached_property
    def link(self) -> dict[str, Link]:
        return {l.id: l for l in self.links}

    @cached_property
    def lin(self) -> dict[str, tuple[str, ...]]:
        out = {v: [] for v in self.junctions}
        for l in self.links:
            out.setdefault(l.head, []).append(l.id)
        return {v: tuple(ids) for v, ids in out.items()}

    @cached_property
    def lout(self) -> dict[str, tuple[str, ...]]:
        out = {v: [] for v in self.junctions}
        for l in self.links:
            if l.tail is not None:
                out.setdefault(l.tail, []).append(l.id)
        return {v: tuple(ids) for v, ids in out.items()}

    @cached_property
    def sinks(self) -> tuple[str, ...]:
        return tuple(v for v in self.junctions if not self.lout[v])

    def beta(self, l: str, k: str) -> float:
        return self.split.get((l, k), 0.0)

    def offramp_fraction(self, l: str) -> float:
        """Fraction of link ``l``'s outflow routed off the network at its head."""
        return 1.0 - sum(self.beta(l, k) for k in self.lout[self.link[l].head])

    # -- ordering ----------------------------------------------------------

    @cached_property
    def junction_order(self) -> tuple[str, ...]:
        """Junctions in topological order; raises CycleDetected."""
        ts = graphlib.TopologicalSorter()
        for v in self.junctions:
            ts.add(v)
        for l in self.links:
            if l.tail is not None:
                ts.add(l.head, l.tail)
        try:
            return tuple(ts.static_order())
        except graphlib.CycleError as exc:
            raise CycleDetected(f"network contains a directed cycle through {exc.args[1]}") from None

    @cached_property
    def link_order(self) -> tuple[str, ...]:
        """Link enumeration grouping incoming links junction by junction in topological order.

        Every link entering a junction precedes every link leaving it.
        """
        return tuple(l for v in self.junction_order for l in self.lin.get(v, ()))

    @cached_property
    def index(self) -> dict[str, int]:
        return {l: i for i, l in enumerate(self.link_order)}

    @cached_property
    def onramp_ids(self) -> tuple[str, ...]:
        return tuple(l for l in self.link_order if self.link[l].is_onramp)

    @cached_property
    def ordinary_ids(self) -> tuple[str, ...]:
        return tuple(l for l in self.link_order if not self.link[l].is_onramp)

    # -- vectors -----------------------------------------------------------

    def vector(self, values, fill: float = 0.0) -> np.ndarray:
        """Array in ``link_order`` from a mapping (missing links get ``fill``) or a sequence."""
        if isinstance(values, Mapping):
            out = np.full(len(self.link_order), fill, dtype=float)
            for l, x in values.items():
                out[self.index[str(l)]] = x
            return out
        out = np.asarray(values, dtype=float)
        if out.shape != (len(self.link_order),):
            raise ValueError(f"expected {len(self.link_order)} entries, got shape {out.shape}")
        return out

    def as_dict(self, values) -> dict[str, float]:
        return {l: float(x) for l, x in zip(self.link_order, values)}

    def demand_vector(self, d) -> np.ndarray:
        """Input flows as an array over all links (zero on ordinary links)."""
        if d is None:
            d = self.demands
        if isinstance(d, Mapping):
            for l in d:
                if not self.link[str(l)].is_onramp:
                    raise ValueError(f"input flow given for non-onramp link {l!r}")
        return self.vector(d)

    # -- serialisation -----------------------------------------------------

    def replace_links(self, links) -> "Network":
        return Network(self.junctions, tuple(links), dict(self.split), dict(self.demands), self.name)

    def with_demands(self, demands: Mapping[str, float]) -> "Network":
        return Network(self.junctions, self.links, dict(self.split), dict(demands), self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "junctions": list(self.junctions),
            "links": [l.to_dict() for l in self.links],
            "split": [{"from": a, "to": b, "beta": x} for (a, b), x in self.split.items()],
            "demands": dict(self.demands),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        return cls(
            junctions=tuple(str(v) for v in data["junctions"]),
            links=tuple(Link.from_dict(l) for l in data["links"]),
            split={(str(s["from"]), str(s["to"])): float(s["beta"]) for s in data.get("split", [])},
            demands={str(k): float(x) for k, x in data.get("demands", {}).items()},
            name=str(data.get("name", "")),
        )


def load_network(path) -> Network:
    with open(path) as fh:
        net = Network.from_dict(json.load(fh))
    if not net.name:
        object.__setattr__(net, "name", Path(path).stem)
    return net


def save_network(network: Network, path) -> None:
    with open(path, "w") as fh:
        json.dump(network.to_dict(), fh, indent=2)
        fh.write("\n")


# -- validation ------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    elements: tuple[str, ...] = ()

    def __str__(self):
        return f"{self.kind}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "OK"
        return "\n".join(str(v) for v in self.violations)


def validate(network: Network) -> ValidationReport:
    """Check graph structure, split ratios and diagram assumptions.

    Violations are returned as data; nothing is raised.
    """
    out: list[Violation] = []

    def bad(kind, msg, *elements):
        out.append(Violation(kind, msg, tuple(elements)))

    junctions = set(network.junctions)
    if len(junctions) != len(network.junctions):
        bad("duplicate-id", "junction ids are not unique")
    ids = [l.id for l in network.links]
    for l in sorted({i for i in ids if ids.count(i) > 1}):
        bad("duplicate-id", f"link id {l!r} used more than once", l)

    for l in network.links:
        for end in (l.head, l.tail):
            if end is not None and end not in junctions:
                bad("unknown-junction", f"link {l.id!r} refers to unknown junction {end!r}", l.id)
        if l.is_onramp:
            if l.tail is not None:
                bad("onramp-tail", f"onramp {l.id!r} must not have a tail junction", l.id)
            if l.supply is not None:
                bad("onramp-supply", f"onramp {l.id!r} must not have a supply function", l.id)
            for p in l.demand.check():
                bad("diagram", f"link {l.id!r}: {p}", l.id)
        else:
            if l.tail is None:
                bad("ordinary-tail", f"ordinary link {l.id!r} needs a tail junction", l.id)
            if l.supply is None:
                bad("diagram", f"ordinary link {l.id!r} needs a supply function", l.id)
            else:
                for p in diagrams.crossing_problems(l.demand, l.supply):
                    bad("diagram", f"link {l.id!r}: {p}", l.id)

    try:
        network.junction_order
    except CycleDetected as exc:
        bad("acyclicity", f"acyclicity violated: {exc}")

    known = network.link
    for (a, b), beta in network.split.items():
        if a not in known or b not in known:
            bad("split-unknown", f"split ({a!r}, {b!r}) names an unknown link", a, b)
            continue
        if not 0.0 <= beta <= 1.0:
            bad("split-range", f"split ({a}, {b}) = {beta} outside [0, 1]", a, b)
        if beta > 0 and known[a].head != known[b].tail:
            bad("split-adjacency", f"split ({a}, {b}) > 0 but {b!r} does not leave the head of {a!r}", a, b)
        if beta > 0 and known[b].is_onramp:
            bad("split-adjacency", f"split ({a}, {b}) routes flow into onramp {b!r}", a, b)

    for v in network.junctions:
        lin, lout = network.lin.get(v, ()), network.lout.get(v, ())
        if not lin:
            bad("junction-no-incoming", f"junction {v!r} has no incoming link", v)
        for l in lin:
            if l not in known:
                continue
            total = sum(network.beta(l, k) for k in lout)
            if total > 1.0 + SPLIT_TOL:
                bad("split-sum", f"splits out of link {l!r} sum to {total} > 1", l)
            if known[l].is_onramp and not lout:
                bad("onramp-no-outgoing", f"onramp {l!r} enters junction {v!r} with no outgoing link", l, v)
            for k in lout:
                if not network.beta(l, k) > 0:
                    bad("split-positive", f"split ({l}, {k}) must be positive at non-sink junction {v!r}", l, k)
    return ValidationReport(out)


# -- routing ---------------------------------------------------------------


@dataclass(frozen=True)
class RoutingMatrices:
    """``A[l, k] = beta(k, l)`` over ordinary links, ``B[l, r] = beta(r, l)`` for onramps ``r``."""

    A: np.ndarray
    B: np.ndarray
    ordinary: tuple[str, ...]
    onramps: tuple[str, ...]
    link_order: tuple[str, ...]

    def entry(self, matrix: str, row: str, col: str) -> float:
        if matrix == "A":
            return float(self.A[self.ordinary.index(row), self.ordinary.index(col)])
        return float(self.B[self.ordinary.index(row), self.onramps.index(col)])


def routing_matrices(network: Network) -> RoutingMatrices:
    order = network.link_order  # raises CycleDetected
    O, R = network.ordinary_ids, network.onramp_ids
    A = np.array([[network.beta(k, l) for k in O] for l in O], dtype=float).reshape(len(O), len(O))
    B = np.array([[network.beta(k, l) for k in R] for l in O], dtype=float).reshape(len(O), len(R))
    return RoutingMatrices(A, B, O, R, order)


def solve_unit_lower(A: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Solve ``(I - A) x = c`` by forward substitution; ``A`` strictly lower triangular."""
    c = np.asarray(c, dtype=float)
    x = np.zeros_like(c)
    for i in range(len(c)):
        x[i] = c[i] + A[i, :i] @ x[:i]
    return x


def critical_point(link: Link) -> tuple[float, float]:
    """``(rho_crit, phi_crit)`` of an ordinary link."""
    if link.supply is None:
        raise ValueError(f"link {link.id!r} has no supply function")
    return diagrams.critical_point(link.demand, link.supply)


def critical_flows(network: Network) -> dict[str, float]:
    return {l: critical_point(network.link[l])[1] for l in network.ordinary_ids}


# -- structure -------------------------------------------------------------


def is_polytree(network: Network) -> bool:
    """True iff the undirected junction graph of ordinary links is a tree."""
    parent = {v: v for v in network.junctions}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    edges = [(l.tail, l.head) for l in network.links if not l.is_onramp]
    if len(edges) != len(network.junctions) - 1:
        return False
    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


@dataclass(frozen=True)
class MergeCheck:
    single_outlet: bool
    uniform_offramp: bool
    gamma: dict[str, float]
    reasons: tuple[str, ...] = ()

    def __bool__(self):
        return self.single_outlet and self.uniform_offramp


def is_merge_only(network: Network, tol: float = SPLIT_TOL) -> MergeCheck:
    """Every junction has at most one outgoing link, and all links entering a
    junction route the same fraction off the network."""
    reasons = []
    for v in network.junctions:
        if len(network.lout[v]) > 1:
            reasons.append(f"junction {v!r} has {len(network.lout[v])} outgoing links")
    gamma = {}
    for v in network.junctions:
        fractions = [network.offramp_fraction(l) for l in network.lin[v]]
        if not fractions:
            continue
        gamma[v] = fractions[0]
        if max(fractions) - min(fractions) > tol:
            reasons.append(f"incoming links of junction {v!r} route different off-network fractions")
    single = not any("outgoing" in r for r in reasons)
    uniform = not any("fractions" in r for r in reasons)
    return MergeCheck(single, uniform, gamma, tuple(reasons))
