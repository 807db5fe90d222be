"""PP/FIFO junction flows, the network vector field, modes and mode Jacobians.

All public functions accept a state either as a mapping ``link id -> density``
or as an array in ``network.link_order``. Onramps whose queue is infinite are
passed through ``saturated`` (ids or a boolean mask); their demand is taken
to be its supremum.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .diagrams import MeteredDemand
from .errors import DegenerateMode
from .network import Network

TIE_TOL = 1e-12

_kernels: "weakref.WeakKeyDictionary[Network, Kernel]" = weakref.WeakKeyDictionary()


def kernel(network: Network) -> "Kernel":
    k = _kernels.get(network)
    if k is None:
        k = _kernels[network] = Kernel(network)
    return k


def _groups(items):
    """Group ``(index, diagram)`` pairs by diagram class into parameter arrays."""
    by_cls = {}
    for i, diag in items:
        by_cls.setdefault(type(diag), []).append((i, diag.params))
    out = []
    for cls, rows in by_cls.items():
        idx = np.array([i for i, _ in rows], dtype=int)
        params = tuple(np.array(col, dtype=float) for col in zip(*(p for _, p in rows)))
        out.append((cls, idx, params))
    return out


class Kernel:
    """Array form of a validated network, in ``link_order``."""

    def __init__(self, network: Network):
        self.network = network
        order = network.link_order
        junctions = network.junction_order
        jpos = {v: i for i, v in enumerate(junctions)}
        links = [network.link[l] for l in order]
        n = len(order)
        self.n_links, self.n_junctions = n, len(junctions)
        self.junctions = junctions
        self.onramp = np.array([l.is_onramp for l in links], dtype=bool)
        self.ordinary = ~self.onramp
        self.ord_idx = np.flatnonzero(self.ordinary)
        self.head = np.array([jpos[l.head] for l in links], dtype=int)
        self.tail = np.array([jpos[l.tail] if l.tail is not None else -1 for l in links], dtype=int)
        self.jam = np.array([l.jam_density for l in links], dtype=float)

        beta = np.zeros((n, n))
        for (a, b), x in network.split.items():
            beta[network.index[a], network.index[b]] = x
        self.beta = beta
        self.beta_t = np.ascontiguousarray(beta.T)

        bases, meter = [], np.full(n, np.inf)
        for i, l in enumerate(links):
            d = l.demand
            if isinstance(d, MeteredDemand):
                meter[i] = d.rate
                d = d.base
            bases.append((i, d))
        self.meter = meter
        self.metered = bool(np.isfinite(meter).any())
        self.demand_groups = _groups(bases)
        self.supply_groups = _groups((i, links[i].supply) for i in self.ord_idx)
        opos = {int(i): p for p, i in enumerate(self.ord_idx)}
        self._supply_pos = {cls: np.array([opos[int(i)] for i in idx], dtype=int)
                            for cls, idx, _ in self.supply_groups}
        self.sup = np.array([l.demand.sup for l in links], dtype=float)

        # ordinary links sorted by tail junction for the per-junction minimum
        perm = self.ord_idx[np.argsort(self.tail[self.ord_idx], kind="stable")]
        tails = self.tail[perm]
        starts = np.flatnonzero(np.r_[True, tails[1:] != tails[:-1]]) if len(perm) else np.array([], int)
        self._perm, self._starts = perm, starts
        self._junctions_with_out = tails[starts] if len(perm) else np.array([], int)
        self.lin = [np.flatnonzero(self.head == j) for j in range(self.n_junctions)]
        self.lout = [np.flatnonzero(self.tail == j) for j in range(self.n_junctions)]

        # fast path for rhs: ordinary-only routing rows and pre-sorted ratios
        self._beta_t_ord = np.ascontiguousarray(self.beta_t[self.ord_idx])
        pos = {int(i): p for p, i in enumerate(self.ord_idx)}
        self._perm_ord = np.array([pos[int(i)] for i in perm], dtype=int)
        self._ones_j = np.ones(self.n_junctions)
        self._single_demand = (len(self.demand_groups) == 1
                               and np.array_equal(self.demand_groups[0][1], np.arange(n)))

    # -- diagrams ----------------------------------------------------------

    def demand(self, rho, sat=None):
        if self._single_demand:
            cls, _, p = self.demand_groups[0]
            phi = cls._value(p, rho)
        else:
            phi = np.empty(self.n_links)
            for cls, idx, p in self.demand_groups:
                phi[idx] = cls._value(p, rho[idx])
        if self.metered:
            np.minimum(phi, self.meter, out=phi)
        if sat is not None:
            phi[sat] = self.sup[sat]
        return phi

    def demand_slope(self, rho, sat=None):
        dphi = np.empty(self.n_links)
        for cls, idx, p in self.demand_groups:
            dphi[idx] = cls._slope(p, rho[idx])
        if self.metered:
            base = np.empty(self.n_links)
            for cls, idx, p in self.demand_groups:
                base[idx] = cls._value(p, rho[idx])
            dphi = np.where(base < self.meter, dphi, 0.0)
        if sat is not None:
            dphi[sat] = 0.0
        return dphi

    def supply(self, rho):
        s = np.full(self.n_links, np.inf)
        for cls, idx, p in self.supply_groups:
            s[idx] = cls._value(p, rho[idx])
        return s

    def supply_slope(self, rho):
        ds = np.zeros(self.n_links)
        for cls, idx, p in self.supply_groups:
            ds[idx] = cls._slope(p, rho[idx])
        return ds

    # -- PP/FIFO -----------------------------------------------------------

    def ratios(self, phi, s):
        """Supply over aggregate upstream demand for each link (inf when no demand)."""
        agg = self.beta_t @ phi
        r = np.full(self.n_links, np.inf)
        o = self.ord_idx
        pos = agg[o] > 0
        r[o[pos]] = s[o[pos]] / agg[o[pos]]
        return r, agg

    def alpha(self, r):
        a = np.ones(self.n_junctions)
        if len(self._perm):
            m = np.minimum.reduceat(r[self._perm], self._starts)
            a[self._junctions_with_out] = np.minimum(1.0, m)
        return a

    def evaluate(self, rho, d, sat=None):
        phi = self.demand(rho, sat)
        s = self.supply(rho)
        r, agg = self.ratios(phi, s)
        a = self.alpha(r)
        fout = a[self.head] * phi
        fin = self.beta_t @ fout
        F = np.where(self.onramp, d - fout, fin - fout)
        return a, phi, s, r, fout, fin, F

    def rhs(self, rho, d, sat=None):
        phi = self.demand(rho, sat)
        s = np.empty(len(self.ord_idx))
        for cls, idx, p in self.supply_groups:
            s[self._supply_pos[cls]] = cls._value(p, rho[idx])
        agg = self._beta_t_ord @ phi
        r = np.divide(s, agg, out=np.full(len(s), np.inf), where=agg > 0)
        a = self._ones_j.copy()
        if len(r):
            a[self._junctions_with_out] = np.minimum(1.0, np.minimum.reduceat(r[self._perm_ord], self._starts))
        fout = a[self.head] * phi
        # d vanishes on ordinary links and inflow vanishes on onramps
        return self.beta_t @ fout + d - fout

    # -- modes -------------------------------------------------------------

    def boundary_margin(self, rho, sat=None):
        """Smallest relative distance to a switching surface of the vector field.

        Covers corners of piecewise-linear diagrams, metering caps, and ties
        between the candidate values of ``alpha`` at each junction.
        """
        margins = [np.inf]
        live = np.ones(self.n_links, dtype=bool) if sat is None else ~sat
        base = np.empty(self.n_links)
        for cls, idx, p in self.demand_groups:
            k = cls._kink(p, rho[idx])
            margins.append(float(np.min(k[live[idx]], initial=np.inf)))
            base[idx] = cls._value(p, rho[idx])
        if self.metered:
            m = np.isfinite(self.meter) & live
            if m.any():
                margins.append(float(np.min(np.abs(base[m] - self.meter[m]) / np.maximum(self.meter[m], 1e-300))))
        for cls, idx, p in self.supply_groups:
            margins.append(float(np.min(cls._kink(p, rho[idx]), initial=np.inf)))
        r, _ = self.ratios(self.demand(rho, sat), self.supply(rho))
        for j in range(self.n_junctions):
            out = self.lout[j]
            if not len(out):
                continue
            vals = np.sort(np.r_[r[out][np.isfinite(r[out])], 1.0])
            if len(vals) > 1:
                margins.append(float((vals[1] - vals[0]) / max(vals[0], 1e-300)))
        return min(margins)

    def selection(self, r, a, tol=TIE_TOL):
        """Per junction: chosen link index (-1 unconstrained), binding indices, tie flag."""
        sel = np.full(self.n_junctions, -1, dtype=int)
        binding, degenerate = {}, {}
        for j in range(self.n_junctions):
            out = self.lout[j]
            if not len(out):
                continue
            rj = r[out]
            bound = out[np.isfinite(rj) & (rj <= a[j] * (1 + tol)) & (rj <= 1 + tol)]
            binding[j] = tuple(int(k) for k in bound)
            if len(bound):
                sel[j] = int(bound.min())  # link_order index: lowest enumeration wins
                degenerate[j] = len(bound) > 1 or bool(np.any(np.abs(r[bound] - 1.0) <= tol))
        return sel, binding, degenerate

    def mode_alpha(self, rho, sel, sat=None):
        phi = self.demand(rho, sat)
        s = self.supply(rho)
        r, _ = self.ratios(phi, s)
        a = np.ones(self.n_junctions)
        chosen = sel >= 0
        a[chosen] = r[sel[chosen]]
        return a

    def jacobian(self, rho, sel, sat=None):
        """Jacobian of the smooth selection fixed by ``sel``."""
        phi, dphi = self.demand(rho, sat), self.demand_slope(rho, sat)
        s, ds = self.supply(rho), self.supply_slope(rho)
        agg = self.beta_t @ phi
        n = self.n_links
        dfout = np.zeros((n, n))
        for j in range(self.n_junctions):
            ls = self.lin[j]
            if not len(ls):
                continue
            k = sel[j]
            if k < 0:
                dfout[ls, ls] = dphi[ls]
                continue
            a = s[k] / agg[k]
            grad = np.zeros(n)
            grad[k] += ds[k] / agg[k]
            grad[ls] -= s[k] * self.beta_t[k, ls] * dphi[ls] / agg[k] ** 2
            dfout[ls, :] = np.outer(phi[ls], grad)
            dfout[ls, ls] += a * dphi[ls]
        return (self.beta_t - np.eye(n)) @ dfout


# -- public API ------------------------------------------------------------


def _rho(network: Network, state) -> np.ndarray:
    return network.vector(state).astype(float, copy=True)


def _sat(network: Network, saturated) -> np.ndarray | None:
    if saturated is None:
        return None
    if isinstance(saturated, np.ndarray) and saturated.dtype == bool:
        return saturated if saturated.any() else None
    ids = list(saturated)
    if not ids:
        return None
    mask = np.zeros(len(network.link_order), dtype=bool)
    for l in ids:
        if not network.link[l].is_onramp:
            raise ValueError(f"only onramps can be saturated, got {l!r}")
        mask[network.index[l]] = True
    return mask


@dataclass(frozen=True)
class Mode:
    """Smooth selection active at a state.

    ``selection[v]`` is ``None`` for an unconstrained junction or the id of the
    outgoing link whose supply determines ``alpha``; ``binding[v]`` lists every
    outgoing link attaining the minimum.
    """

    selection: dict[str, str | None]
    binding: dict[str, tuple[str, ...]]
    degenerate_at: tuple[str, ...] = ()

    @property
    def degenerate(self) -> bool:
        return bool(self.degenerate_at)

    @property
    def freeflow(self) -> bool:
        return all(k is None for k in self.selection.values())

    def label(self) -> str:
        parts = [f"{v}:{'free' if k is None else f'supply({k})'}" for v, k in self.selection.items()]
        return " ".join(parts)

    def __str__(self):
        return self.label()

    def as_indices(self, network: Network) -> np.ndarray:
        kern = kernel(network)
        sel = np.full(kern.n_junctions, -1, dtype=int)
        for j, v in enumerate(kern.junctions):
            k = self.selection.get(v)
            if k is not None:
                sel[j] = network.index[k]
        return sel


def freeflow_mode(network: Network) -> Mode:
    return Mode({v: None for v in network.junction_order if network.lout[v]}, {})


@dataclass(frozen=True)
class FlowSolution:
    alpha: dict[str, float]
    outflow: dict[str, float]
    inflow: dict[str, float]
    mode: Mode

    def throughput(self, network: Network) -> float:
        return sum(self.outflow[l] for l in network.onramp_ids)


def _mode_from(network: Network, kern: Kernel, r, a) -> Mode:
    sel, binding, degenerate = kern.selection(r, a)
    ids = network.link_order
    selection, bind = {}, {}
    for j, v in enumerate(kern.junctions):
        if not len(kern.lout[j]):
            continue
        selection[v] = None if sel[j] < 0 else ids[sel[j]]
        bind[v] = tuple(ids[k] for k in binding[j])
    degen = tuple(kern.junctions[j] for j, flag in degenerate.items() if flag)
    return Mode(selection, bind, degen)


def _solution(network, kern, a, r, fout, fin) -> FlowSolution:
    ids = network.link_order
    return FlowSolution(
        alpha={v: float(a[j]) for j, v in enumerate(kern.junctions)},
        outflow={l: float(fout[i]) for i, l in enumerate(ids)},
        inflow={l: float(fin[i]) for i, l in enumerate(ids) if kern.ordinary[i]},
        mode=_mode_from(network, kern, r, a),
    )


def junction_alpha(network: Network, state, v: str, saturated=None) -> tuple[float, tuple[str, ...]]:
    """Common demand scaling factor at junction ``v`` and the outgoing links that bind it."""
    kern = kernel(network)
    rho = _rho(network, state)
    phi = kern.demand(rho, _sat(network, saturated))
    r, _ = kern.ratios(phi, kern.supply(rho))
    a = kern.alpha(r)
    mode = _mode_from(network, kern, r, a)
    j = kern.junctions.index(v)
    return float(a[j]), mode.binding.get(v, ())


def flows(network: Network, state, saturated=None) -> FlowSolution:
    kern = kernel(network)
    rho = _rho(network, state)
    a, _, _, r, fout, fin, _ = kern.evaluate(rho, np.zeros(kern.n_links), _sat(network, saturated))
    return _solution(network, kern, a, r, fout, fin)


def vector_field(network: Network, state, d=None, saturated=None) -> np.ndarray:
    """Density rates in ``link_order``: ``d - f_out`` on onramps, ``f_in - f_out`` elsewhere."""
    kern = kernel(network)
    return kern.rhs(_rho(network, state), network.demand_vector(d), _sat(network, saturated))


def active_mode(network: Network, state, saturated=None) -> Mode:
    kern = kernel(network)
    rho = _rho(network, state)
    phi = kern.demand(rho, _sat(network, saturated))
    r, _ = kern.ratios(phi, kern.supply(rho))
    return _mode_from(network, kern, r, kern.alpha(r))


def mode_alpha(network: Network, state, mode: Mode, saturated=None) -> dict[str, float]:
    """``alpha`` per junction computed from the formula selected by ``mode``."""
    kern = kernel(network)
    a = kern.mode_alpha(_rho(network, state), mode.as_indices(network), _sat(network, saturated))
    return {v: float(a[j]) for j, v in enumerate(kern.junctions)}


def mode_jacobian(network: Network, state, mode: Mode | None = None, strict: bool = False,
                  saturated=None) -> np.ndarray:
    """Jacobian of the smooth selection ``mode`` at ``state`` (rows/cols in ``link_order``).

    With ``mode=None`` the active mode is used. Ties are resolved towards the
    lowest-enumerated binding link unless ``strict`` is set, in which case a
    tied mode raises DegenerateMode.
    """
    if mode is None:
        mode = active_mode(network, state, saturated)
    if strict and mode.degenerate:
        raise DegenerateMode(f"tied supply constraints at junctions {mode.degenerate_at}")
    kern = kernel(network)
    return kern.jacobian(_rho(network, state), mode.as_indices(network), _sat(network, saturated))


def finite_difference_jacobian(network: Network, state, h: float = 1e-6, saturated=None) -> np.ndarray:
    """Central-difference Jacobian of the vector field (input flows cancel)."""
    kern = kernel(network)
    rho = _rho(network, state)
    sat = _sat(network, saturated)
    zero = np.zeros(kern.n_links)
    J = np.empty((kern.n_links, kern.n_links))
    for k in range(kern.n_links):
        e = np.zeros(kern.n_links)
        e[k] = h
        J[:, k] = (kern.rhs(rho + e, zero, sat) - kern.rhs(rho - e, zero, sat)) / (2 * h)
    return J


def saturated_mask(network: Network, saturated: Iterable[str] | Mapping | None) -> np.ndarray:
    m = _sat(network, saturated)
    return np.zeros(len(network.link_order), dtype=bool) if m is None else m
