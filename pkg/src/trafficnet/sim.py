"""Fixed-step RK4 integration of the network dynamics.

Two coordinate systems are supported. Plain densities integrate the vector
field directly. Compactified coordinates map each onramp density through
``x / (1 + x)`` so that a diverging queue approaches 1; this is what
``settle`` uses to find equilibria of infeasible input flows.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import dynamics
from .dynamics import FlowSolution
from .errors import StepRejected
from .network import Network, critical_flows, is_polytree

CLAMP_REL = 1e-6


def compact(x):
    return x / (1.0 + x)


def uncompact(x):
    return math.inf if x >= 1.0 else x / (1.0 - x)


@dataclass(frozen=True)
class CompactState:
    """Onramp densities in ``[0, 1]`` (1 means an infinite queue); ordinary densities unchanged."""

    hat: dict[str, float]

    @classmethod
    def from_state(cls, network: Network, state, saturated=()) -> "CompactState":
        rho = network.as_dict(network.vector(state)) if not isinstance(state, Mapping) else dict(state)
        hat = {}
        for l in network.link_order:
            x = float(rho.get(l, 0.0))
            if network.link[l].is_onramp:
                hat[l] = 1.0 if (l in saturated or math.isinf(x)) else compact(x)
            else:
                hat[l] = x
        return cls(hat)

    def to_state(self, network: Network) -> dict[str, float]:
        return {l: uncompact(x) if network.link[l].is_onramp else x for l, x in self.hat.items()}

    def saturated(self, network: Network) -> tuple[str, ...]:
        return tuple(l for l in network.onramp_ids if self.hat[l] >= 1.0)

    def vector(self, network: Network) -> np.ndarray:
        return network.vector(self.hat)


class PiecewiseConstant:
    """Input flows switching value at the given start times (the first must be 0)."""

    def __init__(self, times, values):
        if not times or times[0] != 0:
            raise ValueError("first breakpoint must be at t=0")
        if list(times) != sorted(times) or len(times) != len(values):
            raise ValueError("breakpoints must be increasing and match the values")
        self.times = list(times)
        self.values = list(values)

    def __call__(self, t: float):
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(i, 0)]


def _input_fn(network: Network, inputs) -> Callable[[float], np.ndarray]:
    if inputs is None or isinstance(inputs, (Mapping, np.ndarray, list, tuple)):
        d = network.demand_vector(inputs)
        return lambda t: d
    cache = {}

    def fn(t):
        raw = inputs(t)
        key = id(raw)
        if key not in cache:
            cache[key] = (raw, network.demand_vector(raw))
        return cache[key][1]

    return fn


@dataclass
class Trajectory:
    """Sampled solution. ``states`` holds compact coordinates when ``compact`` is set;
    ``rates`` always holds the density rates in plain coordinates."""

    network: Network
    times: np.ndarray
    states: np.ndarray
    outflows: np.ndarray
    inflows: np.ndarray
    alphas: np.ndarray
    rates: np.ndarray
    compact: bool = False
    max_clamp: float = 0.0

    @property
    def residuals(self) -> np.ndarray:
        kern = dynamics.kernel(self.network)
        if not kern.ordinary.any():
            return np.zeros(len(self.times))
        return np.abs(self.rates[:, kern.ordinary]).max(axis=1)

    def densities(self) -> np.ndarray:
        """Plain densities (``inf`` for saturated onramps in a compact run)."""
        if not self.compact:
            return self.states
        kern = dynamics.kernel(self.network)
        out = self.states.copy()
        on = kern.onramp
        with np.errstate(divide="ignore"):
            h = self.states[:, on]
            out[:, on] = np.where(h >= 1.0, np.inf, h / (1.0 - np.minimum(h, 1.0)))
        return out

    def state(self, i: int) -> dict[str, float]:
        return self.network.as_dict(self.densities()[i])

    def saturated(self, i: int) -> tuple[str, ...]:
        if not self.compact:
            return ()
        return tuple(l for l in self.network.onramp_ids if self.states[i, self.network.index[l]] >= 1.0)

    def flow_solution(self, i: int) -> FlowSolution:
        rho = self.densities()[i].copy()
        sat = self.saturated(i)
        rho[~np.isfinite(rho)] = 0.0
        return dynamics.flows(self.network, rho, saturated=sat)

    def to_csv(self, target=None) -> str | None:
        """Write ``t, densities..., outflows..., residual``; returns the text if no target."""
        ids = self.network.link_order
        prefix = "rhohat_" if self.compact else "rho_"
        header = ["t", *(prefix + l for l in ids), *("fout_" + l for l in ids), "residual"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        res = self.residuals
        for i, t in enumerate(self.times):
            w.writerow([repr(float(t)), *(repr(float(x)) for x in self.states[i]),
                        *(repr(float(x)) for x in self.outflows[i]), repr(float(res[i]))])
        text = buf.getvalue()
        if target is None:
            return text
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return None


class _Stepper:
    """RK4 stepper over the network state.

    In compact mode each onramp is carried either as its density (while the
    compact coordinate would be stiff, near an empty queue) or as its compact
    coordinate (once ``1 - hat`` is small enough that ``2 (1 - hat) |F| dt``
    stays below ``CHART_STIFFNESS``). Both charts describe the same ODE; the
    compact chart is what lets a queue reach ``hat = 1``.
    """

    CHART_STIFFNESS = 0.025

    def __init__(self, network, y0, d_of_t, dt, compact_coords):
        kern = dynamics.kernel(network)
        self.kern, self.d_of_t, self.dt, self.compact = kern, d_of_t, dt, compact_coords
        on = kern.onramp
        self.lo = np.zeros(kern.n_links)
        scale = kern.jam[kern.ordinary].max() if kern.ordinary.any() else 1.0
        self.thresh = CLAMP_REL * np.where(on, scale, kern.jam)
        y = np.array(y0, dtype=float)
        if compact_coords:
            fmax = np.maximum(np.maximum(kern.sup, d_of_t(0.0)), 1.0)
            self.switch = np.where(on, np.minimum(self.CHART_STIFFNESS / (fmax * dt), 1.0), 0.0)
            self.chart = on & (1.0 - y <= self.switch)
            live = on & ~self.chart
            y[live] = y[live] / (1.0 - y[live])
        else:
            self.chart = np.zeros(kern.n_links, dtype=bool)
        self.y = y
        self._update_bounds()

    def _update_bounds(self):
        kern = self.kern
        self.hi = np.where(kern.onramp, np.where(self.chart, 1.0, np.inf), kern.jam)

    def _rechart(self):
        if not self.compact:
            return
        kern, y = self.kern, self.y
        on = kern.onramp
        hat = np.where(self.chart, y, y / (1.0 + y))
        to_compact = on & ~self.chart & (1.0 - hat <= self.switch)
        to_plain = on & self.chart & (1.0 - hat > 2.0 * self.switch)
        if to_compact.any() or to_plain.any():
            y[to_compact] = hat[to_compact]
            y[to_plain] = hat[to_plain] / (1.0 - hat[to_plain])
            self.chart = (self.chart | to_compact) & ~to_plain
            self._update_bounds()

    def split(self, y=None):
        """Plain densities and saturation mask for a stepper state."""
        y = self.y if y is None else y
        if not self.chart.any():
            return y, None
        rho = y.copy()
        c = self.chart
        sat = c & (y >= 1.0)
        live = c & ~sat
        rho[live] = y[live] / (1.0 - y[live])
        rho[sat] = 0.0  # demand comes from the saturation mask
        return rho, (sat if sat.any() else None)

    def hat(self):
        y, on = self.y, self.kern.onramp
        if not self.compact:
            return y.copy()
        return np.where(on & ~self.chart, y / (1.0 + y), y)

    def f(self, y, d):
        rho, sat = self.split(y)
        F = self.kern.rhs(rho, d, sat)
        if self.chart.any():
            c = self.chart
            F[c] *= (1.0 - np.minimum(y[c], 1.0)) ** 2
        return F

    def evaluate(self, t):
        rho, sat = self.split()
        return self.kern.evaluate(rho, self.d_of_t(t), sat)

    def step(self, t, h):
        self._rechart()
        y = self.y
        d1, d2, d3 = self.d_of_t(t), self.d_of_t(t + h / 2), self.d_of_t(t + h)
        k1 = self.f(y, d1)
        k2 = self.f(y + 0.5 * h * k1, d2)
        k3 = self.f(y + 0.5 * h * k2, d2)
        k4 = self.f(y + h * k3, d3)
        raw = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        self.y = np.clip(raw, self.lo, self.hi)
        return np.abs(self.y - raw)


def _integrate(network, y0, d_of_t, horizon, dt, record_every, compact_coords):
    if dt <= 0:
        raise ValueError("dt must be positive")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    stepper = _Stepper(network, y0, d_of_t, dt, compact_coords)
    kern = stepper.kern
    steps = int(math.ceil(horizon / dt - 1e-9))

    n_rec = steps // record_every + 1 + (1 if steps % record_every else 0)
    L, V = kern.n_links, kern.n_junctions
    times = np.empty(n_rec)
    states, outs, ins, rates = (np.empty((n_rec, L)) for _ in range(4))
    alphas = np.empty((n_rec, V))

    def record(slot, t):
        a, _, _, _, fout, fin, F = stepper.evaluate(t)
        times[slot], states[slot], outs[slot], ins[slot] = t, stepper.hat(), fout, fin
        alphas[slot], rates[slot] = a, F

    t, slot, max_clamp = 0.0, 0, 0.0
    record(slot, t)
    for n in range(1, steps + 1):
        h = horizon - (n - 1) * dt if n == steps else dt
        clamp = stepper.step(t, h)
        t = n * dt if n < steps else horizon
        if clamp.any():
            max_clamp = max(max_clamp, float(clamp.max()))
            if not compact_coords and np.any(clamp > stepper.thresh):
                i = int(np.argmax(clamp / stepper.thresh))
                raise StepRejected(
                    f"step at t={t:.6g} left the domain on link {network.link_order[i]!r} by {clamp[i]:.3g}; "
                    "reduce dt", clamp=float(clamp[i]), time=t)
        if n % record_every == 0 or n == steps:
            slot += 1
            record(slot, t)
    n_used = slot + 1
    return Trajectory(network, times[:n_used], states[:n_used], outs[:n_used], ins[:n_used],
                      alphas[:n_used], rates[:n_used], compact_coords, max_clamp)


def simulate(network: Network, initial=None, inputs=None, horizon: float = 1.0, dt: float = 1e-3,
             record_every: int = 1) -> Trajectory:
    """Integrate densities from ``initial`` (default zero) under ``inputs``.

    ``inputs`` is a mapping of constant onramp flows, a PiecewiseConstant, or any
    callable ``t -> mapping``. Raises StepRejected if a step leaves the domain by
    more than ``1e-6`` of the jam density.
    """
    y0 = np.zeros(len(network.link_order)) if initial is None else network.vector(initial)
    return _integrate(network, y0, _input_fn(network, inputs), horizon, dt, record_every,
                      compact_coords=False)


def simulate_compactified(network: Network, initial=None, d=None, horizon: float = 1.0,
                          dt: float = 1e-3, record_every: int = 1) -> Trajectory:
    """Integrate in compactified coordinates under constant input flows ``d``."""
    if initial is None:
        y0 = np.zeros(len(network.link_order))
    elif isinstance(initial, CompactState):
        y0 = initial.vector(network)
    else:
        y0 = network.vector(initial)
    d_vec = network.demand_vector(d)
    return _integrate(network, y0, lambda t: d_vec, horizon, dt, record_every,
                      compact_coords=True)


def capacity_scale(network: Network) -> float:
    """Largest link capacity: critical flows of ordinary links and onramp demand suprema."""
    caps = list(critical_flows(network).values())
    caps += [network.link[l].demand.sup for l in network.onramp_ids]
    return max(caps) if caps else 1.0


@dataclass
class SettleResult:
    hat: CompactState
    state: dict[str, float]
    flows: FlowSolution
    converged: bool
    time: float
    residual: float
    unique: bool | None
    diverging: tuple[str, ...] = ()  # onramps whose queue still grows faster than tol

    @property
    def saturated(self) -> tuple[str, ...]:
        return tuple(l for l, x in self.state.items() if math.isinf(x))

    def equilibrium_densities(self) -> dict[str, float]:
        """Settled densities with diverging queues reported as ``inf``."""
        return {l: math.inf if l in self.diverging else x for l, x in self.state.items()}


def settle(network: Network, d=None, tol: float | None = None, max_horizon: float = 200.0,
           dt: float = 1e-3, window: float = 1.0, initial=None,
           saturation_tol: float = 1e-3) -> SettleResult:
    """Run the compactified dynamics until the flows stop changing.

    Converged means every ordinary link has ``|F_l| <= tol``, every onramp
    outflow varied by less than ``tol`` over the trailing ``window`` hours, and
    every onramp whose queue is still growing has ``1 - hat < saturation_tol``.
    Reaching ``max_horizon`` returns ``converged=False``.
    """
    kern = dynamics.kernel(network)
    if tol is None:
        tol = 1e-4 * capacity_scale(network)
    d_vec = network.demand_vector(d)
    if initial is None:
        y0 = np.zeros(kern.n_links)
    elif isinstance(initial, CompactState):
        y0 = initial.vector(network)
    else:
        y0 = CompactState.from_state(network, initial).vector(network)
    stepper = _Stepper(network, y0, lambda t: d_vec, dt, compact_coords=True)
    on, ordy = kern.onramp, kern.ordinary
    win = max(1, int(round(window / dt)))
    check_every = max(1, int(round(0.05 / dt)))
    max_steps = int(math.ceil(max_horizon / dt))
    history = np.empty((max_steps + 1, int(on.sum())))

    def assess():
        out = stepper.evaluate(0.0)
        return out[4], out[6]

    fout, F = assess()
    history[0] = fout[on]
    converged = bool(np.all(np.abs(F) <= tol))
    n = 0
    while not converged and n < max_steps:
        stepper.step(n * dt, dt)
        n += 1
        fout, F = assess()
        history[n] = fout[on]
        if n >= win and n % check_every == 0:
            recent = history[n - win:n + 1]
            steady = bool(np.all(np.ptp(recent, axis=0) < tol)) if recent.shape[1] else True
            growing = on & (F > tol)
            queued = bool(np.all(1.0 - stepper.hat()[growing] < saturation_tol))
            converged = steady and queued and bool(np.all(np.abs(F[ordy]) <= tol))

    hat = CompactState(network.as_dict(stepper.hat()))
    rho, sat = stepper.split()
    sat_ids = [] if sat is None else [l for l, s in zip(network.link_order, sat) if s]
    residual = float(np.abs(F[ordy]).max()) if ordy.any() else 0.0
    return SettleResult(
        hat=hat,
        state=hat.to_state(network),
        flows=dynamics.flows(network, rho, saturated=sat_ids),
        converged=converged,
        time=n * dt,
        residual=residual,
        unique=True if is_polytree(network) else None,
        diverging=tuple(l for l, g in zip(network.link_order, on & (F > tol)) if g),
    )
