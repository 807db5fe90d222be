"""Supply and demand functions (fundamental diagrams) for network links.

Two parametric families are supported, piecewise linear and exponential.
Every family exposes its formulas as static kernels taking a tuple of
parameter arrays, so that a compiled network can evaluate all links of one
family in a single vectorised call while scalar evaluation shares the same
code path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import InversionFailure, NoCrossing

INF = math.inf


def _scalar(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


# -- demand ----------------------------------------------------------------


@dataclass(frozen=True)
class LinearDemand:
    """Demand ``min(speed * rho, capacity)``."""

    speed: float
    capacity: float

    kind = "linear"

    @property
    def params(self):
        return (self.speed, self.capacity)

    @staticmethod
    def _value(p, rho):
        return np.minimum(p[0] * rho, p[1])

    @staticmethod
    def _slope(p, rho):
        return np.where(p[0] * rho < p[1], p[0], 0.0)

    @staticmethod
    def _kink(p, rho):
        """Relative distance of the value from the corner of the curve."""
        return np.abs(p[0] * rho - p[1]) / p[1]

    @property
    def sup(self) -> float:
        return float(self.capacity)

    @property
    def attains_sup(self) -> bool:
        return True

    @property
    def saturation_density(self) -> float:
        return self.capacity / self.speed

    @property
    def max_slope(self) -> float:
        return float(self.speed)

    def inverse(self, flow: float) -> float:
        """Smallest density whose demand equals ``flow``."""
        if flow < 0 or flow > self.capacity * (1 + 1e-12):
            raise InversionFailure(f"flow {flow} outside demand range [0, {self.capacity}]")
        return min(flow, self.capacity) / self.speed

    def check(self) -> list[str]:
        problems = []
        if not (self.speed > 0 and math.isfinite(self.speed)):
            problems.append(f"demand speed must be positive and finite, got {self.speed}")
        if not (self.capacity > 0 and math.isfinite(self.capacity)):
            problems.append(f"demand capacity must be positive and finite, got {self.capacity}")
        return problems

    def to_dict(self):
        return {"kind": "linear", "speed": self.speed, "capacity": self.capacity}

    def __call__(self, rho):
        return _scalar(self._value(self.params, np.asarray(rho, dtype=float)))

    def derivative(self, rho):
        return _scalar(self._slope(self.params, np.asarray(rho, dtype=float)))


@dataclass(frozen=True)
class ExponentialDemand:
    """Demand ``a * (1 - exp(-b * rho))``; the supremum ``a`` is never attained."""

    a: float
    b: float

    kind = "exponential"

    @property
    def params(self):
        return (self.a, self.b)

    @staticmethod
    def _value(p, rho):
        return p[0] * -np.expm1(-p[1] * rho)

    @staticmethod
    def _slope(p, rho):
        return p[0] * p[1] * np.exp(-p[1] * rho)

    @staticmethod
    def _kink(p, rho):
        return np.full(np.shape(rho), np.inf)

    @property
    def sup(self) -> float:
        return float(self.a)

    @property
    def attains_sup(self) -> bool:
        return False

    @property
    def saturation_density(self) -> float:
        return INF

    @property
    def max_slope(self) -> float:
        return float(self.a * self.b)

    def inverse(self, flow: float) -> float:
        if flow < 0 or flow >= self.a:
            raise InversionFailure(f"flow {flow} outside demand range [0, {self.a})")
        return -math.log1p(-flow / self.a) / self.b

    def check(self) -> list[str]:
        problems = []
        if not (self.a > 0 and math.isfinite(self.a)):
            problems.append(f"exponential demand needs a > 0, got {self.a}")
        if not (self.b > 0 and math.isfinite(self.b)):
            problems.append(f"exponential demand needs b > 0, got {self.b}")
        return problems

    def to_dict(self):
        return {"kind": "exponential", "a": self.a, "b": self.b}

    def __call__(self, rho):
        return _scalar(self._value(self.params, np.asarray(rho, dtype=float)))

    def derivative(self, rho):
        return _scalar(self._slope(self.params, np.asarray(rho, dtype=float)))


@dataclass(frozen=True)
class MeteredDemand:
    """Onramp demand capped by a constant metering rate, ``min(base(rho), rate)``."""

    base: LinearDemand | ExponentialDemand
    rate: float

    @property
    def kind(self):
        return self.base.kind

    @property
    def sup(self) -> float:
        return min(self.base.sup, self.rate)

    @property
    def attains_sup(self) -> bool:
        return self.base.attains_sup or self.rate < self.base.sup

    @property
    def saturation_density(self) -> float:
        if self.rate >= self.base.sup:
            return self.base.saturation_density
        return self.base.inverse(self.rate)

    @property
    def max_slope(self) -> float:
        return self.base.max_slope

    def inverse(self, flow: float) -> float:
        if flow > self.sup * (1 + 1e-12):
            raise InversionFailure(f"flow {flow} above metered supremum {self.sup}")
        return self.base.inverse(min(flow, self.base.sup))

    def check(self) -> list[str]:
        problems = self.base.check()
        if not self.rate >= 0:
            problems.append(f"metering rate must be nonnegative, got {self.rate}")
        return problems

    def to_dict(self):
        return {**self.base.to_dict(), "meter": self.rate}

    def __call__(self, rho):
        return _scalar(np.minimum(self.base(rho), self.rate))

    def derivative(self, rho):
        return _scalar(np.where(self.base(rho) < self.rate, self.base.derivative(rho), 0.0))


# -- supply ----------------------------------------------------------------


@dataclass(frozen=True)
class LinearSupply:
    """Supply ``min(slope * (jam_density - rho), capacity)``."""

    slope: float
    jam_density: float
    capacity: float = INF

    kind = "linear"

    @property
    def params(self):
        return (self.slope, self.jam_density, self.capacity)

    @staticmethod
    def _value(p, rho):
        return np.minimum(p[0] * (p[1] - rho), p[2])

    @staticmethod
    def _slope(p, rho):
        return np.where(p[0] * (p[1] - rho) < p[2], -p[0], 0.0)

    @staticmethod
    def _kink(p, rho):
        return np.where(np.isfinite(p[2]), np.abs(p[0] * (p[1] - rho) - p[2]) / (p[0] * p[1]), np.inf)

    @property
    def max_slope(self) -> float:
        return float(self.slope)

    def check(self) -> list[str]:
        problems = []
        if not (self.slope > 0 and math.isfinite(self.slope)):
            problems.append(f"supply slope must be positive and finite, got {self.slope}")
        if not (self.jam_density > 0 and math.isfinite(self.jam_density)):
            problems.append(f"jam density must be positive and finite, got {self.jam_density}")
        if not self.capacity > 0:
            problems.append(f"supply capacity must be positive, got {self.capacity}")
        return problems

    def to_dict(self):
        out = {"kind": "linear", "slope": self.slope, "jam_density": self.jam_density}
        if math.isfinite(self.capacity):
            out["capacity"] = self.capacity
        return out

    def __call__(self, rho):
        return _scalar(self._value(self.params, np.asarray(rho, dtype=float)))

    def derivative(self, rho):
        return _scalar(self._slope(self.params, np.asarray(rho, dtype=float)))


@dataclass(frozen=True)
class ExponentialSupply:
    """Supply ``c * (exp(-b * rho) - exp(-b * jam_density))``."""

    c: float
    b: float
    jam_density: float

    kind = "exponential"

    @property
    def params(self):
        return (self.c, self.b, self.jam_density)

    @staticmethod
    def _value(p, rho):
        return p[0] * (np.exp(-p[1] * rho) - np.exp(-p[1] * p[2]))

    @staticmethod
    def _slope(p, rho):
        return -p[0] * p[1] * np.exp(-p[1] * rho)

    @staticmethod
    def _kink(p, rho):
        return np.full(np.shape(rho), np.inf)

    @property
    def max_slope(self) -> float:
        return float(self.c * self.b)

    def check(self) -> list[str]:
        problems = []
        if not (self.c > 0 and math.isfinite(self.c)):
            problems.append(f"exponential supply needs c > 0, got {self.c}")
        if not (self.b > 0 and math.isfinite(self.b)):
            problems.append(f"exponential supply needs b > 0, got {self.b}")
        if not (self.jam_density > 0 and math.isfinite(self.jam_density)):
            problems.append(f"jam density must be positive and finite, got {self.jam_density}")
        return problems

    def to_dict(self):
        return {"kind": "exponential", "c": self.c, "b": self.b, "jam_density": self.jam_density}

    def __call__(self, rho):
        return _scalar(self._value(self.params, np.asarray(rho, dtype=float)))

    def derivative(self, rho):
        return _scalar(self._slope(self.params, np.asarray(rho, dtype=float)))


Demand = LinearDemand | ExponentialDemand | MeteredDemand
Supply = LinearSupply | ExponentialSupply


def demand_from_dict(data: dict) -> Demand:
    kind = data.get("kind", "linear")
    if kind == "linear":
        base = LinearDemand(float(data["speed"]), float(data["capacity"]))
    elif kind == "exponential":
        base = ExponentialDemand(float(data["a"]), float(data["b"]))
    else:
        raise ValueError(f"unknown demand kind {kind!r}")
    if "meter" in data:
        return MeteredDemand(base, float(data["meter"]))
    return base


def supply_from_dict(data: dict) -> Supply:
    kind = data.get("kind", "linear")
    if kind == "linear":
        return LinearSupply(
            float(data["slope"]), float(data["jam_density"]), float(data.get("capacity", INF))
        )
    if kind == "exponential":
        return ExponentialSupply(float(data["c"]), float(data["b"]), float(data["jam_density"]))
    raise ValueError(f"unknown supply kind {kind!r}")


def crossing_problems(demand: Demand, supply: Supply) -> list[str]:
    """Problems preventing a unique supply/demand crossing on [0, jam]."""
    problems = demand.check() + supply.check()
    if problems:
        return problems
    if isinstance(demand, LinearDemand) and isinstance(supply, LinearSupply):
        # both flat at the same level over an interval -> crossing not unique
        if demand.capacity == supply.capacity:
            flat_demand_from = demand.capacity / demand.speed
            flat_supply_to = supply.jam_density - supply.capacity / supply.slope
            if flat_demand_from < flat_supply_to:
                problems.append("demand and supply are both flat at the same level; crossing not unique")
    return problems


def critical_point(demand: Demand, supply: Supply) -> tuple[float, float]:
    """Return ``(rho_crit, phi_crit)`` where demand meets supply.

    Closed form when both functions are piecewise linear, otherwise a bracketed
    root search on ``demand - supply`` over ``[0, jam_density]``.
    """
    problems = crossing_problems(demand, supply)
    if problems:
        raise NoCrossing("; ".join(problems))
    jam = supply.jam_density
    if isinstance(demand, LinearDemand) and isinstance(supply, LinearSupply):
        v, cap_d = demand.speed, demand.capacity
        w, cap_s = supply.slope, supply.capacity
        # for monotone curves the crossing level is the peak of min(demand, supply)
        phi = min(cap_d, cap_s, v * w * jam / (v + w))
        if phi < cap_d:
            return phi / v, phi
        return jam - phi / w, phi

    def gap(r):
        return demand(r) - supply(r)

    if gap(0.0) > 0 or gap(jam) < 0:
        raise NoCrossing("demand and supply do not cross on [0, jam_density]")
    scale = max(demand.sup, supply(0.0))
    rho = brentq(gap, 0.0, jam, xtol=1e-14 * jam, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(gap(rho)) > 1e-10 * scale:
        raise NoCrossing(f"root search stalled with residual {gap(rho)}")
    return rho, float(demand(rho))
