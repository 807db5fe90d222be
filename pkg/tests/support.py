"""Small hand-built networks and sampling helpers shared by the tests."""
from __future__ import annotations

import numpy as np

from trafficnet import dynamics, equilibrium, generate
from trafficnet.diagrams import LinearDemand, LinearSupply
from trafficnet.network import Network, onramp, ordinary

# ordinary link with critical point (90, 3000), jam 360
ROAD = (LinearDemand(3000 / 90, 3000.0), LinearSupply(4000 / 360, 360.0))


def chain(n_links=3, gamma=0.0, ramp_capacity=3000.0, road=ROAD) -> Network:
    """Onramp ``r`` feeding ordinary links ``l1 .. ln`` in series.

    Each junction between consecutive links sends ``gamma`` of the flow off
    the network.
    """
    junctions = [f"v{i}" for i in range(n_links + 1)]
    links = [onramp("r", "v0", LinearDemand(3000 / 90, ramp_capacity))]
    split = {("r", "l1"): 1.0}
    for i in range(1, n_links + 1):
        links.append(ordinary(f"l{i}", f"v{i - 1}", f"v{i}", *road))
        if i < n_links:
            split[(f"l{i}", f"l{i + 1}")] = 1.0 - gamma
    return Network(tuple(junctions), tuple(links), split, name=f"chain{n_links}")


def single_ramp(ramp_capacity=2000.0, road_capacity=6000.0) -> Network:
    road = (LinearDemand(road_capacity / 90, road_capacity), LinearSupply(2 * road_capacity / 360, 360.0))
    links = [onramp("r", "v0", LinearDemand(ramp_capacity / 60, ramp_capacity)), ordinary("l", "v0", "v1", *road)]
    return Network(("v0", "v1"), tuple(links), {("r", "l"): 1.0}, name="single")


def random_cases(count, seed, **network_options):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        net = generate.random_network(rng, name=f"rand{i}", **network_options)
        out.append(net)
    return out


def sub_equilibrium_state(network, rho_e, rng) -> np.ndarray:
    """Random state whose trajectory rises monotonically to ``rho_e``.

    Built link by link in ``link_order``: onramps start at a random fraction of
    their equilibrium density and ordinary links at a random fraction of the
    density whose demand matches the inflow delivered from upstream.
    """
    kern = dynamics.kernel(network)
    x = np.zeros(kern.n_links)
    for i, l in enumerate(network.link_order):
        link = network.link[l]
        theta = rng.uniform()
        if link.is_onramp:
            x[i] = theta * rho_e[i]
        else:
            inflow = kern.beta_t[i] @ kern.demand(x)
            x[i] = theta * link.demand.inverse(inflow)
    return x


def feasible_instance(rng, **network_options):
    net = generate.random_network(rng, **network_options)
    d = generate.random_demand(net, rng)
    eq = equilibrium.freeflow_equilibrium(net, d)
    return net, d, eq


# one line per acceptance criterion, printed again in the terminal summary
ACCEPTANCE: list[str] = []


def verdict(number: int, title: str, failures: list, detail: str = "") -> None:
    ok = not failures
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line + "\n" + "\n".join(str(f) for f in failures[:10])
