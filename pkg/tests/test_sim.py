import math

import numpy as np
import pytest

from oracles import forward_flows_dense
from support import chain, single_ramp, sub_equilibrium_state
from trafficnet import dynamics, equilibrium, generate, sim
from trafficnet.diagrams import ExponentialDemand, ExponentialSupply
from trafficnet.errors import StepRejected
from trafficnet.network import Network, onramp, ordinary

UNMETERED_FLOWS = {"1": 2000.0, "2": 1000.0, "3": 1000.0, "4": 2000.0, "5": 3000.0}


def smooth_chain():
    """Exponential diagrams everywhere, so the field is smooth while all junctions run free."""
    road = (ExponentialDemand(3000.0, 0.03), ExponentialSupply(6000.0, 0.01, 300.0))
    links = (onramp("r", "a", ExponentialDemand(2000.0, 0.05)),
             ordinary("x", "a", "b", *road), ordinary("y", "b", "c", *road))
    return Network(("a", "b", "c"), links, {("r", "x"): 1.0, ("x", "y"): 0.9})


class TestPlainIntegration:
    def test_rk4_fourth_order(self):
        net = smooth_chain()
        start = {"r": 40.0, "x": 5.0, "y": 60.0}
        runs = [sim.simulate(net, start, {"r": 800.0}, horizon=0.1, dt=dt) for dt in (0.0025, 0.00125, 0.000625)]
        assert all(dynamics.active_mode(net, s).freeflow for s in runs[0].states)
        ends = [r.states[-1] for r in runs]
        e1 = np.abs(ends[0] - ends[1]).max()
        e2 = np.abs(ends[1] - ends[2]).max()
        assert 14.0 < e1 / e2 < 19.0

    def test_equilibrium_is_constant(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            net = generate.random_network(rng)
            d = generate.random_demand(net, rng)
            eq = equilibrium.freeflow_equilibrium(net, d)
            traj = sim.simulate(net, eq.densities, d, horizon=2.0, dt=1e-3, record_every=100)
            assert np.abs(traj.rates).max() <= 1e-9
            assert np.abs(traj.states - traj.states[0]).max() <= 1e-9 * max(1.0, traj.states[0].max())

    def test_example2_queues_grow(self, example2):
        traj = sim.simulate(example2, None, {"1": 2500, "4": 2500}, horizon=50.0, dt=1e-3, record_every=500)
        end = example2.as_dict(traj.states[-1])
        for l, rho in {"2": 270.0, "3": 30.0, "5": 90.0}.items():
            assert end[l] == pytest.approx(rho, rel=0.01)
        for l in ("1", "4"):
            series = traj.states[:, example2.index[l]]
            assert np.all(np.diff(series) > 0)
            assert series[-1] > 2e4

    def test_large_step_rejected(self, example2):
        with pytest.raises(StepRejected) as info:
            sim.simulate(example2, None, {"1": 2500, "4": 2500}, horizon=1.0, dt=0.2)
        assert info.value.time is not None

    def test_bundled_examples_stay_in_domain(self, example1, example2, freeway):
        for net in (example1, example2, freeway):
            d = {l: 2 * net.link[l].demand.sup for l in net.onramp_ids}
            traj = sim.simulate(net, None, d, horizon=3.0, dt=1e-3, record_every=100)
            assert traj.max_clamp <= 1e-6 * dynamics.kernel(net).jam[dynamics.kernel(net).ordinary].min()

    def test_piecewise_constant_inputs(self):
        net = single_ramp()
        inputs = sim.PiecewiseConstant([0.0, 1.0], [{"r": 1000.0}, {"r": 0.0}])
        traj = sim.simulate(net, None, inputs, horizon=3.0, dt=1e-3, record_every=100)
        assert traj.outflows[-1, net.index["r"]] < 1.0
        before = int(np.searchsorted(traj.times, 1.0)) - 1
        assert traj.outflows[before, net.index["r"]] == pytest.approx(1000.0, rel=1e-3)

    def test_piecewise_constant_validation(self):
        with pytest.raises(ValueError):
            sim.PiecewiseConstant([0.5], [{}])
        with pytest.raises(ValueError):
            sim.PiecewiseConstant([0.0, 2.0, 1.0], [{}, {}, {}])

    def test_csv_deterministic(self, example2):
        texts = [sim.simulate(example2, None, {"1": 1000, "4": 500}, horizon=0.1, dt=1e-2).to_csv()
                 for _ in range(2)]
        assert texts[0] == texts[1]
        header = texts[0].splitlines()[0].split(",")
        assert header[0] == "t" and header[-1] == "residual"
        assert len(texts[0].splitlines()) == 12

    def test_monotone_from_below_equilibrium(self):
        rng = np.random.default_rng(5)
        net = generate.random_network(rng)
        d = generate.random_demand(net, rng)
        rho_e = net.vector(equilibrium.freeflow_equilibrium(net, d).densities)
        x0 = sub_equilibrium_state(net, rho_e, rng)
        traj = sim.simulate(net, x0, d, horizon=3.0, dt=1e-3, record_every=10)
        assert np.diff(traj.states, axis=0).min() >= -1e-9 * rho_e.max()
        np.testing.assert_allclose(traj.states[-1], rho_e, rtol=1e-3)


class TestCompactified:
    def test_agrees_with_plain_when_feasible(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            net = generate.random_network(rng)
            d = generate.random_demand(net, rng)
            plain = sim.simulate(net, None, d, horizon=1.0, dt=1e-3, record_every=50)
            hat = sim.simulate_compactified(net, None, d, horizon=1.0, dt=1e-3, record_every=50)
            np.testing.assert_allclose(hat.densities(), plain.states, rtol=1e-6,
                                       atol=1e-6 * plain.states.max())

    def test_single_ramp_saturates(self):
        net = single_ramp(ramp_capacity=2000.0)
        traj = sim.simulate_compactified(net, None, {"r": 3000.0}, horizon=3.0, dt=1e-3, record_every=20)
        series = traj.states[:, net.index["r"]]
        assert np.all(np.diff(series) >= 0)
        assert series[-1] > 0.999

    def test_example2_ordinary_limits(self, example2):
        traj = sim.simulate_compactified(example2, None, {"1": 2500, "4": 2500}, horizon=30.0,
                                         dt=1e-3, record_every=500)
        end = example2.as_dict(traj.states[-1])
        for l, rho in {"2": 270.0, "3": 30.0, "5": 90.0}.items():
            assert end[l] == pytest.approx(rho, rel=0.01)
        assert end["1"] > 0.99 and end["4"] > 0.99

    def test_saturated_equilibrium_is_fixed(self, example2):
        state = sim.CompactState.from_state(example2, {"2": 270.0, "3": 30.0, "5": 90.0},
                                            saturated=("1", "4"))
        assert state.saturated(example2) == ("1", "4")
        traj = sim.simulate_compactified(example2, state, {"1": 2500, "4": 2500}, horizon=1.0, dt=1e-3)
        ordinary = dynamics.kernel(example2).ordinary
        assert np.abs(traj.rates[:, ordinary]).max() <= 1e-9
        assert np.abs(traj.states - traj.states[0]).max() <= 1e-9
        assert traj.saturated(len(traj.times) - 1) == ("1", "4")

    def test_compact_state_round_trip(self, example2):
        state = {"1": 3.0, "2": 10.0, "3": 0.0, "4": math.inf, "5": 1.0}
        hat = sim.CompactState.from_state(example2, state)
        assert hat.hat["1"] == pytest.approx(0.75) and hat.hat["4"] == 1.0
        assert hat.to_state(example2) == pytest.approx(state)


class TestSettle:
    def test_feasible_flows_match_forward_substitution(self):
        rng = np.random.default_rng(13)
        for _ in range(5):
            net = generate.random_network(rng)
            d = generate.random_demand(net, rng)
            res = sim.settle(net, d)
            assert res.converged
            ref = forward_flows_dense(net, d)
            scale = sim.capacity_scale(net)
            for l, f in ref.items():
                assert abs(res.flows.outflow[l] - f) <= 1e-3 * scale
            assert res.diverging == ()

    def test_zero_demand_immediate(self, example2):
        res = sim.settle(example2, {"1": 0.0, "4": 0.0})
        assert res.converged and res.time == 0.0
        assert all(x == 0.0 for x in res.state.values())

    def test_example2_infeasible(self, example2):
        res = sim.settle(example2, {"1": 2500, "4": 2500})
        assert res.converged and res.unique
        for l, f in UNMETERED_FLOWS.items():
            assert res.flows.outflow[l] == pytest.approx(f, rel=0.01)
        assert set(res.diverging) == {"1", "4"}
        dens = res.equilibrium_densities()
        assert math.isinf(dens["1"]) and math.isinf(dens["4"])

    def test_not_converged_flag(self, example2):
        res = sim.settle(example2, {"1": 2500, "4": 2500}, max_horizon=0.5)
        assert not res.converged and res.time == pytest.approx(0.5)

    def test_capacity_scale(self, example2):
        assert sim.capacity_scale(example2) == 6000.0
        assert sim.capacity_scale(chain(2)) == 3000.0
