"""Acceptance suite: one test and one PASS/FAIL line per criterion."""
import math
import time

import numpy as np

from oracles import fd_jacobian_oracle, lp_vertex_enumeration
from support import sub_equilibrium_state, verdict
from test_dynamics import EXAMPLE1_PROBE
from trafficnet import analysis, dynamics, equilibrium, generate, metering, sim
from trafficnet.equilibrium import Classification
from trafficnet.network import critical_flows

D_UNMETERED = {"1": 2500.0, "4": 2500.0}


def off(actual, expected, rel):
    return abs(actual - expected) > rel * abs(expected)


def test_criterion_1_unmetered_example_equilibrium(example2):
    start = time.perf_counter()
    res = sim.settle(example2, D_UNMETERED)
    elapsed = time.perf_counter() - start
    failures = []
    if not res.converged:
        failures.append("settle did not converge")
    flows = {"1": 2000.0, "2": 1000.0, "3": 1000.0, "4": 2000.0, "5": 3000.0}
    failures += [(l, res.flows.outflow[l], f) for l, f in flows.items() if off(res.flows.outflow[l], f, 0.01)]
    dens = {"2": 270.0, "3": 30.0, "5": 90.0}
    failures += [(l, res.state[l], x) for l, x in dens.items() if off(res.state[l], x, 0.01)]
    failures += [(l, res.hat.hat[l]) for l in ("1", "4") if not res.hat.hat[l] > 0.999]
    if elapsed >= 10.0:
        failures.append(f"runtime {elapsed:.2f} s")
    verdict(1, "unmetered equilibrium of example 2 from the zero state", failures,
            f"{elapsed:.2f} s, hat=({res.hat.hat['1']:.5f}, {res.hat.hat['4']:.5f})")


def test_criterion_2_metering_plan(example2):
    plan = metering.optimal_metering(example2, D_UNMETERED)
    failures = []
    for l, s in {"1": 2500.0, "4": 1750.0}.items():
        if abs(plan.discharge[l] - s) > 1e-6:
            failures.append(("discharge", l, plan.discharge[l]))
    if abs(plan.throughput - 4250.0) > 1e-6:
        failures.append(("throughput", plan.throughput))
    out = metering.verify_plan(example2, D_UNMETERED, plan)
    flows = {"1": 2500.0, "2": 1250.0, "3": 1250.0, "4": 1750.0, "5": 3000.0}
    failures += [(l, out.flows[l]) for l, f in flows.items() if off(out.flows[l], f, 0.01)]
    dens = {"2": 37.5, "3": 37.5, "5": 90.0}
    failures += [(l, out.densities[l]) for l, x in dens.items() if off(out.densities[l], x, 0.01)]
    verdict(2, "optimal metering of example 2 and its simulated verification", failures,
            f"throughput {plan.throughput:.9g}")


def test_criterion_3_feasibility_classes(example2):
    failures = []
    cases = [({"1": 2500, "4": 2500}, Classification.INFEASIBLE),
             ({"1": 2500, "4": 1750}, Classification.FEASIBLE),
             ({"1": 2000, "4": 1000}, Classification.STRICTLY_FEASIBLE)]
    for d, expected in cases:
        res = equilibrium.classify(example2, d)
        if res.classification is not expected:
            failures.append((d, res.classification, expected))
    res = equilibrium.classify(example2, {"1": 2500, "4": 2500})
    if abs(res.candidate["5"] - 3750.0) > 1e-9 or not res.candidate["5"] > critical_flows(example2)["5"]:
        failures.append(("link 5 flow", res.candidate["5"]))
    verdict(3, "feasibility classification of three input flows", failures)


def test_criterion_4_cooperativity(example1, example2, freeway):
    failures = []
    r1 = analysis.cooperativity_scan(example1, n_samples=1000, rng=0, probes=[EXAMPLE1_PROBE])
    if not r1.has("4", "2"):
        failures.append("example 1: dF_4/drho_2 < 0 not found")
    if any("supply" not in v.mode for v in r1.violations):
        failures.append("example 1: violation outside a supply-bound mode")
    r2 = analysis.cooperativity_scan(example2, n_samples=1000, rng=0)
    if not r2.has("3", "2"):
        failures.append("example 2: dF_3/drho_2 < 0 not found")
    if any("supply" not in v.mode for v in r2.violations):
        failures.append("example 2: violation outside a supply-bound mode")
    r3 = analysis.cooperativity_scan(freeway, n_samples=1000, rng=0)
    if r3.violations:
        failures.append(f"freeway: {len(r3.violations)} violations")
    n1 = sum(v.pair == ("4", "2") for v in r1.violations)
    n2 = sum(v.pair == ("3", "2") for v in r2.violations)
    verdict(4, "cooperativity scans of the three bundled networks", failures,
            f"example1 {n1} states, example2 {n2} states, freeway {r3.sampled - r3.skipped} clean states")


def _property_failures(net, rho, d):
    kern = dynamics.kernel(net)
    out = []
    a, phi, s, _, fout, fin, F = kern.evaluate(rho, d)
    scale = max(1.0, float(kern.sup.max()), float(d.sum()))
    if np.any(fout > phi * (1 + 1e-12) + 1e-12):
        out.append("outflow above demand")
    o = kern.ordinary
    if np.any(fin[o] > s[o] * (1 + 1e-12) + 1e-12 * scale):
        out.append("inflow above supply")
    gamma = np.array([net.offramp_fraction(l) for l in net.link_order])
    if abs(F.sum() - (d.sum() - gamma @ fout)) > 1e-12 * scale:
        out.append("network balance")
    if np.abs(fin - kern.beta_t @ fout).max() > 1e-12 * scale:
        out.append("junction balance")
    for j in range(kern.n_junctions):
        ins = kern.lin[j]
        if not len(kern.lout[j]):
            continue
        live = ins[phi[ins] > 0]
        ratios = fout[live] / phi[live]
        if len(ratios) and np.ptp(ratios) > 1e-12:
            out.append("unequal priority ratios")
    for i in range(kern.n_links):
        low = rho.copy()
        low[i] = 0.0
        if kern.rhs(low, d)[i] < -1e-12 * scale:
            out.append(("negative rate at empty link", net.link_order[i]))
        if kern.ordinary[i]:
            full = rho.copy()
            full[i] = kern.jam[i]
            if kern.rhs(full, d)[i] > 1e-12 * scale:
                out.append(("positive rate at jammed link", net.link_order[i]))
    return out


def test_criterion_5_property_suite():
    rng = np.random.default_rng(2024)
    failures, states = [], 0
    variants = [{}, {"polytree": True}, {"merge_only": True}, {"exponential": 1.0}]
    for n in range(20):
        net = generate.random_network(rng, **variants[n % len(variants)])
        sampler = analysis.default_sampler(net)
        d = net.demand_vector(generate.random_infeasible_demand(net, rng) if n % 2 else generate.random_demand(net, rng))
        for _ in range(50):
            rho = sampler(rng)
            states += 1
            failures += [(n, f) for f in _property_failures(net, rho, d)]
    verdict(5, "flow bounds, conservation, priority ratios and invariance on random networks", failures,
            f"{states} states on 20 networks")


def test_criterion_6_jacobians():
    rng = np.random.default_rng(6)
    failures, checked, worst = [], 0, 0.0
    nets = [generate.random_network(rng, exponential=0.5) for _ in range(20)]
    while checked < 100:
        net = nets[checked % len(nets)]
        kern = dynamics.kernel(net)
        rho = analysis.default_sampler(net)(rng)
        if kern.boundary_margin(rho) <= 1e-6:
            continue
        J = dynamics.mode_jacobian(net, rho)
        err = float(np.abs(J - fd_jacobian_oracle(net, rho, h=1e-6)).max())
        worst = max(worst, err)
        if err > 1e-5:
            failures.append((net.name, err))
        checked += 1
    for net in nets:
        d = generate.random_demand(net, rng)
        eq = equilibrium.freeflow_equilibrium(net, d)
        J = dynamics.mode_jacobian(net, eq.densities, dynamics.freeflow_mode(net))
        if np.abs(np.triu(J, 1)).max(initial=0.0) > 0 or not np.all(np.diag(J) < 0):
            failures.append(("freeflow jacobian", net.name))
        try:
            equilibrium.stability_certificate(net, eq)
        except Exception as exc:
            failures.append(("certificate", net.name, exc))
    verdict(6, "analytic mode jacobians against central differences, freeflow structure", failures,
            f"{checked} states, max abs error {worst:.2e}")


def _horizon_and_step(net, rho_e):
    lam = -np.diag(dynamics.mode_jacobian(net, rho_e, dynamics.freeflow_mode(net)))
    return math.log(1e5) / lam.min(), min(1e-2, 0.5 / lam.max())


def test_criterion_7_monotone_convergence():
    """Monotone rise to a feasible equilibrium from random starts below it.

    Starts are uniform in the box [0, rho_e], checked for componentwise
    monotone growth and for reaching rho_e within 0.1%. Monotone growth is
    only guaranteed where the vector field is nonnegative at the start, so
    uniform starts can dip first; those runs are reported as failures. The
    detail line also reports starts built by ``sub_equilibrium_state``, where
    the field is nonnegative, for comparison.
    """
    rng = np.random.default_rng(77)
    failures, dips, reference_dips = [], 0, 0
    worst_err = 0.0
    for n in range(10):
        net = generate.random_network(rng)
        d = generate.random_demand(net, rng)
        rho_e = net.vector(equilibrium.freeflow_equilibrium(net, d).densities)
        T, dt = _horizon_and_step(net, rho_e)
        for k in range(5):
            traj = sim.simulate(net, rng.uniform(0.0, rho_e), d, horizon=T, dt=dt)
            dip = float(np.diff(traj.states, axis=0).min())
            err = float(np.max(np.abs(traj.states[-1] - rho_e) / rho_e))
            worst_err = max(worst_err, err)
            if dip < -1e-9 * rho_e.max():
                dips += 1
                failures.append(("not monotone", n, k, dip))
            if err > 1e-3:
                failures.append(("not within 0.1%", n, k, err))
            ref = sim.simulate(net, sub_equilibrium_state(net, rho_e, rng), d, horizon=T, dt=dt)
            ref_err = float(np.max(np.abs(ref.states[-1] - rho_e) / rho_e))
            if float(np.diff(ref.states, axis=0).min()) < -1e-9 * rho_e.max() or ref_err > 1e-3:
                reference_dips += 1
    verdict(7, "monotone convergence to feasible equilibria from below", failures,
            f"uniform starts: {dips}/50 non-monotone, max rel error {worst_err:.1e}; "
            f"starts with nonnegative field: {reference_dips}/50 failures")


def test_criterion_8_merge_networks(freeway):
    rng = np.random.default_rng(8)
    nets = [freeway] + [generate.random_network(rng, merge_only=True) for _ in range(4)]
    failures, states = [], 0
    for net in nets:
        W = analysis.compartmental_weights(net).matrix(net)
        kern = dynamics.kernel(net)
        sampler = analysis.default_sampler(net)
        for _ in range(200):
            rho = sampler(rng)
            J = kern.jacobian(rho, dynamics.active_mode(net, rho).as_indices(net))
            states += 1
            check = analysis.is_compartmental(W @ J)
            if not check:
                failures.append(("compartmental", net.name, check))
    traces = 0
    for i in range(10):
        net = nets[i % len(nets)]
        if i % 3 == 0:
            d = {l: 1.5 * net.link[l].demand.sup for l in net.onramp_ids}
            traj = sim.simulate_compactified(net, None, d, horizon=5.0, dt=1e-3)
        else:
            d = generate.random_demand(net, rng)
            traj = sim.simulate(net, analysis.default_sampler(net)(rng), d, horizon=5.0, dt=1e-3)
        trace = analysis.lyapunov_trace(net, traj)
        traces += 1
        if not trace.nonincreasing:
            failures.append(("lyapunov", net.name, i, trace.max_increase, trace.slack))
    d = {l: 1.5 * freeway.link[l].demand.sup for l in freeway.onramp_ids}
    sampler = analysis.default_sampler(freeway)
    starts = [None] + [sampler(rng) for _ in range(9)]
    spread = analysis.settled_flow_spread(freeway, d, starts)
    if spread > 1e-3 * sim.capacity_scale(freeway):
        failures.append(("settled flows disagree", spread))
    verdict(8, "merge-only networks: compartmental weighting, descent and unique flows", failures,
            f"{states} states, {traces} traces, flow spread {spread:.2e}")


def test_criterion_9_lp_oracle():
    rng = np.random.default_rng(9)
    failures, networks, worst = [], 0, 0.0
    while networks < 20:
        net = generate.random_network(rng, n_junctions=(2, 5))
        if len(net.onramp_ids) > 4:
            continue
        d = generate.random_infeasible_demand(net, rng)
        plan = metering.optimal_metering(net, d)
        G = metering.discharge_matrix(net)
        crit = critical_flows(net)
        h = np.array([crit[l] for l in net.ordinary_ids])
        u = np.array([min(d[l], net.link[l].demand.sup) for l in net.onramp_ids])
        best, _ = lp_vertex_enumeration(np.ones(len(u)), G, h, u)
        gap = abs(plan.throughput - best)
        worst = max(worst, gap)
        if gap > 1e-8:
            failures.append((net.name, plan.throughput, best))
        networks += 1
    verdict(9, "simplex optimum against exhaustive vertex enumeration", failures,
            f"20 networks, max gap {worst:.1e}")
