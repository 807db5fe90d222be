"""Command-line interface: ``trafficnet <command> NETWORK [options]``.

NETWORK is a JSON network file or the name of a bundled example
(``example1``, ``example2``, ``freeway``).

Exit codes: 0 success, 1 invalid network or failed check, 2 bad arguments,
3 flows did not settle, 4 metering plan failed verification.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, dynamics, equilibrium, metering, sim
from .errors import NotConverged, TrafficNetError, VerificationFailed
from .examples import resolve_network
from .network import Network, validate

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_VERIFY = 0, 1, 2, 3, 4
OUTPUT_ENV = "TRAFFICNET_OUTPUT_DIR"


class UsageError(Exception):
    pass


def _positive(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not (x > 0 and math.isfinite(x)):
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return x


def _demand_pair(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected ONRAMP=FLOW, got {text!r}")
    try:
        x = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"flow for {key!r} is not a number: {value!r}")
    if not x >= 0:
        raise argparse.ArgumentTypeError(f"flow for {key!r} must be nonnegative")
    return key, x


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trafficnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, demand=True):
        sp.add_argument("network", help="network JSON file or bundled example name")
        if demand:
            sp.add_argument("--demand", action="append", type=_demand_pair, default=[], metavar="ID=FLOW",
                            help="onramp input flow (veh/hr); overrides the file's demands")
        return sp

    common(sub.add_parser("validate", help="check the network against the modelling assumptions"), demand=False)

    s = common(sub.add_parser("simulate", help="integrate the dynamics and write a trajectory CSV"))
    s.add_argument("--horizon", type=_positive, default=1.0, help="simulated hours (default 1)")
    s.add_argument("--dt", type=_positive, default=1e-3, help="step size in hours (default 1e-3)")
    s.add_argument("--record-every", type=int, default=1, help="keep every n-th step")
    s.add_argument("--compact", action="store_true", help="compactified onramp coordinates")
    s.add_argument("--output", "-o", help=f"CSV path (default: ${OUTPUT_ENV}/<network>-trajectory.csv or stdout)")

    e = common(sub.add_parser("equilibrium", help="classify the input flow and compute its equilibrium"))
    e.add_argument("--tol", type=_positive, help="settling tolerance (default 1e-4 x max capacity)")
    e.add_argument("--max-horizon", type=_positive, default=200.0)
    e.add_argument("--certify", action="store_true", help="check the freeflow Jacobian when strictly feasible")

    m = common(sub.add_parser("meter", help="throughput-optimal ramp metering"))
    m.add_argument("--verify", action="store_true", help="simulate the metered network and check the prediction")

    a = common(sub.add_parser("analyze", help="cooperativity scan and, for merge networks, Lyapunov checks"))
    a.add_argument("--samples", type=int, default=1000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--horizon", type=_positive, default=5.0, help="Lyapunov trajectory length in hours")
    a.add_argument("--output", "-o", help="write the V(t) trace as CSV")
    return p


def _load(args) -> Network:
    try:
        net = resolve_network(args.network)
    except (FileNotFoundError, KeyError):
        raise UsageError(f"no such network file or bundled example: {args.network}")
    except (ValueError, TypeError) as exc:
        raise UsageError(f"cannot read network {args.network}: {exc}")
    return net


def _demand(net: Network, pairs) -> dict[str, float]:
    d = {l: float(net.demands.get(l, 0.0)) for l in net.onramp_ids}
    for key, x in pairs:
        if key not in d:
            raise UsageError(f"{key!r} is not an onramp of this network (onramps: {', '.join(net.onramp_ids)})")
        d[key] = x
    return d


def _output_path(explicit, net: Network, args, suffix: str):
    if explicit:
        return Path(explicit)
    root = os.environ.get(OUTPUT_ENV)
    if root:
        Path(root).mkdir(parents=True, exist_ok=True)
        return Path(root) / f"{Path(args.network).stem}-{suffix}.csv"
    return None


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6g}"


# -- commands --------------------------------------------------------------


def cmd_validate(net, args, out) -> int:
    print(validate(net), file=out)
    return EXIT_OK


def cmd_simulate(net, args, out) -> int:
    if args.record_every < 1:
        raise UsageError("--record-every must be at least 1")
    d = _demand(net, args.demand)
    if args.compact:
        traj = sim.simulate_compactified(net, None, d, args.horizon, args.dt, args.record_every)
    else:
        traj = sim.simulate(net, None, d, args.horizon, args.dt, args.record_every)
    path = _output_path(args.output, net, args, "trajectory")
    if path is None:
        traj.to_csv(out)
    else:
        traj.to_csv(path)
        print(f"wrote {len(traj.times)} samples to {path}", file=out)
    return EXIT_OK


def cmd_equilibrium(net, args, out) -> int:
    d = _demand(net, args.demand)
    opts = {"max_horizon": args.max_horizon}
    if args.tol:
        opts["tol"] = args.tol
    try:
        result = equilibrium.find_equilibrium(net, d, certify=args.certify, **opts)
    except NotConverged as exc:
        if exc.result is not None:
            print(exc.result.report(net), file=out)
        print(f"not converged: {exc}", file=out)
        return EXIT_NOT_CONVERGED
    print(result.report(net), file=out)
    return EXIT_OK


def cmd_meter(net, args, out) -> int:
    d = _demand(net, args.demand)
    plan = metering.optimal_metering(net, d)
    print(plan.report(net), file=out)
    if not args.verify:
        return EXIT_OK
    try:
        outcome = metering.verify_plan(net, d, plan)
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=out)
        for l, delta in exc.deltas.items():
            print(f"  {l}: {_fmt(delta)}", file=out)
        return EXIT_VERIFY
    print("verification: passed", file=out)
    dens = ", ".join(f"{l}={_fmt(outcome.densities[l])}" for l in net.link_order)
    print(f"settled densities: {dens}", file=out)
    print(f"settled throughput: {_fmt(outcome.throughput)}", file=out)
    return EXIT_OK


def cmd_analyze(net, args, out) -> int:
    if args.samples < 0:
        raise UsageError("--samples must be nonnegative")
    report = analysis.cooperativity_scan(net, n_samples=args.samples, rng=args.seed)
    print(report.summary(), file=out)
    try:
        weights = analysis.compartmental_weights(net)
    except TrafficNetError as exc:
        print(f"compartmental checks skipped: {exc}", file=out)
        return EXIT_OK
    print("compartmental weights: " + ", ".join(f"{l}={_fmt(w)}" for l, w in weights.weights.items()), file=out)
    kern = dynamics.kernel(net)
    rng = np.random.default_rng(args.seed)
    sampler = analysis.default_sampler(net)
    W = weights.matrix(net)
    failures = 0
    for _ in range(min(args.samples, 200)):
        rho = sampler(rng)
        J = kern.jacobian(rho, dynamics.active_mode(net, rho).as_indices(net))
        failures += not analysis.is_compartmental(W @ J)
    print(f"weighted jacobian compartmental at sampled states: {'yes' if failures == 0 else f'no ({failures} failures)'}",
          file=out)
    d = _demand(net, args.demand)
    traj = sim.simulate_compactified(net, None, d, args.horizon, 1e-3, record_every=10)
    trace = analysis.lyapunov_trace(net, traj, weights)
    print(f"lyapunov V(0)={_fmt(trace.values[0])} V(end)={_fmt(trace.values[-1])} "
          f"nonincreasing={trace.nonincreasing}", file=out)
    path = _output_path(args.output, net, args, "lyapunov")
    if path is not None:
        path.write_text(trace.to_csv())
        print(f"wrote V(t) to {path}", file=out)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "equilibrium": cmd_equilibrium,
    "meter": cmd_meter,
    "analyze": cmd_analyze,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        net = _load(args)
        report = validate(net)
        if not report.ok:
            print(report, file=out)
            return EXIT_INVALID
        return COMMANDS[args.command](net, args, out)
    except UsageError as exc:
        print(f"trafficnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrafficNetError as exc:
        print(f"trafficnet: {exc}", file=sys.stderr)
        return EXIT_INVALID
