"""Command-line interface.

All numbers read or printed are SI: metres, radians, seconds, newtons,
newton-metres. Exit codes: 0 success, 1 validation error, 2 runtime or
network error, 3 incomplete result collection.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading

import numpy as np

from . import __version__
from .core import ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_INCOMPLETE = 3

ENV_COORDINATOR = "INSERTBENCH_COORDINATOR"
DEFAULT_COORDINATOR = "127.0.0.1:7800"
DEFAULT_POLICY = "127.0.0.1:7900"

UNITS = "Units: lengths in m, angles in rad (degrees only where the option says so), time in s, forces in N, torques in N*m."

log = logging.getLogger("insertbench")


def _coordinator_default() -> str:
    return os.environ.get(ENV_COORDINATOR, DEFAULT_COORDINATOR)


# run ------------------------------------------------------------------
def cmd_run(args) -> int:
    from .batch import IncompleteError, load_spec, write_report
    from .batch.coordinator import Coordinator
    from .batch.local import LocalCluster, task_queue
    from .batch.report import aggregate_report
    from . import wire

    spec = load_spec(args.spec)
    out_dir = args.out or spec.output.dir
    plots = spec.output.plots and not args.no_plots
    dump = spec.output.dump_series or args.dump_series
    if args.coordinator_only:
        host, port = wire.parse_endpoint(args.bind or _coordinator_default())
        coord = Coordinator(spec, task_queue(spec), host, port, policy_endpoints=args.policy_endpoint or ())
        print(f"coordinator listening on {coord.endpoint} with {len(coord.tasks)} tasks", file=sys.stderr, flush=True)
        results = coord.serve(args.timeout)
        if len(results) != len(coord.tasks):
            print(f"incomplete: collected {len(results)} of {len(coord.tasks)} results", file=sys.stderr)
            return EXIT_INCOMPLETE
        report = aggregate_report(list(results.values()), spec)
    else:
        try:
            run = LocalCluster(spec, workers=args.local_workers, mode=args.mode).run(args.timeout)
        except IncompleteError as exc:
            print(f"incomplete: {exc}", file=sys.stderr)
            return EXIT_INCOMPLETE
        report = run.report
        print(f"{report.n_trials} trials in {run.wall_time:.2f} s", file=sys.stderr)
    paths = write_report(report, out_dir, dump_series=dump, plots=plots)
    m = report.metrics
    print(f"success rate {m.success_rate:.3f}; report written to {paths['json']}", file=sys.stderr)
    return EXIT_OK


# worker / policy --------------------------------------------------------
def cmd_worker(args) -> int:
    from .batch.worker import sim_worker_run

    return sim_worker_run(
        args.coordinator or _coordinator_default(),
        args.policy,
        worker_id=args.worker_id,
        retries=args.retries,
    )


def cmd_policy(args) -> int:
    import signal

    from .batch.policy_server import PolicyServer, make_policy
    from . import wire

    policy = make_policy(args.name)
    host, port = wire.parse_endpoint(args.bind)
    server = PolicyServer(policy, host, port, max_workers=args.threads, deadline=args.deadline).start()
    print(f"policy {args.name!r} serving on {server.endpoint}", file=sys.stderr, flush=True)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()
    server.shutdown()
    print(f"served {server.requests} requests", file=sys.stderr)
    return EXIT_OK


# metrics ----------------------------------------------------------------
def metrics_for_files(paths, cutoff_hz: float | None, epsilon: float) -> dict:
    """Per-file metric vectors plus the normalized scoreboard across files.

    Each file is one recorded insertion, treated as successful; its
    completion time is the recorded duration.
    """
    from .metrics import DEFAULT_CUTOFF_HZ, FilterConfig, MetricVector, normalize_scoreboard, trial_metrics
    from .sim import read_series_csv

    cfg = FilterConfig(cutoff_hz or DEFAULT_CUTOFF_HZ, enabled=cutoff_hz is not None)
    vectors = {}
    for path in paths:
        series = read_series_csv(path)
        m = trial_metrics(series, cfg)
        vectors[str(path)] = MetricVector(m["E_z"], m["E_xy"], m["S_z"], m["S_xy"], len(series) * series.dt, 1.0)
    board = normalize_scoreboard(vectors, epsilon)
    return {
        "filter": {"enabled": cfg.enabled, "cutoff_hz": cfg.cutoff_hz if cfg.enabled else None},
        "inputs": {k: v.to_dict() for k, v in vectors.items()},
        "scoreboard": board.scores,
    }


def cmd_metrics(args) -> int:
    cutoff = None if args.no_filter else args.filter_cutoff
    out = metrics_for_files(args.csv, cutoff, args.epsilon)
    json.dump(out, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


# bench ------------------------------------------------------------------
def cmd_bench(args) -> int:
    from .batch import load_spec
    from .batch.bench import run_bench

    if args.steps < 1:
        raise ValidationError("--steps must be >= 1")
    spec = load_spec(args.spec)
    rows = run_bench(spec, args.steps, args.repeats)
    print("spheres,steps,elapsed_s,steps_per_s,mean_contacts")
    for r in rows:
        print(f"{r.sphere_count},{r.steps},{r.elapsed:.6f},{r.steps_per_s:.1f},{r.mean_contacts:.3f}")
    return EXIT_OK


# decompose --------------------------------------------------------------
def cmd_decompose(args) -> int:
    from .decomp import CylinderSpec, RoughnessSpec, apply_roughness, decompose_cylinder_lateral, hole_surface_spheres, save_sphere_set

    rng = np.random.default_rng(args.seed)
    if args.hole:
        spheres = hole_surface_spheres(args.radius, args.height, args.count, args.sphere_radius)
    else:
        spheres = decompose_cylinder_lateral(CylinderSpec(args.radius, args.height), args.count, args.sphere_radius)
    if args.Ra > 0:
        spheres = apply_roughness(spheres, RoughnessSpec(args.Ra, args.distribution), rng=rng)
    save_sphere_set(spheres, args.out)
    print(f"wrote {len(spheres.radii)} spheres to {args.out}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="insertbench",
        description="Peg-in-hole insertion benchmark. " + UNITS,
        epilog="Exit codes: 0 ok, 1 validation error, 2 runtime/network error, 3 incomplete collection.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment spec and write the report", description="Run an experiment. " + UNITS)
    r.add_argument("spec", help="experiment YAML file")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--local-workers", type=int, metavar="N", help="simulation workers started on this machine (default: topology.sim_workers)")
    g.add_argument("--coordinator-only", action="store_true", help="serve the task queue and wait for external workers")
    r.add_argument("--mode", choices=("process", "thread"), help="local worker mode (default: topology.worker_mode)")
    r.add_argument("--bind", help=f"coordinator address for --coordinator-only (default ${ENV_COORDINATOR} or {DEFAULT_COORDINATOR})")
    r.add_argument("--policy-endpoint", action="append", metavar="HOST:PORT", help="policy server for --coordinator-only (repeatable)")
    r.add_argument("--out", help="output directory (default: output.dir)")
    r.add_argument("--timeout", type=float, help="give up after this many seconds")
    r.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    r.add_argument("--dump-series", action="store_true", help="also write each trial's wrench series as CSV")
    r.set_defaults(func=cmd_run)

    w = sub.add_parser("worker", help="run a simulation worker", description="Pull tasks from a coordinator until it drains. " + UNITS)
    w.add_argument("--coordinator", help=f"coordinator HOST:PORT (default ${ENV_COORDINATOR} or {DEFAULT_COORDINATOR})")
    w.add_argument("--policy", help="policy server HOST:PORT (default: assigned by the coordinator)")
    w.add_argument("--worker-id")
    w.add_argument("--retries", type=int, default=5, help="connection attempts before giving up")
    w.set_defaults(func=cmd_worker)

    from .control import POLICIES

    pol = sub.add_parser("policy", help="serve a policy over TCP", description="Serve observation to action requests. " + UNITS)
    pol.add_argument("name", help=f"policy name ({', '.join(sorted(POLICIES))})")
    pol.add_argument("--bind", default=DEFAULT_POLICY, help=f"listen address (default {DEFAULT_POLICY})")
    pol.add_argument("--threads", type=int, default=8, help="concurrent evaluations")
    pol.add_argument("--deadline", type=float, help="per-request server-side deadline in s")
    pol.set_defaults(func=cmd_policy)

    m = sub.add_parser(
        "metrics",
        help="force metrics for recorded wrench CSV files",
        description="Compute E (N^2), S (N/s) and duration (s) for each t,fx,fy,fz,tx,ty,tz CSV and a normalized scoreboard. " + UNITS,
    )
    m.add_argument("csv", nargs="+", help="wrench series files")
    m.add_argument("--filter-cutoff", type=float, default=30.0, metavar="HZ", help="low-pass cutoff before the smoothness metric (default 30 Hz)")
    m.add_argument("--no-filter", action="store_true", help="disable the low-pass filter")
    m.add_argument("--epsilon", type=float, default=1e-3, help="stabilizer added in score normalization")
    m.set_defaults(func=cmd_metrics)

    b = sub.add_parser("bench", help="physics stepping throughput", description="Steps per second and mean contact count for each scene.bench_sphere_counts entry. " + UNITS)
    b.add_argument("spec", help="experiment YAML file")
    b.add_argument("--steps", type=int, default=1000)
    b.add_argument("--repeats", type=int, default=5, help="best-of repeats per row")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("decompose", help="write a sphere decomposition to CSV", description="Sphere-set generation for a cylinder side or a bore wall. " + UNITS)
    d.add_argument("--radius", type=float, required=True, help="cylinder or bore radius in m")
    d.add_argument("--height", type=float, required=True, help="cylinder height or bore depth in m")
    d.add_argument("--count", type=int, required=True)
    d.add_argument("--sphere-radius", type=float, default=1e-3)
    d.add_argument("--hole", action="store_true", help="bore wall instead of peg side")
    d.add_argument("--Ra", type=float, default=0.0, help="surface roughness Ra in m")
    d.add_argument("--distribution", choices=("gaussian", "uniform"), default="gaussian")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decompose)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ConnectionError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
