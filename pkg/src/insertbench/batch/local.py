"""Run a whole experiment on one machine: coordinator, simulation workers and
policy servers as threads or as forked processes, all talking TCP over
loopback exactly as they would across machines."""
from __future__ import annotations

import logging
import multiprocessing as mp
import os
import signal
import threading
import time
from dataclasses import dataclass, field

from ..core import RngStream, TrialResult, ValidationError
from .coordinator import Coordinator
from .policy_server import PolicyServer, make_policy
from .report import ExperimentReport, aggregate_report
from .spec import ExperimentSpec
from .tasks import generate_tasks, shuffle_tasks
from .worker import EXIT_RUNTIME, SimWorker, WorkerCrash

log = logging.getLogger(__name__)

# stream id reserved for the queue shuffle, disjoint from per-task streams
SHUFFLE_STREAM = 2**31
EXIT_CRASHED = 70


class IncompleteError(RuntimeError):
    """Not every task produced a result."""

    def __init__(self, collected: int, expected: int):
        super().__init__(f"collected {collected} of {expected} results")
        self.collected = collected
        self.expected = expected


def task_queue(spec: ExperimentSpec):
    return shuffle_tasks(generate_tasks(spec), RngStream(spec.seed, SHUFFLE_STREAM).generator())


# process entry points --------------------------------------------------
def _policy_proc(name: str, deadline, latency: float, out: "mp.Queue") -> None:
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    server = PolicyServer(make_policy(name), deadline=deadline, latency=latency).start()
    out.put(("endpoint", server.endpoint))
    stop.wait()
    server.shutdown()
    out.put(("requests", server.requests))
    out.close()
    out.join_thread()
    os._exit(0)


def _worker_proc(endpoint: str, worker_id: str, crash_after, listener_fd) -> None:
    if listener_fd is not None:
        try:
            os.close(listener_fd)
        except OSError:
            pass
    logging.getLogger().setLevel(logging.ERROR)
    try:
        code = SimWorker(endpoint, worker_id=worker_id, crash_after=crash_after).run()
    except WorkerCrash:
        code = EXIT_CRASHED
    except BaseException:  # noqa: BLE001 - never fall back into the parent's code
        code = EXIT_RUNTIME
    os._exit(code)


@dataclass
class ClusterRun:
    report: ExperimentReport
    wall_time: float
    policy_requests: list[int] = field(default_factory=list)
    worker_exit_codes: list[int] = field(default_factory=list)
    duplicates: int = 0
    requeued: int = 0
    executions: dict = field(default_factory=dict)


class LocalCluster:
    """Coordinator plus `workers` simulation workers and `policy_servers`
    policy servers (policy controllers only).

    `crash_after` maps worker index -> number of results after which that
    worker dies while holding its next lease.
    """

    def __init__(
        self,
        spec: ExperimentSpec,
        workers: int | None = None,
        policy_servers: int | None = None,
        mode: str | None = None,
        crash_after: dict[int, int] | None = None,
        lease_timeout: float | None = None,
        policy_latency: float = 0.0,
        tasks=None,
    ):
        self.spec = spec
        self.n_workers = int(workers if workers is not None else spec.topology.sim_workers)
        self.n_policy = int(policy_servers if policy_servers is not None else spec.topology.policy_servers)
        self.mode = mode or spec.topology.worker_mode
        if self.n_workers < 1:
            raise ValidationError("need at least one simulation worker")
        if self.mode not in ("thread", "process"):
            raise ValidationError(f"unknown worker mode {self.mode!r}")
        self.uses_policy = spec.controller.type == "policy"
        if self.uses_policy:
            if self.n_policy < 1:
                raise ValidationError("policy controller needs at least one policy server")
            make_policy(spec.controller.policy.name)
        self.crash_after = dict(crash_after or {})
        self.lease_timeout = lease_timeout
        self.policy_latency = policy_latency
        self.tasks = list(tasks) if tasks is not None else task_queue(spec)

    def run(self, timeout: float | None = None) -> ClusterRun:
        t0 = time.perf_counter()
        if self.mode == "thread":
            out = self._run_threads(timeout)
        else:
            out = self._run_processes(timeout)
        results, coord, requests, codes = out
        wall = time.perf_counter() - t0
        if len(results) != len(self.tasks):
            raise IncompleteError(len(results), len(self.tasks))
        report = aggregate_report(list(results.values()), self.spec)
        return ClusterRun(report, wall, requests, codes, coord.duplicates, coord.requeued, dict(coord.executions))

    def _wait(self, coord: Coordinator, alive, timeout) -> None:
        end = None if timeout is None else time.monotonic() + timeout
        while not coord.wait(0.1):
            if not alive():
                # every worker is gone; nothing more can arrive
                break
            if end is not None and time.monotonic() > end:
                break

    def _run_threads(self, timeout):
        servers = []
        if self.uses_policy:
            p = self.spec.controller.policy
            servers = [PolicyServer(make_policy(p.name), latency=self.policy_latency).start() for _ in range(self.n_policy)]
        coord = Coordinator(self.spec, self.tasks, lease_timeout=self.lease_timeout, policy_endpoints=[s.endpoint for s in servers]).start()
        codes = [None] * self.n_workers

        def target(i):
            try:
                codes[i] = SimWorker(coord.endpoint, worker_id=f"sim{i:03d}", crash_after=self.crash_after.get(i)).run()
            except WorkerCrash:
                codes[i] = EXIT_CRASHED

        threads = [threading.Thread(target=target, args=(i,), daemon=True) for i in range(self.n_workers)]
        for t in threads:
            t.start()
        try:
            self._wait(coord, lambda: any(t.is_alive() for t in threads), timeout)
        finally:
            coord.stop(grace=5.0)
            for t in threads:
                t.join(timeout=5.0)
            for s in servers:
                s.shutdown()
        return coord.results(), coord, [s.requests for s in servers], codes

    def _run_processes(self, timeout):
        ctx = mp.get_context("fork")
        # policy servers are forked first, before this process starts any thread
        pprocs, queues, endpoints = [], [], []
        if self.uses_policy:
            p = self.spec.controller.policy
            for _ in range(self.n_policy):
                q = ctx.Queue()
                proc = ctx.Process(target=_policy_proc, args=(p.name, None, self.policy_latency, q), daemon=True)
                proc.start()
                pprocs.append(proc)
                queues.append(q)
            for q in queues:
                kind, ep = q.get(timeout=30)
                endpoints.append(ep)
        coord = Coordinator(self.spec, self.tasks, lease_timeout=self.lease_timeout, policy_endpoints=endpoints)
        listener_fd = coord._server.fileno()
        wprocs = []
        for i in range(self.n_workers):
            proc = ctx.Process(target=_worker_proc, args=(coord.endpoint, f"sim{i:03d}", self.crash_after.get(i), listener_fd), daemon=True)
            proc.start()
            wprocs.append(proc)
        coord.start()
        requests = []
        try:
            self._wait(coord, lambda: any(p.is_alive() for p in wprocs), timeout)
        finally:
            coord.stop(grace=5.0)
            for proc in wprocs:
                proc.join(timeout=5.0)
                if proc.is_alive():
                    proc.kill()
                    proc.join()
            for proc in pprocs:
                proc.terminate()
            for proc, q in zip(pprocs, queues):
                try:
                    kind, n = q.get(timeout=10)
                    requests.append(int(n))
                except Exception:  # noqa: BLE001
                    requests.append(-1)
                proc.join(timeout=5.0)
        return coord.results(), coord, requests, [p.exitcode for p in wprocs]


def run_experiment(spec: ExperimentSpec, workers: int | None = None, mode: str | None = None, timeout: float | None = None, **kw) -> ClusterRun:
    """Run `spec` to completion on a local cluster."""
    return LocalCluster(spec, workers=workers, mode=mode, **kw).run(timeout)


def results_by_id(results) -> dict[str, TrialResult]:
    return {r.trial_id: r for r in results}
