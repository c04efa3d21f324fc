"""Task-queue coordinator.

Simulation workers register, then pull one task lease at a time. A lease is
returned to the queue when its worker disconnects or when it expires. The
first result reported for a task wins; later duplicates are logged and
dropped. All queue and result mutations happen under one lock.
"""
from __future__ import annotations

import collections
import itertools
import logging
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field

from ..core import TrialResult, ValidationError
from .. import wire
from .spec import ExperimentSpec
from .tasks import Task

log = logging.getLogger(__name__)

SIMULATION = "simulation"
POLICY = "policy"


@dataclass
class WorkerInfo:
    worker_id: str
    kind: str = SIMULATION
    capacity: int = 1
    last_seen: float = field(default_factory=time.monotonic)
    policy_endpoint: str | None = None
    connected: bool = True


@dataclass
class Lease:
    task: Task
    worker_id: str
    expires: float


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class Coordinator:
    def __init__(
        self,
        spec: ExperimentSpec,
        tasks: list[Task],
        host: str = "127.0.0.1",
        port: int = 0,
        lease_timeout: float | None = None,
        policy_endpoints=(),
        retry_after: float = 0.05,
    ):
        if not tasks:
            raise ValidationError("coordinator needs at least one task")
        ids = [t.task_id for t in tasks]
        if len(set(ids)) != len(ids):
            raise ValidationError("task ids must be unique")
        self.spec = spec
        self.spec_dict = spec.to_dict()
        self.tasks = {t.task_id: t for t in tasks}
        self.lease_timeout = float(lease_timeout if lease_timeout is not None else spec.topology.lease_timeout)
        self.policy_endpoints = list(policy_endpoints)
        self.retry_after = retry_after

        self._lock = threading.Lock()
        self._done = threading.Condition(self._lock)
        self._queue: collections.deque[Task] = collections.deque(tasks)
        self._leases: dict[str, Lease] = {}
        self._results: dict[str, TrialResult] = {}
        self.workers: dict[str, WorkerInfo] = {}
        self._rr = itertools.count()
        self.duplicates = 0
        self.requeued = 0
        self.executions = collections.Counter()
        self._live_connections = 0

        coordinator = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                coordinator._serve_connection(self.request)

        self._server = _Server((host, port), Handler, bind_and_activate=True)
        self._thread: threading.Thread | None = None
        self._reaper: threading.Thread | None = None
        self._stopping = threading.Event()

    # lifecycle ----------------------------------------------------------
    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return wire.format_endpoint(host, port)

    def start(self) -> "Coordinator":
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()
        self._reaper = threading.Thread(target=self._reap_loop, daemon=True)
        self._reaper.start()
        return self

    def wait(self, timeout: float | None = None) -> bool:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._done:
            while not self.complete:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return False
                self._done.wait(timeout=0.2 if remaining is None else min(0.2, remaining))
        return True

    def stop(self, grace: float = 2.0) -> None:
        """Stop serving. Connected workers get up to `grace` seconds to pick
        up their DRAINED message first."""
        end = time.monotonic() + grace
        while time.monotonic() < end:
            with self._lock:
                if self._live_connections == 0:
                    break
            time.sleep(0.02)
        self._stopping.set()
        self._server.shutdown()
        self._server.server_close()

    def serve(self, timeout: float | None = None) -> dict[str, TrialResult]:
        """Run to completion and return the results keyed by task id."""
        if self._thread is None:
            self.start()
        try:
            self.wait(timeout)
        finally:
            self.stop()
        return self.results()

    # state --------------------------------------------------------------
    @property
    def complete(self) -> bool:
        return len(self._results) == len(self.tasks)

    def results(self) -> dict[str, TrialResult]:
        with self._lock:
            return dict(self._results)

    def result_count(self) -> int:
        with self._lock:
            return len(self._results)

    def _requeue_expired(self, now: float) -> None:
        expired = [tid for tid, lease in self._leases.items() if lease.expires <= now]
        for tid in expired:
            lease = self._leases.pop(tid)
            if tid not in self._results:
                log.warning("lease on %s held by %s expired; re-queueing", tid, lease.worker_id)
                self._queue.appendleft(lease.task)
                self.requeued += 1

    def _requeue_worker(self, worker_id: str) -> None:
        for tid in [tid for tid, lease in self._leases.items() if lease.worker_id == worker_id]:
            lease = self._leases.pop(tid)
            if tid not in self._results:
                log.warning("worker %s left while holding %s; re-queueing", worker_id, tid)
                self._queue.appendleft(lease.task)
                self.requeued += 1

    def _reap_loop(self) -> None:
        while not self._stopping.wait(0.1):
            with self._lock:
                self._requeue_expired(time.monotonic())

    # protocol -----------------------------------------------------------
    def _register(self, payload: dict) -> dict:
        worker_id = str(payload.get("worker_id") or f"w{len(self.workers)}")
        kind = payload.get("kind", SIMULATION)
        if kind not in (SIMULATION, POLICY):
            raise ValidationError(f"unknown worker kind {kind!r}")
        info = self.workers.get(worker_id)
        if info is None:
            info = WorkerInfo(worker_id, kind, int(payload.get("capacity", 1)))
            if self.policy_endpoints and kind == SIMULATION:
                info.policy_endpoint = self.policy_endpoints[next(self._rr) % len(self.policy_endpoints)]
            self.workers[worker_id] = info
        info.connected = True
        info.last_seen = time.monotonic()
        return {
            "worker_id": worker_id,
            "spec": self.spec_dict,
            "policy_endpoint": info.policy_endpoint,
            "lease_timeout": self.lease_timeout,
        }

    def _lease(self, worker_id: str) -> tuple[str, dict]:
        now = time.monotonic()
        self._requeue_expired(now)
        if self.complete:
            return wire.DRAINED, {}
        while self._queue:
            task = self._queue.popleft()
            if task.task_id in self._results:
                continue
            self._leases[task.task_id] = Lease(task, worker_id, now + self.lease_timeout)
            self.executions[task.task_id] += 1
            return wire.LEASE_GRANT, {"task": task.to_dict(), "lease_timeout": self.lease_timeout}
        return wire.LEASE_GRANT, {"task": None, "retry_after": self.retry_after}

    def _result(self, worker_id: str, payload: dict) -> dict:
        tid = str(payload["task_id"])
        if tid not in self.tasks:
            raise ValidationError(f"unknown task {tid!r}")
        lease = self._leases.get(tid)
        if lease is not None and lease.worker_id == worker_id:
            del self._leases[tid]
        if tid in self._results:
            self.duplicates += 1
            log.info("duplicate result for %s from %s ignored", tid, worker_id)
            return {"task_id": tid, "accepted": False}
        self._results[tid] = TrialResult.from_dict(payload["result"])
        if self.complete:
            self._done.notify_all()
        return {"task_id": tid, "accepted": True}

    def _dispatch(self, msg: dict, session: dict) -> tuple[str, dict]:
        mtype = msg["type"]
        payload = msg.get("payload") or {}
        with self._lock:
            if mtype == wire.REGISTER:
                reply = self._register(payload)
                session["worker_id"] = reply["worker_id"]
                return wire.REGISTER, reply
            if mtype in (wire.LEASE_REQ, wire.RESULT):
                worker_id = payload.get("worker_id", session.get("worker_id"))
                if worker_id is None or worker_id not in self.workers or session.get("worker_id") != worker_id:
                    return wire.ERROR, {"code": "unknown_worker", "message": f"worker {worker_id!r} is not registered"}
                self.workers[worker_id].last_seen = time.monotonic()
                if mtype == wire.LEASE_REQ:
                    return self._lease(worker_id)
                return wire.RESULT, self._result(worker_id, payload)
        return wire.ERROR, {"code": "unknown_type", "message": f"unsupported message type {mtype!r}"}

    def _serve_connection(self, sock: socket.socket) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        session: dict = {}
        with self._lock:
            self._live_connections += 1
        try:
            while not self._stopping.is_set():
                try:
                    msg = wire.recv_message(sock)
                except wire.ProtocolError as exc:
                    wire.send_message(sock, wire.ERROR, None, {"code": "protocol", "message": str(exc)})
                    continue
                try:
                    rtype, payload = self._dispatch(msg, session)
                except (ValidationError, KeyError, TypeError, ValueError) as exc:
                    rtype, payload = wire.ERROR, {"code": "invalid", "message": str(exc)}
                wire.send_message(sock, rtype, msg.get("id"), payload)
        except (wire.ConnectionClosed, OSError):
            pass
        finally:
            with self._lock:
                self._live_connections -= 1
                wid = session.get("worker_id")
                if wid is not None and wid in self.workers:
                    self.workers[wid].connected = False
                    self._requeue_worker(wid)


def coordinator_serve(spec: ExperimentSpec, queue: list[Task], host: str = "127.0.0.1", port: int = 0, policy_endpoints=(), timeout: float | None = None):
    """Serve `queue` until every task has a result; returns the aggregated report."""
    from .report import aggregate_report

    coord = Coordinator(spec, queue, host, port, policy_endpoints=policy_endpoints)
    results = coord.serve(timeout)
    return aggregate_report(list(results.values()), spec)
