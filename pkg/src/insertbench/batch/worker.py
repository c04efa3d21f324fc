"""Simulation worker: lease a task, run it, report the result, repeat."""
from __future__ import annotations

import logging
import threading
import time
import uuid

from .. import wire
from ..control import RemotePolicyClient
from .spec import ExperimentSpec, from_dict
from .tasks import Task, execute_task, task_scene

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 2


class WorkerCrash(RuntimeError):
    """Raised by fault injection to emulate a worker dying mid-lease."""


def _connect(endpoint: str, retries: int, backoff: float, timeout: float) -> wire.Channel | None:
    delay = backoff
    for attempt in range(retries + 1):
        try:
            return wire.Channel(endpoint, timeout=timeout)
        except OSError as exc:
            if attempt == retries:
                log.error("coordinator %s unreachable after %d attempts: %s", endpoint, attempt + 1, exc)
                return None
            time.sleep(delay)
            delay = min(delay * 2, 5.0)
    return None


class SimWorker:
    def __init__(
        self,
        endpoint: str,
        policy_endpoint: str | None = None,
        worker_id: str | None = None,
        retries: int = 5,
        backoff: float = 0.1,
        crash_after: int | None = None,
        request_timeout: float = 30.0,
        stop: threading.Event | None = None,
    ):
        self.endpoint = endpoint
        self.policy_endpoint = policy_endpoint
        self.worker_id = worker_id or f"sim-{uuid.uuid4().hex[:8]}"
        self.retries = retries
        self.backoff = backoff
        self.crash_after = crash_after
        self.request_timeout = request_timeout
        self.stop = stop or threading.Event()
        self.completed = 0
        self.spec: ExperimentSpec | None = None
        self.policy_client: RemotePolicyClient | None = None
        self._scene = None

    def _scene_for(self, task: Task):
        # without roughness the scene is the same for every task
        if self.spec.scene.roughness.Ra > 0:
            return task_scene(self.spec, task)
        if self._scene is None:
            self._scene = task_scene(self.spec, task)
        return self._scene

    def _register(self, ch: wire.Channel) -> bool:
        reply = ch.request(wire.REGISTER, {"worker_id": self.worker_id, "kind": "simulation", "capacity": 1}, timeout=self.request_timeout)
        if reply["type"] != wire.REGISTER:
            log.error("registration rejected: %s", reply.get("payload"))
            return False
        payload = reply["payload"]
        self.worker_id = payload["worker_id"]
        if self.spec is None:
            self.spec = from_dict(payload["spec"])
        endpoint = self.policy_endpoint or payload.get("policy_endpoint")
        if self.spec.controller.type == "policy" and endpoint and self.policy_client is None:
            self.policy_client = RemotePolicyClient(endpoint, deadline=self.spec.controller.policy.deadline)
        return True

    def run(self) -> int:
        ch = _connect(self.endpoint, self.retries, self.backoff, self.request_timeout)
        if ch is None:
            return EXIT_RUNTIME
        try:
            if not self._register(ch):
                return EXIT_RUNTIME
            while not self.stop.is_set():
                reply = ch.request(wire.LEASE_REQ, {"worker_id": self.worker_id}, timeout=self.request_timeout)
                rtype = reply["type"]
                if rtype == wire.DRAINED:
                    return EXIT_OK
                if rtype == wire.ERROR:
                    log.error("coordinator error: %s", reply.get("payload"))
                    return EXIT_RUNTIME
                payload = reply["payload"] or {}
                if payload.get("task") is None:
                    time.sleep(float(payload.get("retry_after", 0.05)))
                    continue
                task = Task.from_dict(payload["task"])
                if self.crash_after is not None and self.completed >= self.crash_after:
                    # die while holding the lease
                    raise WorkerCrash(f"{self.worker_id} crashed holding {task.task_id}")
                result = execute_task(self.spec, task, self.policy_client, self._scene_for(task))
                ack = ch.request(wire.RESULT, {"worker_id": self.worker_id, "task_id": task.task_id, "result": result.to_dict()}, timeout=self.request_timeout)
                if ack["type"] == wire.ERROR:
                    log.error("result rejected: %s", ack.get("payload"))
                    return EXIT_RUNTIME
                self.completed += 1
            return EXIT_OK
        except (wire.ConnectionClosed, OSError, wire.ProtocolError) as exc:
            log.error("worker %s lost the coordinator: %s", self.worker_id, exc)
            return EXIT_RUNTIME
        finally:
            ch.close()
            if self.policy_client is not None:
                self.policy_client.close()


def sim_worker_run(endpoint: str, policy_endpoint: str | None = None, **kw) -> int:
    """Run a worker until the queue drains. Returns a process exit code."""
    return SimWorker(endpoint, policy_endpoint, **kw).run()
