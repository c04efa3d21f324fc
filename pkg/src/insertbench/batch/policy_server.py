"""Policy inference server.

Each connection gets a reader thread; requests are evaluated on a shared
thread pool so independent requests never queue behind each other, and
replies are written back under a per-connection lock. Replies carry the
request id, so a client may pipeline requests.
"""
from __future__ import annotations

import logging
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor

from .. import wire
from ..control import POLICIES, observation_from_payload
from ..core import ValidationError

log = logging.getLogger(__name__)


def make_policy(name: str):
    try:
        return POLICIES[name]()
    except KeyError:
        raise ValidationError(f"unknown policy {name!r}; available: {', '.join(sorted(POLICIES))}") from None


class PolicyServer:
    """Serves POLICY_REQ messages with `policy(obs) -> PolicyAction`.

    `deadline` (s) bounds server-side evaluation; a late action is replaced
    by an ERROR reply. `latency` adds an artificial delay per request, used
    to exercise client timeouts.
    """

    def __init__(self, policy, host: str = "127.0.0.1", port: int = 0, max_workers: int = 8, deadline: float | None = None, latency: float = 0.0):
        if isinstance(policy, str):
            policy = make_policy(policy)
        self.policy = policy
        self.deadline = deadline
        self.latency = latency
        self._listener = socket.create_server((host, port), reuse_port=False)
        self._listener.settimeout(0.1)
        self._pool = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="policy")
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)
        self._in_flight = 0
        self._draining = False
        self._closed = threading.Event()
        self._conns: set[socket.socket] = set()
        self._accept_thread: threading.Thread | None = None
        self.requests = 0
        self.errors = 0

    @property
    def endpoint(self) -> str:
        host, port = self._listener.getsockname()[:2]
        return wire.format_endpoint(host, port)

    def start(self) -> "PolicyServer":
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def serve_forever(self) -> None:
        self.start()
        self._closed.wait()

    def _accept_loop(self) -> None:
        while not self._closed.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._conns.add(conn)
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()

    def _reader(self, conn: socket.socket) -> None:
        wlock = threading.Lock()
        try:
            while True:
                try:
                    msg = wire.recv_message(conn)
                except wire.ProtocolError as exc:
                    self._error(conn, wlock, None, "protocol", str(exc))
                    continue
                if msg["type"] != wire.POLICY_REQ:
                    self._error(conn, wlock, msg["id"], "unknown_type", f"unsupported message type {msg['type']!r}")
                    continue
                with self._lock:
                    if self._draining:
                        refused = True
                    else:
                        refused = False
                        self._in_flight += 1
                if refused:
                    self._error(conn, wlock, msg["id"], "shutting_down", "server is draining")
                    continue
                self._pool.submit(self._handle, conn, wlock, msg)
        except (wire.ConnectionClosed, OSError):
            pass
        finally:
            with self._lock:
                self._conns.discard(conn)
            try:
                conn.close()
            except OSError:
                pass

    def _handle(self, conn, wlock, msg) -> None:
        try:
            t0 = time.monotonic()
            try:
                trial_id, obs = observation_from_payload(msg.get("payload") or {})
            except wire.ProtocolError as exc:
                self._error(conn, wlock, msg["id"], "malformed", str(exc))
                return
            if self.latency:
                time.sleep(self.latency)
            try:
                action = self.policy(obs)
            except Exception as exc:  # noqa: BLE001 - reported to the client
                self._error(conn, wlock, msg["id"], "policy", f"{type(exc).__name__}: {exc}")
                return
            if self.deadline is not None and time.monotonic() - t0 > self.deadline:
                self._error(conn, wlock, msg["id"], "deadline", "deadline exceeded")
                return
            with self._lock:
                self.requests += 1
            try:
                wire.send_message(conn, wire.POLICY_RESP, msg["id"], {"trial_id": trial_id, "action": action.pose_correction.tolist()}, lock=wlock)
            except OSError:
                pass
        finally:
            with self._lock:
                self._in_flight -= 1
                if self._in_flight == 0:
                    self._idle.notify_all()

    def _error(self, conn, wlock, msg_id, code: str, message: str) -> None:
        with self._lock:
            self.errors += 1
        try:
            wire.send_message(conn, wire.ERROR, msg_id, {"code": code, "message": message}, lock=wlock)
        except OSError:
            pass

    def shutdown(self, timeout: float = 10.0) -> None:
        """Graceful drain: refuse new requests, finish in-flight ones, close."""
        with self._lock:
            self._draining = True
            end = time.monotonic() + timeout
            while self._in_flight > 0 and time.monotonic() < end:
                self._idle.wait(timeout=end - time.monotonic())
            conns = list(self._conns)
        self._closed.set()
        try:
            self._listener.close()
        except OSError:
            pass
        for c in conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
                c.close()
            except OSError:
                pass
        self._pool.shutdown(wait=True)
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=1.0)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()


def policy_server_run(endpoint: str, policy, stop: threading.Event | None = None, **kw) -> PolicyServer:
    """Serve until `stop` is set (or forever). Returns the stopped server."""
    host, port = wire.parse_endpoint(endpoint)
    server = PolicyServer(policy, host, port, **kw).start()
    try:
        if stop is None:
            server._closed.wait()
        else:
            stop.wait()
    finally:
        server.shutdown()
    return server
