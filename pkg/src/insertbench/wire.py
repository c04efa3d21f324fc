"""Length-prefixed JSON framing.

Every message is a 4-byte big-endian length followed by that many bytes of
UTF-8 JSON. The JSON is an envelope ``{"type": ..., "id": ..., "payload": ...}``.
"""
from __future__ import annotations

import json
import socket
import struct
import threading

REGISTER = "REGISTER"
LEASE_REQ = "LEASE_REQ"
LEASE_GRANT = "LEASE_GRANT"
RESULT = "RESULT"
DRAINED = "DRAINED"
POLICY_REQ = "POLICY_REQ"
POLICY_RESP = "POLICY_RESP"
ERROR = "ERROR"
MESSAGE_TYPES = (REGISTER, LEASE_REQ, LEASE_GRANT, RESULT, DRAINED, POLICY_REQ, POLICY_RESP, ERROR)

MAX_MESSAGE_BYTES = 256 * 1024 * 1024
_HEADER = struct.Struct("!I")


class ProtocolError(RuntimeError):
    pass


class ConnectionClosed(ConnectionError):
    pass


def encode(msg_type: str, msg_id, payload) -> bytes:
    body = json.dumps({"type": msg_type, "id": msg_id, "payload": payload}, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(len(body)) + body


def decode(body: bytes) -> dict:
    try:
        msg = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable message: {exc}") from None
    if not isinstance(msg, dict) or "type" not in msg:
        raise ProtocolError("message envelope must be an object with a 'type' field")
    msg.setdefault("id", None)
    msg.setdefault("payload", None)
    return msg


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionClosed("peer closed the connection")
        buf += chunk
    return bytes(buf)


def recv_message(sock: socket.socket) -> dict:
    (length,) = _HEADER.unpack(_recv_exact(sock, _HEADER.size))
    if length > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"message of {length} bytes exceeds limit")
    return decode(_recv_exact(sock, length))


def send_message(sock: socket.socket, msg_type: str, msg_id=None, payload=None, lock: threading.Lock | None = None) -> None:
    data = encode(msg_type, msg_id, payload)
    if lock is None:
        sock.sendall(data)
    else:
        with lock:
            sock.sendall(data)


def parse_endpoint(endpoint: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    """'host:port' or ':port' or 'port' -> (host, port)."""
    text = str(endpoint).strip()
    if ":" in text:
        host, _, port = text.rpartition(":")
        host = host or default_host
    else:
        host, port = default_host, text
    try:
        return host, int(port)
    except ValueError:
        raise ValueError(f"bad endpoint {endpoint!r}; expected host:port") from None


def format_endpoint(host: str, port: int) -> str:
    return f"{host}:{port}"


class Channel:
    """Blocking request/response client over one TCP connection."""

    def __init__(self, endpoint: str, timeout: float | None = 10.0):
        host, port = parse_endpoint(endpoint)
        self.endpoint = endpoint
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._next_id = 0

    def request(self, msg_type: str, payload=None, timeout: float | None = None) -> dict:
        self._next_id += 1
        msg_id = self._next_id
        if timeout is not None:
            self.sock.settimeout(timeout)
        send_message(self.sock, msg_type, msg_id, payload)
        while True:
            reply = recv_message(self.sock)
            # replies to earlier, abandoned requests are skipped
            if reply.get("id") == msg_id:
                return reply

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
