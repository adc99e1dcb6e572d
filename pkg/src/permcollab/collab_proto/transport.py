"""Byte-stream transports: in-process loopback with fault injection, and TCP.

Both expose the same minimal connection surface (`send`, `recv`, `close`),
so the protocol layer never knows which one it is running on.  The loopback
transport exists for tests and simulations: a `FaultPlan` can cut a
direction dead after a byte budget (the peer then sees EOF, exactly like a
dropped connection) or flip bits at chosen stream offsets (delivered
corrupted, like a lossy channel without integrity checks).
"""

from __future__ import annotations

import socket
import threading
from collections import deque
from dataclasses import dataclass, field

from ..errors import TransportError


@dataclass(frozen=True)
class FaultPlan:
    """Deterministic faults applied to one direction of a loopback connection.

    drop_after_bytes: deliver exactly this many bytes, then kill the direction;
        the sender gets a TransportError, the receiver sees EOF.
    corrupt_at: stream offsets whose byte is XORed with corrupt_mask in flight.
    """

    drop_after_bytes: int | None = None
    corrupt_at: frozenset = frozenset()
    corrupt_mask: int = 0xFF

    def __post_init__(self):
        object.__setattr__(self, "corrupt_at", frozenset(self.corrupt_at))
        if self.drop_after_bytes is not None and self.drop_after_bytes < 0:
            raise ValueError("drop_after_bytes must be >= 0")
        if not 0 <= self.corrupt_mask <= 0xFF:
            raise ValueError("corrupt_mask must be a byte")


class _Pipe:
    """One direction of a loopback connection: a byte queue with EOF."""

    def __init__(self):
        self._chunks: deque[bytes] = deque()
        self._eof = False
        self._cond = threading.Condition()

    def push(self, data: bytes) -> None:
        with self._cond:
            if data:
                self._chunks.append(data)
            self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self._eof = True
            self._cond.notify_all()

    def pull(self, n: int, timeout: float | None) -> bytes:
        with self._cond:
            while not self._chunks and not self._eof:
                if not self._cond.wait(timeout):
                    raise TransportError("loopback recv timed out")
            if not self._chunks:
                return b""
            head = self._chunks.popleft()
            if len(head) > n:
                self._chunks.appendleft(head[n:])
                head = head[:n]
            return head


class LoopbackConnection:
    """One endpoint of an in-process duplex stream."""

    def __init__(self, out_pipe: _Pipe, in_pipe: _Pipe, fault: FaultPlan | None, timeout: float | None):
        self._out = out_pipe
        self._in = in_pipe
        self._fault = fault
        self._sent = 0
        self._timeout = timeout
        self._closed = False

    def send(self, data: bytes) -> None:
        if self._closed:
            raise TransportError("send on closed connection")
        fault = self._fault
        if fault is not None:
            if fault.corrupt_at:
                buf = bytearray(data)
                for i in range(len(buf)):
                    if self._sent + i in fault.corrupt_at:
                        buf[i] ^= fault.corrupt_mask
                data = bytes(buf)
            if fault.drop_after_bytes is not None:
                budget = fault.drop_after_bytes - self._sent
                if budget < len(data):
                    self._out.push(data[: max(budget, 0)])
                    self._sent += max(budget, 0)
                    self._out.close()
                    self._closed = True
                    raise TransportError(
                        f"connection dropped after {fault.drop_after_bytes} bytes"
                    )
        self._out.push(data)
        self._sent += len(data)

    def recv(self, n: int) -> bytes:
        return self._in.pull(n, self._timeout)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._out.close()


@dataclass
class LoopbackEndpoint:
    """Rendezvous point: clients connect(), the server accept()s the peer end."""

    timeout: float | None = 30.0
    _pending: deque = field(default_factory=deque, repr=False)
    _cond: threading.Condition = field(default_factory=threading.Condition, repr=False)
    _closed: bool = False

    def connect(self, fault: FaultPlan | None = None) -> LoopbackConnection:
        c2s, s2c = _Pipe(), _Pipe()
        client = LoopbackConnection(c2s, s2c, fault, self.timeout)
        server = LoopbackConnection(s2c, c2s, None, self.timeout)
        with self._cond:
            if self._closed:
                raise TransportError("endpoint is closed")
            self._pending.append(server)
            self._cond.notify_all()
        return client

    def accept(self) -> LoopbackConnection | None:
        """Next server-side connection, or None once the endpoint is closed."""
        with self._cond:
            while not self._pending and not self._closed:
                self._cond.wait()
            if self._pending:
                return self._pending.popleft()
            return None

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


class TcpConnection:
    """Socket adapter with the loopback surface."""

    def __init__(self, sock: socket.socket):
        self._sock = sock

    def send(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv(self, n: int) -> bytes:
        try:
            return self._sock.recv(n)
        except OSError as exc:
            raise TransportError(f"recv failed: {exc}") from exc

    def close(self) -> None:
        # shutdown wakes a thread blocked in recv; plain close would not
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


class TcpEndpoint:
    """Listening socket with the LoopbackEndpoint accept/close surface."""

    _POLL_SECONDS = 0.2  # closing the listener does not wake a blocked accept

    def __init__(self, host: str, port: int):
        self._sock = socket.create_server((host, port))
        self._sock.settimeout(self._POLL_SECONDS)
        self._closed = False
        self.host, self.port = self._sock.getsockname()[:2]

    def accept(self) -> TcpConnection | None:
        while not self._closed:
            try:
                conn, _ = self._sock.accept()
            except TimeoutError:
                continue
            except OSError:
                return None
            return TcpConnection(conn)
        return None

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass


def connect_tcp(host: str, port: int, timeout: float | None = 30.0) -> TcpConnection:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
    return TcpConnection(sock)
