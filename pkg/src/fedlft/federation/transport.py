"""Message transports between the server and its clients.

Both implementations keep a log of every delivered message so the run can be
audited afterwards (message types, payload sizes). Dropout is simulated by a
policy consulted before each delivery; a dropped message raises Disconnected
and the caller carries on without it.
"""

from __future__ import annotations

import socket
import threading
from typing import Callable, Collection, NamedTuple, Optional, Union

from ..errors import Disconnected
from .messages import FRAME_HEADER, GradientBatch, Message, ModelDownload, decode_payload, encode

DOWNLINK = "down"
UPLINK = "up"

DropoutPolicy = Union[Callable[[int, int, str], bool], Collection[tuple[int, int]], None]


class LogEntry(NamedTuple):
    round: int
    user: int
    kind: str
    direction: str
    payload_bytes: int
    overhead_bytes: int


class Transport:
    """Base transport. Subclasses implement ``_deliver``."""

    def __init__(self, dropout: DropoutPolicy = None):
        self.log: list[LogEntry] = []
        self._taps: list[Callable[[LogEntry, Message], None]] = []
        self._lock = threading.Lock()
        if dropout is None or callable(dropout):
            self._dropout = dropout
        else:
            pairs = frozenset(dropout)
            self._dropout = lambda rnd, user, kind: (rnd, user) in pairs

    def add_tap(self, fn: Callable[[LogEntry, Message], None]) -> None:
        self._taps.append(fn)

    def send_download(self, user: int, msg: ModelDownload) -> ModelDownload:
        if not isinstance(msg, ModelDownload):
            raise TypeError(f"downlink only carries ModelDownload, got {type(msg).__name__}")
        return self._send(user, msg, DOWNLINK)

    def send_batch(self, user: int, batch: GradientBatch) -> GradientBatch:
        if not isinstance(batch, GradientBatch):
            raise TypeError(f"uplink only carries GradientBatch, got {type(batch).__name__}")
        if batch.user != user:
            raise ValueError(f"batch from user {batch.user} sent on client {user}'s link")
        return self._send(user, batch, UPLINK)

    def _send(self, user: int, msg: Message, direction: str) -> Message:
        if self._dropout is not None and self._dropout(msg.round, user, direction):
            raise Disconnected(user)
        received, overhead = self._deliver(user, msg, direction)
        entry = LogEntry(msg.round, user, type(msg).__name__, direction,
                         msg.payload_real_bytes(), overhead)
        with self._lock:
            self.log.append(entry)
        for tap in self._taps:
            tap(entry, received)
        return received

    def _deliver(self, user: int, msg: Message, direction: str) -> tuple[Message, int]:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class InProcessTransport(Transport):
    """Synchronous, lossless hand-off of the message objects themselves.

    Messages are immutable (read-only arrays), so no copy is needed.
    """

    def _deliver(self, user, msg, direction):
        return msg, 0


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> Message:
    length, tag = FRAME_HEADER.unpack(_recv_exact(sock, FRAME_HEADER.size))
    return decode_payload(tag, _recv_exact(sock, length))


class SocketTransport(Transport):
    """Each client link is a connected socket pair; every message is encoded
    into a length-prefixed frame, written on one end and decoded on the other.
    """

    def __init__(self, dropout: DropoutPolicy = None):
        super().__init__(dropout)
        self._links: dict[int, tuple[socket.socket, socket.socket, threading.Lock]] = {}

    def _link(self, user: int):
        with self._lock:
            if user not in self._links:
                server_end, client_end = socket.socketpair()
                self._links[user] = (server_end, client_end, threading.Lock())
            return self._links[user]

    def _deliver(self, user, msg, direction):
        server_end, client_end, lock = self._link(user)
        src, dst = (server_end, client_end) if direction == DOWNLINK else (client_end, server_end)
        frame = encode(msg)
        with lock:
            # write from a helper thread so large frames cannot fill the buffer and stall
            writer = threading.Thread(target=src.sendall, args=(frame,))
            writer.start()
            received = read_frame(dst)
            writer.join()
        return received, len(frame) - msg.payload_real_bytes()

    def close(self) -> None:
        for a, b, _ in self._links.values():
            a.close()
            b.close()
        self._links.clear()


def make_transport(kind: str, dropout: DropoutPolicy = None) -> Transport:
    if kind == "in-process":
        return InProcessTransport(dropout)
    if kind == "socket":
        return SocketTransport(dropout)
    raise ValueError(f"unknown transport {kind!r}")
