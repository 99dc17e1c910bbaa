"""Moving frames between entities: an in-process router and a TCP transport.

The in-process :class:`Network` delivers frames one at a time in FIFO order
and lets adversary hooks see every frame on every link. Hooks get ciphertext
only; they may drop, duplicate, hold back or rewrite frames.

Over TCP each frame carries a 4-byte big-endian length prefix. A zero-length
frame closes one reply batch, so the sender knows when to stop reading.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from typing import Callable, Iterable

from .entity import Outgoing
from .errors import MalformedMessage, Rejection, RamhuError
from .wire import TranscriptEntry

log = logging.getLogger("ramhu.net")


@dataclass(frozen=True)
class Packet:
    src: str
    dst: str
    frame: bytes
    kind: str = "?"


@dataclass(frozen=True)
class Delivery:
    """What happened when a packet reached its destination."""

    src: str
    dst: str
    kind: str
    verdict: str  # "accepted" or the rejection reason
    detail: str = ""


Hook = Callable[[Packet], Iterable[Packet]]


class Network:
    def __init__(self) -> None:
        self.entities: dict[str, object] = {}
        self.hooks: list[Hook] = []
        self.queue: list[Packet] = []
        self.transcript: list[TranscriptEntry] = []
        self.deliveries: list[Delivery] = []

    def add(self, entity, address: str | None = None) -> None:
        """Attach ``entity`` at ``address``, defaulting to its own address or name."""
        if address is None:
            address = getattr(entity, "address", None) or entity.name
        self.entities[address] = entity

    def channel_intercept(self, hook: Hook) -> None:
        """Register adversary middleware that sees every frame on every link."""
        self.hooks.append(hook)

    def send(self, src: str, dst: str, frame: bytes, kind: str = "?") -> None:
        pkts = [Packet(src, dst, frame, kind)]
        for hook in self.hooks:
            pkts = [q for p in pkts for q in hook(p)]
        self.queue.extend(pkts)

    def inject(self, src: str, dst: str, frame: bytes, kind: str = "?") -> None:
        """Put a frame on the wire without passing it through the hooks."""
        self.queue.append(Packet(src, dst, frame, kind))

    def run(self, max_steps: int = 1000) -> list[Delivery]:
        done: list[Delivery] = []
        steps = 0
        while self.queue and steps < max_steps:
            pkt = self.queue.pop(0)
            steps += 1
            self.transcript.append(TranscriptEntry(f"{pkt.src}>{pkt.dst}", pkt.kind, pkt.frame))
            entity = self.entities.get(pkt.dst)
            if entity is None:
                d = Delivery(pkt.src, pkt.dst, pkt.kind, "undeliverable")
            else:
                try:
                    outs = entity.handle(pkt.frame, pkt.src)
                except Rejection as exc:
                    d = Delivery(pkt.src, pkt.dst, pkt.kind, exc.reason, exc.detail)
                else:
                    d = Delivery(pkt.src, pkt.dst, pkt.kind, "accepted")
                    for o in outs:
                        self.send(pkt.dst, o.dst, o.frame, o.kind)
            done.append(d)
            self.deliveries.append(d)
        return done


# -- hook helpers ------------------------------------------------------------

class Capture:
    """Passive eavesdropper: records every packet and lets it through."""

    def __init__(self) -> None:
        self.packets: list[Packet] = []

    def __call__(self, pkt: Packet) -> list[Packet]:
        self.packets.append(pkt)
        return [pkt]


def drop_if(pred: Callable[[Packet], bool]) -> Hook:
    return lambda p: [] if pred(p) else [p]


def duplicate_if(pred: Callable[[Packet], bool]) -> Hook:
    return lambda p: [p, p] if pred(p) else [p]


def edit_if(pred: Callable[[Packet], bool], edit: Callable[[bytes], bytes]) -> Hook:
    return lambda p: [Packet(p.src, p.dst, edit(p.frame), p.kind)] if pred(p) else [p]


class Reorder:
    """Hold matching packets until ``count`` have arrived, then release them reversed."""

    def __init__(self, pred: Callable[[Packet], bool], count: int = 2) -> None:
        self.pred = pred
        self.count = count
        self.held: list[Packet] = []

    def __call__(self, pkt: Packet) -> list[Packet]:
        if not self.pred(pkt):
            return [pkt]
        self.held.append(pkt)
        if len(self.held) < self.count:
            return []
        out, self.held = self.held[::-1], []
        return out


# -- TCP transport -----------------------------------------------------------

_LEN = struct.Struct(">I")
MAX_FRAME = 1 << 20


def write_frame(sock: socket.socket, frame: bytes) -> None:
    sock.sendall(_LEN.pack(len(frame)) + frame)


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def read_frame(sock: socket.socket) -> bytes | None:
    """Next frame, ``b""`` for an end-of-batch marker, or None when the peer closed."""
    head = _read_exact(sock, 4)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME:
        raise MalformedMessage("frame too large")
    if n == 0:
        return b""
    body = _read_exact(sock, n)
    if body is None:
        raise MalformedMessage("connection closed mid-frame")
    return body


def parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def exchange(addr: tuple[str, int], frames: Iterable[bytes], timeout: float = 10.0) -> list[bytes] | None:
    """Send frames one by one, collecting each reply batch.

    Returns None if the peer discarded the connection before answering.
    """
    replies: list[bytes] = []
    with socket.create_connection(addr, timeout=timeout) as sock:
        for frame in frames:
            write_frame(sock, frame)
            while True:
                got = read_frame(sock)
                if got is None:
                    return None
                if got == b"":
                    break
                replies.append(got)
    return replies


class TcpSession:
    """A client-side connection that keeps state across request and reply batches."""

    def __init__(self, addr: tuple[str, int], timeout: float = 10.0, recorder: list | None = None, name: str = "client"):
        self.sock = socket.create_connection(addr, timeout=timeout)
        self.recorder = recorder
        self.name = name

    def request(self, frame: bytes, kind: str = "?") -> list[bytes] | None:
        if self.recorder is not None:
            self.recorder.append(TranscriptEntry(f"{self.name}>cs", kind, frame))
        write_frame(self.sock, frame)
        out = []
        while True:
            got = read_frame(self.sock)
            if got is None:
                return None
            if got == b"":
                return out
            out.append(got)

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class EntityServer(socketserver.ThreadingTCPServer):
    """Serve one entity. Frames addressed to ``upstream`` names are relayed over TCP."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, entity, upstream: dict[str, tuple[str, int]] | None = None,
                 recorder: list | None = None):
        self.entity = entity
        self.upstream = upstream or {}
        self.recorder = recorder
        self.lock = threading.Lock()
        self.on_change: Callable[[], None] | None = None  # e.g. persist stores
        super().__init__(addr, _Handler)

    def record(self, direction: str, kind: str, frame: bytes) -> None:
        if self.recorder is not None:
            self.recorder.append(TranscriptEntry(direction, kind, frame))

    def process(self, frame: bytes, peer: str) -> list[Outgoing]:
        """Handle one inbound frame, following upstream relays; returns frames for the peer."""
        back: list[Outgoing] = []
        todo = [(frame, peer)]
        while todo:
            f, src = todo.pop(0)
            with self.lock:
                try:
                    outs = self.entity.handle(f, src)
                finally:
                    if self.on_change is not None:
                        self.on_change()
            for o in outs:
                if o.dst in self.upstream:
                    self.record(f"{self.entity.name}>{o.dst}", o.kind, o.frame)
                    replies = exchange(self.upstream[o.dst], [o.frame])
                    for r in replies or []:
                        self.record(f"{o.dst}>{self.entity.name}", "?", r)
                        todo.append((r, o.dst))
                else:
                    back.append(o)
        return back


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        server: EntityServer = self.server  # type: ignore[assignment]
        peer = "%s:%d" % self.client_address[:2]
        while True:
            try:
                frame = read_frame(self.request)
            except (MalformedMessage, OSError):
                return
            if not frame:
                return
            try:
                outs = server.process(frame, peer)
            except Rejection:
                return  # discard the connection, tell the peer nothing
            except (RamhuError, OSError) as exc:
                log.warning("%s dropped connection from %s: %s", server.entity.name, peer, exc)
                return
            try:
                for o in outs:
                    server.record(f"{server.entity.name}>{o.dst}", o.kind, o.frame)
                    write_frame(self.request, o.frame)
                write_frame(self.request, b"")
            except OSError:
                return


def serve_in_thread(server: EntityServer) -> threading.Thread:
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    return t
