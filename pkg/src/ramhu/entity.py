"""Pieces shared by the three protocol entities."""

from __future__ import annotations

import logging
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from . import ecies
from .errors import EncodingError, IntegrityError, InvalidKey, Rejection
from .wire import Kind, ProtocolMessage, decode, encode

log = logging.getLogger("ramhu")

DEFAULT_DELTA_MS = 5000


@dataclass(frozen=True)
class Outgoing:
    dst: str
    frame: bytes
    kind: str = "?"


@dataclass
class TraceEvent:
    entity: str
    event: str
    data: dict[str, Any] = field(default_factory=dict)


def client_address(pub: ecies.PublicKey) -> str:
    return f"client:{pub.fingerprint().hex()}"


class Entity:
    """Bookkeeping every entity shares: a name, trace events, work counters and rejections."""

    name = "entity"

    def __init__(self) -> None:
        self.trace: list[TraceEvent] = []
        self.counters: Counter[str] = Counter()
        self.rejections: list[Rejection] = []
        self._seen: dict[tuple, int] = {}
        self._seen_lock = threading.Lock()

    def note(self, event: str, **data: Any) -> None:
        self.trace.append(TraceEvent(self.name, event, data))

    def reject(self, reason: str, detail: str = "", session: str = "-") -> Rejection:
        exc = Rejection(reason, detail)
        self.rejections.append(exc)
        self.note("reject", reason=reason, detail=detail)
        log.info("%s %s rejected: %s (%s)", self.name, session, reason, detail or "-")
        return exc

    def check_replay(self, key: tuple, now_ms: int, delta_ms: int) -> None:
        """Reject a (sender, nonce) pair seen within the freshness window; older ones are forgotten."""
        with self._seen_lock:
            if len(self._seen) > 4096:
                self._seen = {k: t for k, t in self._seen.items() if now_ms - t <= delta_ms}
            if key in self._seen:
                raise self.reject("replay", "nonce already used")
            self._seen[key] = now_ms

    def open_envelope(self, me: ecies.PrivateKey, frame: bytes, candidates, kinds) -> tuple[ecies.PublicKey, ProtocolMessage]:
        """Decrypt ``frame`` from one of ``candidates`` and decode it as one of ``kinds``."""
        try:
            env = ecies.CipherEnvelope.from_bytes(frame)
            sender = ecies.identify_sender(env, candidates)
            self.counters["decrypt"] += 1
            plain = ecies.decrypt(me, sender, env)
        except EncodingError as exc:
            raise self.reject("malformed", str(exc)) from None
        except InvalidKey as exc:
            raise self.reject("key", str(exc)) from None
        except IntegrityError as exc:
            raise self.reject("integrity", str(exc)) from None
        try:
            return sender, decode(plain, kinds)
        except EncodingError as exc:
            raise self.reject("malformed", str(exc)) from None

    @staticmethod
    def seal(me: ecies.PrivateKey, to: ecies.PublicKey, msg: ProtocolMessage, rng,
             sender_public: ecies.PublicKey | None = None) -> bytes:
        return ecies.encrypt(me, to, encode(msg), rng, sender_public=sender_public).to_bytes()


def kind_name(kind: Kind) -> str:
    return Kind(kind).name
