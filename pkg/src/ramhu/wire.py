"""Fixed-width lanes, XOR masking and the message schemas.

Every value that is XORed is first widened to a 32-byte lane. A message on
the wire is one kind byte followed by its fields at fixed widths, in the
order the protocol lists them; the whole thing is then sealed in a
:class:`~ramhu.ecies.CipherEnvelope`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import EncodingError, MalformedMessage, ValidationError

LANE = 32
TS_WIDTH = 8
PSEUDONYM_WIDTH = 16
MAC_WIDTH = 6

REAL_MAC = b"Real_MAC"
FAKE_MAC = b"Fake_MAC"


# -- lanes -----------------------------------------------------------------

def pad_lane(value: bytes) -> bytes:
    """Right-pad ``value`` with zeros to 32 bytes."""
    value = bytes(value)
    if len(value) > LANE:
        raise EncodingError(f"{len(value)} bytes do not fit a {LANE}-byte lane")
    return value + bytes(LANE - len(value))


def xor_mask(base: bytes, operands: Iterable[bytes] = ()) -> bytes:
    """XOR-fold ``operands`` into ``base``; applying the same operands again undoes it."""
    if len(base) != LANE:
        raise EncodingError("mask base must be a full lane")
    acc = int.from_bytes(base, "big")
    for op in operands:
        if len(op) != LANE:
            raise EncodingError("mask operand must be a full lane")
        acc ^= int.from_bytes(op, "big")
    return acc.to_bytes(LANE, "big")


def password_lane(password: str) -> bytes:
    """UTF-8 password in a lane; at most 32 bytes, non-empty, no NUL."""
    raw = password.encode("utf-8")
    if not raw:
        raise ValidationError("password must not be empty")
    if b"\x00" in raw:
        raise ValidationError("password must not contain NUL")
    if len(raw) > LANE:
        raise ValidationError(f"password is {len(raw)} bytes, the limit is {LANE}")
    return pad_lane(raw)


def password_from_lane(lane: bytes) -> str:
    return lane.rstrip(b"\x00").decode("utf-8")


def mac_lane(gm: bytes) -> bytes:
    if len(gm) != MAC_WIDTH:
        raise EncodingError("hardware address must be 6 bytes")
    return pad_lane(gm)


def mac_from_lane(lane: bytes) -> bytes:
    return lane[:MAC_WIDTH]


def ts_bytes(ms: int) -> bytes:
    return int(ms).to_bytes(TS_WIDTH, "big")


def ts_value(raw: bytes) -> int:
    return int.from_bytes(raw, "big")


def format_mac(gm: bytes) -> str:
    return ":".join(f"{b:02x}" for b in gm)


def parse_mac(text: str) -> bytes:
    raw = bytes.fromhex(text.replace(":", "").replace("-", ""))
    if len(raw) != MAC_WIDTH:
        raise ValidationError(f"not a hardware address: {text!r}")
    return raw


# -- message schemas ---------------------------------------------------------

class Kind(enum.IntEnum):
    REG_LOGIN_REQ = 1
    LOGIN_REQ = 2
    AUTH_REQ = 3
    AUTH_RESP = 4
    LOGIN_RESP = 5
    CLIENT_ACK = 6
    PW_UPDATE_REQ = 7
    PW_UPDATE_FWD = 8
    REVOKE_REQ = 9
    REVOKE_FWD = 10
    MAC_DELETE_REQ = 11


_W = {"ts": TS_WIDTH, "up": PSEUDONYM_WIDTH, "mp": PSEUDONYM_WIDTH}


def _schema(*names: str) -> tuple[tuple[str, int], ...]:
    return tuple((n, _W.get(n, LANE)) for n in names)


SCHEMAS: dict[Kind, tuple[tuple[str, int], ...]] = {
    Kind.REG_LOGIN_REQ: _schema("ts", "n", "gm", "sig1", "up", "mp", "otp", "tmp_pw", "sig2"),
    Kind.LOGIN_REQ: _schema("ts", "n", "sig1", "up", "mp", "tmp_pw", "sig2"),
    Kind.AUTH_REQ: _schema("ts", "n", "up", "mp", "sig3", "tmp_pw"),
    Kind.AUTH_RESP: _schema("ts", "n", "up", "mp", "sig2"),
    Kind.LOGIN_RESP: _schema("ts", "n", "up", "mp", "sig5"),
    Kind.CLIENT_ACK: _schema("n"),
    Kind.PW_UPDATE_REQ: _schema("ts", "n1", "n2", "n3", "up", "mp", "tmp_old", "tmp_new", "sig1"),
    Kind.PW_UPDATE_FWD: _schema("ts", "n1", "n2", "n3", "up", "mp", "tmp_old", "tmp_new", "sig2"),
    Kind.REVOKE_REQ: _schema("ts", "n1", "n2", "n3", "up", "mp", "tmp_rr", "tmp_pw", "sig1"),
    Kind.REVOKE_FWD: _schema("ts", "n1", "n2", "up", "mp", "tmp_pw", "sig2"),
    Kind.MAC_DELETE_REQ: _schema("ts", "up", "mp", "sig2", "n"),
}


def schema_width(kind: Kind) -> int:
    """Encoded size of ``kind`` including the kind byte."""
    return 1 + sum(w for _, w in SCHEMAS[kind])


@dataclass(frozen=True)
class ProtocolMessage:
    kind: Kind
    fields: Mapping[str, bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        schema = SCHEMAS[Kind(self.kind)]
        names = [n for n, _ in schema]
        if sorted(self.fields) != sorted(names):
            raise EncodingError(f"{Kind(self.kind).name} expects fields {names}, got {sorted(self.fields)}")
        for name, width in schema:
            if len(self.fields[name]) != width:
                raise EncodingError(f"{Kind(self.kind).name}.{name} must be {width} bytes")
        # keep schema order so equality and iteration are canonical
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "fields", {n: bytes(self.fields[n]) for n in names})

    def __getitem__(self, name: str) -> bytes:
        return self.fields[name]

    @classmethod
    def build(cls, kind: Kind, **fields: bytes) -> "ProtocolMessage":
        return cls(kind, fields)

    def replace(self, **changes: bytes) -> "ProtocolMessage":
        return ProtocolMessage(self.kind, {**self.fields, **changes})


def encode(msg: ProtocolMessage) -> bytes:
    return bytes([msg.kind]) + b"".join(msg.fields.values())


def decode(data: bytes, kind_hint: Kind | Iterable[Kind] | None = None) -> ProtocolMessage:
    """Parse wire bytes; ``kind_hint`` restricts which kinds are acceptable."""
    if not data:
        raise MalformedMessage("empty message")
    try:
        kind = Kind(data[0])
    except ValueError:
        raise MalformedMessage(f"unknown message kind {data[0]}") from None
    if kind_hint is not None:
        allowed = {kind_hint} if isinstance(kind_hint, Kind) else set(kind_hint)
        if kind not in allowed:
            raise MalformedMessage(f"unexpected {kind.name}")
    if len(data) != schema_width(kind):
        raise MalformedMessage(f"{kind.name} needs {schema_width(kind)} bytes, got {len(data)}")
    fields, off = {}, 1
    for name, width in SCHEMAS[kind]:
        fields[name] = data[off:off + width]
        off += width
    return ProtocolMessage(kind, fields)


# -- transcripts -------------------------------------------------------------

@dataclass(frozen=True)
class TranscriptEntry:
    """One captured frame: ``direction`` is ``src>dst``; ``kind`` may be ``?`` when unknown."""

    direction: str
    kind: str
    frame: bytes

    def to_line(self) -> str:
        return f"{self.direction} {self.kind} {self.frame.hex()}"

    @classmethod
    def from_line(cls, line: str) -> "TranscriptEntry":
        try:
            direction, kind, hexed = line.split()
            return cls(direction, kind, bytes.fromhex(hexed))
        except ValueError as exc:
            raise MalformedMessage(f"bad transcript line: {line!r}") from exc


def dump_transcript(entries: Iterable[TranscriptEntry]) -> str:
    return "".join(e.to_line() + "\n" for e in entries)


def load_transcript(text: str) -> list[TranscriptEntry]:
    return [TranscriptEntry.from_line(l) for l in text.splitlines() if l.strip()]
