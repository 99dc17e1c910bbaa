"""Static-static ECIES with a PHOTON-based stream cipher and tag.

Both parties use their long-term keys: the sender encrypts with its own
private key and the recipient's public key, the recipient decrypts with its
private key and the sender's public key. A fresh 16-byte nonce per envelope
diversifies the keystream, so identical plaintexts never encrypt alike.

    shared    = h(x(mine * theirs))
    msg_key   = h(shared || nonce)
    keystream = h(shared || nonce || ctr_0) || h(shared || nonce || ctr_1) || ...
    body      = plaintext XOR keystream
    tag       = h(msg_key || body)[:16]

The 8-byte sender hint is ``h(sender_pub || nonce)[:8]``; it lets a server
pick the sender key among the ones it knows without giving an eavesdropper a
stable identifier.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Protocol

from . import curve as ec
from .errors import IntegrityError, InvalidKey, MalformedMessage
from .photon import SpongeState, photon_hash, photon_hash_many

HINT_SIZE = 8
NONCE_SIZE = 16
TAG_SIZE = 16
HEADER_SIZE = HINT_SIZE + NONCE_SIZE


class RandomSource(Protocol):
    def randbytes(self, n: int) -> bytes: ...


@dataclass(frozen=True)
class PrivateKey:
    scalar: int
    curve: ec.Curve = ec.DEFAULT_CURVE

    def __post_init__(self) -> None:
        if not 0 < self.scalar < self.curve.n:
            raise InvalidKey("private scalar out of range")

    def __repr__(self) -> str:
        return f"PrivateKey(<hidden>, curve={self.curve.name})"

    def to_bytes(self) -> bytes:
        return self.scalar.to_bytes(32, "big")

    @classmethod
    def from_bytes(cls, raw: bytes, curve: ec.Curve = ec.DEFAULT_CURVE) -> "PrivateKey":
        if len(raw) != 32:
            raise InvalidKey("private key must be 32 bytes")
        return cls(int.from_bytes(raw, "big"), curve)

    def public_key(self) -> "PublicKey":
        return PublicKey.from_point(ec.multiply(self.curve, self.scalar, self.curve.g), self.curve)


@dataclass(frozen=True)
class PublicKey:
    x: int
    y: int
    curve: ec.Curve = ec.DEFAULT_CURVE

    def __post_init__(self) -> None:
        if not self.curve.contains((self.x, self.y)):
            raise InvalidKey("public point is not on the curve")

    @classmethod
    def from_point(cls, pt: ec.Point, curve: ec.Curve = ec.DEFAULT_CURVE) -> "PublicKey":
        if pt is None:
            raise InvalidKey("public point is the identity")
        return cls(pt[0], pt[1], curve)

    def to_bytes(self) -> bytes:
        return self.x.to_bytes(32, "big") + self.y.to_bytes(32, "big")

    @classmethod
    def from_bytes(cls, raw: bytes, curve: ec.Curve = ec.DEFAULT_CURVE) -> "PublicKey":
        if len(raw) != 64:
            raise InvalidKey("public key must be 64 bytes")
        return cls(int.from_bytes(raw[:32], "big"), int.from_bytes(raw[32:], "big"), curve)

    @property
    def point(self) -> tuple[int, int]:
        return (self.x, self.y)

    def fingerprint(self) -> bytes:
        return photon_hash(self.to_bytes())[:HINT_SIZE]


def keygen(rng: RandomSource, curve: ec.Curve = ec.DEFAULT_CURVE) -> tuple[PrivateKey, PublicKey]:
    while True:
        k = int.from_bytes(rng.randbytes(32), "big")
        if 0 < k < curve.n:
            break
    priv = PrivateKey(k, curve)
    return priv, priv.public_key()


@lru_cache(maxsize=4096)
def _shared(curve: ec.Curve, scalar: int, x: int, y: int) -> bytes:
    pt = ec.multiply(curve, scalar, (x, y))
    if pt is None:
        raise InvalidKey("shared point is the identity")
    return photon_hash(pt[0].to_bytes(32, "big"))


def derive_shared(mine: PrivateKey, theirs: PublicKey) -> bytes:
    """h(x-coordinate of mine * theirs); symmetric in the two key pairs."""
    if not isinstance(theirs, PublicKey) or not mine.curve.contains(theirs.point):
        raise InvalidKey("peer key is not a valid curve point")
    return _shared(mine.curve, mine.scalar, theirs.x, theirs.y)


@dataclass(frozen=True)
class CipherEnvelope:
    sender_hint: bytes
    nonce: bytes
    body: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.sender_hint + self.nonce + self.body + self.tag

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CipherEnvelope":
        if len(raw) < HEADER_SIZE + TAG_SIZE + 1:
            raise MalformedMessage("envelope too short")
        return cls(
            raw[:HINT_SIZE],
            raw[HINT_SIZE:HEADER_SIZE],
            raw[HEADER_SIZE:-TAG_SIZE],
            raw[-TAG_SIZE:],
        )


@lru_cache(maxsize=1024)
def _hint_prefix(pub_bytes: bytes) -> SpongeState:
    return SpongeState().update(pub_bytes)


def sender_hint(sender: PublicKey, nonce: bytes) -> bytes:
    return _hint_prefix(sender.to_bytes()).copy().update(nonce).digest()[:HINT_SIZE]


# Above this many blocks the numpy batch beats the scalar loop.
_BATCH_THRESHOLD = 24


def keystream(shared: bytes, nonce: bytes, length: int, base: SpongeState | None = None) -> bytes:
    """Counter-mode expansion h(shared || nonce || ctr), ctr a 4-byte big-endian int."""
    if base is None:
        base = SpongeState().update(shared + nonce)
    counters = [i.to_bytes(4, "big") for i in range(-(-length // 32))]
    if len(counters) > _BATCH_THRESHOLD:
        digests = photon_hash_many(counters, prefix=base)
    else:
        digests = [base.copy().update(c).digest() for c in counters]
    return b"".join(digests)[:length]


def _xor(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def _tag(base: SpongeState, body: bytes) -> bytes:
    msg_key = base.copy().digest()
    return photon_hash(msg_key + body)[:TAG_SIZE]


def encrypt(sender: PrivateKey, recipient: PublicKey, plaintext: bytes, rng: RandomSource,
            sender_public: PublicKey | None = None) -> CipherEnvelope:
    """Encrypt ``plaintext`` from ``sender`` to ``recipient``.

    ``sender_public`` overrides the key advertised in the hint; clients pass
    their registered public key so a wrongly recovered private key still
    reaches the recipient and fails there on the tag.
    """
    if not plaintext:
        raise ValueError("plaintext must be non-empty")
    shared = derive_shared(sender, recipient)
    nonce = rng.randbytes(NONCE_SIZE)
    pub = sender_public if sender_public is not None else sender.public_key()
    base = SpongeState().update(shared + nonce)
    body = _xor(plaintext, keystream(shared, nonce, len(plaintext), base))
    return CipherEnvelope(sender_hint(pub, nonce), nonce, body, _tag(base, body))


def decrypt(recipient: PrivateKey, sender: PublicKey, env: CipherEnvelope) -> bytes:
    if not hmac.compare_digest(sender_hint(sender, env.nonce), env.sender_hint):
        raise InvalidKey("envelope was not sent under this sender key")
    shared = derive_shared(recipient, sender)
    base = SpongeState().update(shared + env.nonce)
    if not hmac.compare_digest(_tag(base, env.body), env.tag):
        raise IntegrityError("envelope tag mismatch")
    return _xor(env.body, keystream(shared, env.nonce, len(env.body), base))


def identify_sender(env: CipherEnvelope, candidates: Iterable[PublicKey]) -> PublicKey:
    """Pick the known key whose salted fingerprint matches the envelope hint."""
    for pub in candidates:
        if hmac.compare_digest(sender_hint(pub, env.nonce), env.sender_hint):
            return pub
    raise InvalidKey("unknown sender")


# -- key files ---------------------------------------------------------------
# One entity per line: ``label priv_hex pub_hex``; ``-`` in place of the
# private key for public-only (broadcast) entries.

def write_key_file(path: str | Path, entries: dict[str, tuple[PrivateKey | None, PublicKey]]) -> None:
    lines = []
    for label, (priv, pub) in entries.items():
        lines.append(f"{label} {priv.to_bytes().hex() if priv else '-'} {pub.to_bytes().hex()}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_key_file(path: str | Path) -> dict[str, tuple[PrivateKey | None, PublicKey]]:
    out: dict[str, tuple[PrivateKey | None, PublicKey]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            label, priv_hex, pub_hex = line.split()
            priv = None if priv_hex == "-" else PrivateKey.from_bytes(bytes.fromhex(priv_hex))
            pub = PublicKey.from_bytes(bytes.fromhex(pub_hex))
        except (ValueError, InvalidKey) as exc:
            raise InvalidKey(f"{path}:{lineno}: {exc}") from exc
        if priv is not None and priv.public_key() != pub:
            raise InvalidKey(f"{path}:{lineno}: key pair mismatch")
        out[label] = (priv, pub)
    return out
