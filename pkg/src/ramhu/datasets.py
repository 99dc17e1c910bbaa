"""Server-side stores and the provisioning step that fills them.

The central server (CS) keeps the OTP set, the hardware-address registry,
its view of the pseudonym chains and the revocation-reason catalog. The
attributes server (AS) keeps the identity records and the pseudonym hops it
verifies. Every store persists as one line-oriented file of
``label hex-fields`` so that save, load, save is byte-identical.
"""

from __future__ import annotations

import os
import tempfile
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

from .errors import InvalidKey, ProvisioningError, Rejection, StoreLoadError, ValidationError
from .photon import photon_hash
from .wire import LANE, PSEUDONYM_WIDTH, password_lane

ROLES = ("patient", "relative", "doctor", "nurse", "researcher", "advisor", "emergency")

# Reason text and the roles allowed to give it.
DEFAULT_REASONS = (
    ("ending the researcher's study", ("researcher",)),
    ("ending a satisfactory condition", ("patient", "relative")),
    ("resigning a professional", ("doctor", "nurse", "advisor", "emergency")),
    ("changing a health institution", ROLES),
    ("unwillingness of a patient to use the system", ("patient", "relative")),
)

# Pseudonym hops in travel order: client to CS, CS to AS, AS to CS, CS to client.
HOPS = ("ci_cs", "cs_as", "as_cs", "cs_ci")
CS_HOPS = HOPS
AS_HOPS = ("cs_as", "as_cs")

Pair = tuple[bytes, bytes]


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _hex(raw: bytes, width: int | None = None, what: str = "field") -> bytes:
    try:
        out = bytes.fromhex(raw)
    except ValueError:
        raise StoreLoadError(f"{what} is not hex") from None
    if width is not None and len(out) != width:
        raise StoreLoadError(f"{what} must be {width} bytes")
    return out


def _records(text: str, label: str, arity: int) -> Iterator[list[str]]:
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] != label or len(parts) != arity + 1:
            raise StoreLoadError(f"line {lineno}: expected '{label}' with {arity} fields")
        yield parts[1:]


class _Store:
    """Shared save/load plumbing; subclasses define ``to_text`` and ``from_text``."""

    filename = ""

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / self.filename
        _atomic_write(path, self.to_text())
        return path

    @classmethod
    def load(cls, directory: str | Path):
        path = Path(directory) / cls.filename
        try:
            text = path.read_text()
        except FileNotFoundError:
            raise StoreLoadError(f"missing store file {path}") from None
        except UnicodeDecodeError:
            raise StoreLoadError(f"{path} is not text") from None
        try:
            return cls.from_text(text)
        except StoreLoadError as exc:
            raise StoreLoadError(f"{path}: {exc}") from None


# -- CS stores ---------------------------------------------------------------

class OtpStore(_Store):
    """One-time registration secrets keyed by client key fingerprint."""

    filename = "otp.store"

    def __init__(self, entries: dict[bytes, bytes] | None = None) -> None:
        self._entries = dict(entries or {})
        self._lock = threading.Lock()

    def add(self, fingerprint: bytes, otp: bytes) -> None:
        with self._lock:
            self._entries[fingerprint] = otp

    def consume(self, fingerprint: bytes, otp: bytes) -> bool:
        """Atomically check and delete; of several racing callers at most one gets True."""
        with self._lock:
            if self._entries.get(fingerprint) != otp:
                return False
            del self._entries[fingerprint]
            return True

    def discard(self, fingerprint: bytes) -> None:
        with self._lock:
            self._entries.pop(fingerprint, None)

    def __contains__(self, fingerprint: bytes) -> bool:
        return fingerprint in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def to_text(self) -> str:
        return "".join(f"otp {fp.hex()} {otp.hex()}\n" for fp, otp in self._entries.items())

    @classmethod
    def from_text(cls, text: str) -> "OtpStore":
        return cls({_hex(fp, 8, "fingerprint"): _hex(otp, LANE, "otp") for fp, otp in _records(text, "otp", 2)})


class MacRegistry(_Store):
    """Client-facing pseudonym pair to the hardware-address lane saved at registration."""

    filename = "mac.store"

    def __init__(self, entries: dict[Pair, bytes] | None = None) -> None:
        self._entries = dict(entries or {})
        self._lock = threading.Lock()

    def save_mac(self, pair: Pair, gm_lane: bytes) -> None:
        with self._lock:
            self._entries[pair] = gm_lane

    def get(self, pair: Pair) -> bytes | None:
        return self._entries.get(pair)

    def delete(self, pair: Pair) -> bool:
        with self._lock:
            return self._entries.pop(pair, None) is not None

    def __contains__(self, pair: Pair) -> bool:
        return pair in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def values(self) -> list[bytes]:
        return list(self._entries.values())

    def to_text(self) -> str:
        return "".join(f"mac {up.hex()} {mp.hex()} {gm.hex()}\n" for (up, mp), gm in self._entries.items())

    @classmethod
    def from_text(cls, text: str) -> "MacRegistry":
        out = {}
        for up, mp, gm in _records(text, "mac", 3):
            out[(_hex(up, PSEUDONYM_WIDTH, "up"), _hex(mp, PSEUDONYM_WIDTH, "mp"))] = _hex(gm, LANE, "gm")
        return cls(out)


@dataclass
class ChainEntry:
    """The hop pairs one server knows for one user, plus the user's role when the CS needs it."""

    pairs: dict[str, Pair]
    role: str | None = None


class PseudonymDirectory(_Store):
    """Maps a handle (CS: client fingerprint, AS: record id) to its hop pairs.

    Lookups go both ways: from a (hop, pair) to the handle, and from a pair at
    one hop to the pair of the same user at another hop.
    """

    filename = "pseudonyms.store"

    def __init__(self, hops: tuple[str, ...] = HOPS) -> None:
        self.hops = hops
        self._entries: dict[bytes, ChainEntry] = {}
        self._index: dict[tuple[str, Pair], bytes] = {}
        self._lock = threading.Lock()

    def add(self, handle: bytes, pairs: dict[str, Pair], role: str | None = None) -> None:
        with self._lock:
            if handle in self._entries:
                raise ProvisioningError("duplicate pseudonym handle")
            for hop, pair in pairs.items():
                if hop not in self.hops:
                    raise ProvisioningError(f"hop {hop} not kept by this directory")
                if any(p in self._used_ids() for p in pair):
                    raise ProvisioningError("pseudonym identifiers must be globally unique")
                self._index[(hop, pair)] = handle
            self._entries[handle] = ChainEntry(dict(pairs), role)

    def _used_ids(self) -> set[bytes]:
        return {p for (_, pair) in self._index for p in pair}

    def lookup(self, hop: str, pair: Pair) -> bytes:
        try:
            return self._index[(hop, pair)]
        except KeyError:
            raise Rejection("pseudonym-unknown", f"no {hop} pair") from None

    def pairs(self, handle: bytes) -> dict[str, Pair]:
        return dict(self._entries[handle].pairs)

    def role(self, handle: bytes) -> str | None:
        return self._entries[handle].role

    def translate(self, pair: Pair, src: str, dst: str) -> Pair:
        handle = self.lookup(src, pair)
        try:
            return self._entries[handle].pairs[dst]
        except KeyError:
            raise Rejection("pseudonym-unknown", f"no {dst} pair") from None

    def translate_hop(self, pair: Pair, hop: str) -> Pair:
        """Pair of the same user at the hop after ``hop`` in travel order."""
        nxt = HOPS[(HOPS.index(hop) + 1) % len(HOPS)]
        return self.translate(pair, hop, nxt)

    def sever(self, handle: bytes) -> None:
        """Drop every hop pair of ``handle``; the handle itself stays as a tombstone."""
        with self._lock:
            entry = self._entries[handle]
            for hop, pair in entry.pairs.items():
                self._index.pop((hop, pair), None)
            entry.pairs.clear()

    def handles(self) -> list[bytes]:
        return list(self._entries)

    def all_ids(self) -> list[bytes]:
        return [p for e in self._entries.values() for pair in e.pairs.values() for p in pair]

    def to_text(self) -> str:
        lines = []
        for handle, entry in self._entries.items():
            cells = []
            for hop in self.hops:
                pair = entry.pairs.get(hop)
                cells += [pair[0].hex(), pair[1].hex()] if pair else ["-", "-"]
            lines.append(" ".join(["chain", handle.hex(), entry.role or "-", *cells]) + "\n")
        return f"hops {','.join(self.hops)}\n" + "".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "PseudonymDirectory":
        head, _, rest = text.partition("\n")
        parts = head.split()
        if len(parts) != 2 or parts[0] != "hops":
            raise StoreLoadError("missing hops header")
        hops = tuple(parts[1].split(","))
        if not hops or any(h not in HOPS for h in hops):
            raise StoreLoadError("unknown hop name")
        d = cls(hops)
        for rec in _records(rest, "chain", 2 + 2 * len(hops)):
            handle, role, cells = _hex(rec[0], None, "handle"), rec[1], rec[2:]
            if role != "-" and role not in ROLES:
                raise StoreLoadError(f"unknown role {role}")
            pairs = {}
            for i, hop in enumerate(hops):
                up, mp = cells[2 * i], cells[2 * i + 1]
                if up != "-" or mp != "-":
                    pairs[hop] = (_hex(up, PSEUDONYM_WIDTH, "up"), _hex(mp, PSEUDONYM_WIDTH, "mp"))
            try:
                d.add(handle, pairs, None if role == "-" else role)
            except ProvisioningError as exc:
                raise StoreLoadError(str(exc)) from None
        return d


class RevocationReasonCatalog(_Store):
    """Reason digests (PHOTON of the reason text) with the roles allowed to give them."""

    filename = "reasons.store"

    def __init__(self, reasons: Iterable[tuple[str, Iterable[str]]] = DEFAULT_REASONS) -> None:
        self._entries: dict[bytes, tuple[str, tuple[str, ...]]] = {}
        for text, roles in reasons:
            roles = tuple(roles)
            if any(r not in ROLES for r in roles):
                raise ValueError(f"unknown role in {roles}")
            self._entries[photon_hash(text.encode("utf-8"))] = (text, roles)

    def digest(self, index: int) -> bytes:
        return list(self._entries)[index]

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, digest: bytes) -> tuple[str, tuple[str, ...]] | None:
        return self._entries.get(digest)

    def texts(self) -> list[str]:
        return [t for t, _ in self._entries.values()]

    def to_text(self) -> str:
        return "".join(
            f"reason {d.hex()} {','.join(roles)} {text.encode().hex()}\n" for d, (text, roles) in self._entries.items()
        )

    @classmethod
    def from_text(cls, text: str) -> "RevocationReasonCatalog":
        reasons = []
        for digest, roles, text_hex in _records(text, "reason", 3):
            try:
                reason = _hex(text_hex, None, "reason").decode("utf-8")
            except UnicodeDecodeError:
                raise StoreLoadError("reason text is not UTF-8") from None
            if photon_hash(reason.encode()) != _hex(digest, 32, "digest"):
                raise StoreLoadError("reason digest does not match its text")
            reasons.append((reason, roles.split(",")))
        try:
            return cls(reasons)
        except ValueError as exc:
            raise StoreLoadError(str(exc)) from None


# -- AS store ----------------------------------------------------------------

@dataclass(frozen=True)
class IdentityRecord:
    uid: str
    mid: str
    role: str
    pw_lane: bytes | None
    handle: bytes
    revoked: bool = False


class CredentialStore(_Store):
    """Identity records keyed by record handle; the only place password lanes live."""

    filename = "credentials.store"

    def __init__(self) -> None:
        self._records: dict[bytes, IdentityRecord] = {}
        self._lock = threading.Lock()

    def add(self, rec: IdentityRecord) -> None:
        with self._lock:
            if rec.handle in self._records:
                raise ProvisioningError("duplicate record handle")
            if not rec.revoked and self.find(rec.uid, rec.mid) is not None:
                raise ProvisioningError(f"duplicate identity {rec.uid}/{rec.mid}")
            self._records[rec.handle] = rec

    def get(self, handle: bytes) -> IdentityRecord | None:
        return self._records.get(handle)

    def find(self, uid: str, mid: str) -> IdentityRecord | None:
        for rec in self._records.values():
            if rec.uid == uid and rec.mid == mid and not rec.revoked:
                return rec
        return None

    def find_any(self, uid: str, mid: str) -> IdentityRecord | None:
        return next((r for r in self._records.values() if r.uid == uid and r.mid == mid), None)

    def set_password(self, handle: bytes, expected_old: bytes, new_lane: bytes) -> bool:
        """Compare-and-swap the password lane; the record is replaced in one assignment."""
        with self._lock:
            rec = self._records.get(handle)
            if rec is None or rec.revoked or rec.pw_lane != expected_old:
                return False
            self._records[handle] = replace(rec, pw_lane=new_lane)
            return True

    def revoke(self, handle: bytes) -> bool:
        """Tombstone: keep uid/mid/role, erase the password. False if already revoked."""
        with self._lock:
            rec = self._records.get(handle)
            if rec is None or rec.revoked:
                return False
            self._records[handle] = replace(rec, pw_lane=None, revoked=True)
            return True

    def records(self) -> list[IdentityRecord]:
        return list(self._records.values())

    def to_text(self) -> str:
        return "".join(
            f"identity {r.handle.hex()} {r.uid.encode().hex()} {r.mid.encode().hex()} {r.role} "
            f"{r.pw_lane.hex() if r.pw_lane else '-'} {int(r.revoked)}\n"
            for r in self._records.values()
        )

    @classmethod
    def from_text(cls, text: str) -> "CredentialStore":
        store = cls()
        for handle, uid, mid, role, pw, revoked in _records(text, "identity", 6):
            if role not in ROLES:
                raise StoreLoadError(f"unknown role {role}")
            if revoked not in ("0", "1"):
                raise StoreLoadError("revoked flag must be 0 or 1")
            try:
                uid_s = _hex(uid, None, "uid").decode("utf-8")
                mid_s = _hex(mid, None, "mid").decode("utf-8")
            except UnicodeDecodeError:
                raise StoreLoadError("identity is not UTF-8") from None
            pw_lane = None if pw == "-" else _hex(pw, LANE, "password")
            if (revoked == "1") != (pw_lane is None):
                raise StoreLoadError("revoked records carry no password and active ones must")
            try:
                store.add(IdentityRecord(uid_s, mid_s, role, pw_lane, _hex(handle, 8, "handle"), revoked == "1"))
            except ProvisioningError as exc:
                raise StoreLoadError(str(exc)) from None
        return store


# -- store bundles -----------------------------------------------------------

@dataclass
class CsStores:
    otp: OtpStore = field(default_factory=OtpStore)
    macs: MacRegistry = field(default_factory=MacRegistry)
    pseudonyms: PseudonymDirectory = field(default_factory=lambda: PseudonymDirectory(CS_HOPS))
    reasons: RevocationReasonCatalog = field(default_factory=RevocationReasonCatalog)

    def save(self, directory: str | Path) -> None:
        Path(directory).mkdir(parents=True, exist_ok=True)
        for s in (self.otp, self.macs, self.pseudonyms, self.reasons):
            s.save(directory)

    @classmethod
    def load(cls, directory: str | Path) -> "CsStores":
        return cls(OtpStore.load(directory), MacRegistry.load(directory),
                   PseudonymDirectory.load(directory), RevocationReasonCatalog.load(directory))


@dataclass
class AsStores:
    credentials: CredentialStore = field(default_factory=CredentialStore)
    pseudonyms: PseudonymDirectory = field(default_factory=lambda: PseudonymDirectory(AS_HOPS))

    def save(self, directory: str | Path) -> None:
        Path(directory).mkdir(parents=True, exist_ok=True)
        self.credentials.save(directory)
        self.pseudonyms.save(directory)

    @classmethod
    def load(cls, directory: str | Path) -> "AsStores":
        return cls(CredentialStore.load(directory), PseudonymDirectory.load(directory))


# -- provisioning ------------------------------------------------------------

@dataclass(frozen=True)
class Identity:
    uid: str
    mid: str
    password: str
    role: str = "patient"


def read_users_file(path: str | Path) -> list[Identity]:
    """``uid mid password role`` per line; ``#`` starts a comment."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (3, 4):
            raise ProvisioningError(f"{path}:{lineno}: expected 'uid mid password [role]'")
        out.append(Identity(*parts))
    return out


@dataclass
class Provisioned:
    cs_key: tuple
    as_key: tuple
    client_keys: list[tuple]
    cs_stores: CsStores
    as_stores: AsStores
    profiles: list  # ClientProfile, one per identity
    identities: list = field(default_factory=list)


def provision(identities: list[Identity], rng, reasons=DEFAULT_REASONS) -> Provisioned:
    """Generate keys, OTPs, pseudonym chains and credentials for ``identities``.

    Deterministic for a seeded ``rng``. Each client profile starts with its
    private key hidden as ``K xor PW xor salt`` and an unused OTP.
    """
    from . import ecies
    from .client import ClientProfile, hide_key

    if not identities:
        raise ProvisioningError("no identities to provision")
    seen = set()
    for ident in identities:
        if (ident.uid, ident.mid) in seen:
            raise ProvisioningError(f"duplicate identity {ident.uid}/{ident.mid}")
        seen.add((ident.uid, ident.mid))
        if ident.role not in ROLES:
            raise ProvisioningError(f"unknown role {ident.role!r}")
        for text in (ident.uid, ident.mid):
            if not text or len(text.encode()) > 64:
                raise ProvisioningError("uid and mid must be 1..64 bytes")
        try:
            password_lane(ident.password)
        except ValidationError as exc:
            raise ProvisioningError(f"{ident.uid}: {exc}") from None

    cs_key = ecies.keygen(rng)
    as_key = ecies.keygen(rng)
    cs = CsStores(reasons=RevocationReasonCatalog(reasons))
    as_ = AsStores()
    client_keys, profiles = [], []
    used: set[bytes] = set()

    def fresh_id() -> bytes:
        while True:
            v = rng.randbytes(PSEUDONYM_WIDTH)
            if v not in used:
                used.add(v)
                return v

    for ident in identities:
        pw = password_lane(ident.password)
        priv, pub = ecies.keygen(rng)
        fp = pub.fingerprint()
        if fp in cs.otp or fp in cs.pseudonyms.handles():
            raise ProvisioningError("client key fingerprint collision")
        chain = {hop: (fresh_id(), fresh_id()) for hop in HOPS}
        otp = rng.randbytes(LANE)
        record_handle = rng.randbytes(8)

        cs.otp.add(fp, otp)
        cs.pseudonyms.add(fp, chain, ident.role)
        as_.pseudonyms.add(record_handle, {h: chain[h] for h in AS_HOPS})
        as_.credentials.add(IdentityRecord(ident.uid, ident.mid, ident.role, pw, record_handle))

        salt = rng.randbytes(LANE)
        profiles.append(ClientProfile(
            public_key=pub,
            cs_public_key=cs_key[1],
            pseudo_out=chain["ci_cs"],
            pseudo_in=chain["cs_ci"],
            otp=otp,
            hidden_key=hide_key(priv, "pw_nonce", pw, salt),
            recipe="pw_nonce",
            salt=salt,
        ))
        client_keys.append((priv, pub))
    return Provisioned(cs_key, as_key, client_keys, cs, as_, profiles, list(identities))


def write_provisioned(p: Provisioned, out: str | Path, labels: list[str] | None = None) -> None:
    """Write ``cs/``, ``as/`` and ``profiles/`` plus the key files under ``out``.

    Client private keys are never written: each profile holds only its
    hidden key.
    """
    from . import ecies

    out = Path(out)
    for sub in ("cs", "as", "profiles"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    p.cs_stores.save(out / "cs")
    p.as_stores.save(out / "as")
    ecies.write_key_file(out / "cs" / "cs.keys", {"cs": p.cs_key})
    ecies.write_key_file(out / "as" / "as.keys", {"as": p.as_key})
    labels = labels or [ident.uid for ident in p.identities]
    public = {"cs": (None, p.cs_key[1]), "as": (None, p.as_key[1])}
    for label, prof in zip(labels, p.profiles):
        public[f"client:{prof.public_key.fingerprint().hex()}"] = (None, prof.public_key)
        prof.save(out / "profiles" / f"{label}.profile")
    ecies.write_key_file(out / "public.keys", public)


def client_public_keys(path: str | Path) -> list:
    """Client entries of a broadcast ``public.keys`` file."""
    from . import ecies

    try:
        keys = ecies.read_key_file(path)
    except (InvalidKey, OSError) as exc:
        raise StoreLoadError(str(exc)) from None
    return [pub for label, (_, pub) in keys.items() if label.startswith("client:")]
