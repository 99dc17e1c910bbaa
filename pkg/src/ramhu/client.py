"""The client device: key hiding, the device probe and every client-side message.

The client never stores its private key in the clear. Between runs the key
is kept XOR-masked with the password and a salt (and, once logged in, the
hardware address). Which operands were used is recorded as a recipe tag
next to the salt, so the matching unmask is always known:

==============  ===============================  ============================
recipe          mask                             set by
==============  ===============================  ============================
``pw_nonce``    K xor PW xor N                   provisioning
``pw_sig2``     K xor PW xor Sig2                sending a registration/login
``gm_pw_nonce`` K xor GM xor PW xor N            login response, update, revoke
==============  ===============================  ============================
"""

from __future__ import annotations

import os
import subprocess
from dataclasses import dataclass
from pathlib import Path

from . import ecies
from .clock import SystemClock, is_fresh
from .datasets import DEFAULT_REASONS
from .entity import DEFAULT_DELTA_MS, Entity, Outgoing
from .errors import DeviceError, Rejection, StateError, StoreLoadError, ValidationError
from .photon import photon_hash, sign
from .wire import (
    FAKE_MAC,
    LANE,
    PSEUDONYM_WIDTH,
    REAL_MAC,
    Kind,
    ProtocolMessage,
    mac_lane,
    password_lane,
    ts_bytes,
    ts_value,
    xor_mask,
)

RECIPES = ("pw_nonce", "pw_sig2", "gm_pw_nonce")


# -- key hiding --------------------------------------------------------------

def _mask_operands(recipe: str, pw_lane: bytes, salt: bytes, gm_lane: bytes | None) -> list[bytes]:
    if recipe in ("pw_nonce", "pw_sig2"):
        return [pw_lane, salt]
    if recipe == "gm_pw_nonce":
        if gm_lane is None:
            raise StateError("this recipe needs the hardware address")
        return [gm_lane, pw_lane, salt]
    raise StateError(f"unknown key recipe {recipe!r}")


def hide_key(key: ecies.PrivateKey, recipe: str, pw_lane: bytes, salt: bytes, gm_lane: bytes | None = None) -> bytes:
    return xor_mask(key.to_bytes(), _mask_operands(recipe, pw_lane, salt, gm_lane))


def recover_key(hidden: bytes, recipe: str, pw_lane: bytes, salt: bytes, gm_lane: bytes | None = None,
                curve=ecies.ec.DEFAULT_CURVE) -> ecies.PrivateKey:
    """Unmask the hidden key.

    A wrong password still yields *some* valid scalar, so the mistake shows
    up at the server as a failed envelope rather than locally.
    """
    scalar = int.from_bytes(xor_mask(hidden, _mask_operands(recipe, pw_lane, salt, gm_lane)), "big")
    return ecies.PrivateKey(scalar % curve.n or 1, curve)


# -- device identity ---------------------------------------------------------

@dataclass(frozen=True)
class DeviceIdentity:
    gm: bytes
    cm: bytes

    def __post_init__(self) -> None:
        if len(self.gm) != 6:
            raise ValueError("hardware address must be 6 bytes")
        if self.cm not in (REAL_MAC, FAKE_MAC):
            raise ValueError("cm must be Real_MAC or Fake_MAC")


class SimulatedProbe:
    """Scripted probe.

    ``permanent`` is the burned-in address; when ``active`` differs from it the
    address has been changed (the Linux rule). ``override`` models a
    NetworkAddress registry value (the Windows rule); any value means spoofed.
    """

    def __init__(self, active: bytes | None, permanent: bytes | None = None, override: bytes | None = None):
        self.active = active
        self.permanent = active if permanent is None else permanent
        self.override = override

    def read(self) -> tuple[bytes, bytes | None, bytes | None]:
        if self.active is None:
            raise DeviceError("no network interface")
        return self.active, self.permanent, self.override


class LinuxProbe:
    """Reads the first non-loopback interface from sysfs.

    The permanent address comes from ``ethtool -P`` when available. Without
    ethtool the kernel's ``addr_assign_type`` stands in: 0 means the address
    is the one the hardware reported.
    """

    def __init__(self, interface: str | None = None, sysfs: str = "/sys/class/net"):
        self.interface = interface
        self.sysfs = Path(sysfs)

    def _pick(self) -> str:
        if self.interface:
            return self.interface
        try:
            names = sorted(os.listdir(self.sysfs))
        except OSError:
            names = []
        for name in names:
            if name == "lo":
                continue
            if (self.sysfs / name / "address").exists():
                return name
        raise DeviceError("no network interface")

    def read(self) -> tuple[bytes, bytes | None, bytes | None]:
        name = self._pick()
        try:
            active = bytes.fromhex((self.sysfs / name / "address").read_text().strip().replace(":", ""))
        except (OSError, ValueError):
            raise DeviceError(f"cannot read address of {name}") from None
        if len(active) != 6:
            raise DeviceError(f"{name} has no 48-bit hardware address")
        permanent = None
        try:
            out = subprocess.run(["ethtool", "-P", name], capture_output=True, text=True, timeout=5).stdout
            permanent = bytes.fromhex(out.rsplit(" ", 1)[-1].strip().replace(":", ""))
            if len(permanent) != 6 or not any(permanent):
                permanent = None
        except (OSError, ValueError, subprocess.SubprocessError):
            permanent = None
        if permanent is None:
            try:
                assign = (self.sysfs / name / "addr_assign_type").read_text().strip()
            except OSError:
                assign = ""
            permanent = active if assign == "0" else b"\x00" * 6
        return active, permanent, None


def probe_device_identity(probe) -> DeviceIdentity:
    active, permanent, override = probe.read()
    native = override is None and permanent == active
    return DeviceIdentity(active, REAL_MAC if native else FAKE_MAC)


# -- profile -----------------------------------------------------------------

@dataclass
class ClientProfile:
    """Everything the device keeps between runs.

    Real identities and the password are deliberately absent: a stolen
    profile yields pseudonyms and a masked key, nothing more.
    """

    public_key: ecies.PublicKey
    cs_public_key: ecies.PublicKey
    pseudo_out: tuple[bytes, bytes]
    pseudo_in: tuple[bytes, bytes]
    otp: bytes | None
    hidden_key: bytes
    recipe: str
    salt: bytes

    @property
    def registered(self) -> bool:
        return self.otp is None

    def to_text(self) -> str:
        rows = [
            ("public_key", self.public_key.to_bytes().hex()),
            ("cs_public_key", self.cs_public_key.to_bytes().hex()),
            ("pseudo_out", f"{self.pseudo_out[0].hex()} {self.pseudo_out[1].hex()}"),
            ("pseudo_in", f"{self.pseudo_in[0].hex()} {self.pseudo_in[1].hex()}"),
            ("otp", self.otp.hex() if self.otp else "-"),
            ("hidden_key", self.hidden_key.hex()),
            ("recipe", self.recipe),
            ("salt", self.salt.hex()),
        ]
        return "".join(f"{k} {v}\n" for k, v in rows)

    @classmethod
    def from_text(cls, text: str) -> "ClientProfile":
        rows = {}
        for line in text.splitlines():
            if line.strip():
                key, _, val = line.partition(" ")
                rows[key] = val.strip()
        try:
            def pair(v):
                a, b = v.split()
                a, b = bytes.fromhex(a), bytes.fromhex(b)
                if len(a) != PSEUDONYM_WIDTH or len(b) != PSEUDONYM_WIDTH:
                    raise ValueError("pseudonym width")
                return a, b

            def lane(v):
                raw = bytes.fromhex(v)
                if len(raw) != LANE:
                    raise ValueError("lane width")
                return raw

            recipe = rows["recipe"]
            if recipe not in RECIPES:
                raise ValueError(f"unknown recipe {recipe}")
            return cls(
                public_key=ecies.PublicKey.from_bytes(bytes.fromhex(rows["public_key"])),
                cs_public_key=ecies.PublicKey.from_bytes(bytes.fromhex(rows["cs_public_key"])),
                pseudo_out=pair(rows["pseudo_out"]),
                pseudo_in=pair(rows["pseudo_in"]),
                otp=None if rows["otp"] == "-" else lane(rows["otp"]),
                hidden_key=lane(rows["hidden_key"]),
                recipe=recipe,
                salt=lane(rows["salt"]),
            )
        except (KeyError, ValueError, ecies.InvalidKey) as exc:
            raise StoreLoadError(f"bad profile: {exc}") from None

    def save(self, path: str | Path) -> None:
        from .datasets import _atomic_write

        _atomic_write(Path(path), self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "ClientProfile":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise StoreLoadError(f"cannot read profile {path}: {exc}") from None


# -- the client entity -------------------------------------------------------

@dataclass
class _Pending:
    kind: Kind
    ts: bytes
    n: bytes
    pw_lane: bytes
    sig2: bytes
    gm_lane: bytes
    tmp_digest: bytes


class Client(Entity):
    """One user's device. Methods build outbound frames and process the login response."""

    def __init__(self, profile: ClientProfile, probe, clock=None, rng=None,
                 delta_ms: int = DEFAULT_DELTA_MS, reasons=DEFAULT_REASONS):
        super().__init__()
        self.profile = profile
        self.probe = probe
        self.clock = clock or SystemClock()
        self.rng = rng or _system_rng()
        self.delta_ms = delta_ms
        self.reason_digests = [photon_hash(text.encode("utf-8")) for text, _ in reasons]
        self.pending: _Pending | None = None
        self.authenticated = False
        self.sent_nonces: list[bytes] = []
        self.name = f"client:{profile.public_key.fingerprint().hex()}"

    @property
    def address(self) -> str:
        return self.name

    # helpers

    def _nonce(self) -> bytes:
        n = self.rng.randbytes(LANE)
        self.sent_nonces.append(n)
        return n

    def _device(self) -> tuple[DeviceIdentity, bytes]:
        dev = probe_device_identity(self.probe)
        return dev, mac_lane(dev.gm)

    def _current_key(self, pw_lane: bytes, gm_lane: bytes) -> ecies.PrivateKey:
        p = self.profile
        return recover_key(p.hidden_key, p.recipe, pw_lane, p.salt, gm_lane if p.recipe == "gm_pw_nonce" else None)

    def _rehide(self, key: ecies.PrivateKey, recipe: str, pw_lane: bytes, salt: bytes, gm_lane: bytes | None) -> None:
        p = self.profile
        p.hidden_key = hide_key(key, recipe, pw_lane, salt, gm_lane)
        p.recipe = recipe
        p.salt = salt

    def _seal(self, key: ecies.PrivateKey, msg: ProtocolMessage) -> bytes:
        return self.seal(key, self.profile.cs_public_key, msg, self.rng, sender_public=self.profile.public_key)

    def _check_password(self, pw_lane: bytes, gm_lane: bytes) -> ecies.PrivateKey:
        key = self._current_key(pw_lane, gm_lane)
        if key.public_key() != self.profile.public_key:
            raise ValidationError("password does not match this profile")
        return key

    # registration and login

    def build_registration_login(self, password: str) -> bytes:
        p = self.profile
        if p.otp is None:
            raise StateError("no unused one-time password in this profile")
        pw = password_lane(password)
        dev, gm = self._device()
        key = self._current_key(pw, gm)
        ts, n = ts_bytes(self.clock.now_ms()), self._nonce()
        up, mp = p.pseudo_out
        sig1 = sign(dev.cm, n, ts)
        sig2 = sign(gm, n, ts, sig1, up, mp, p.otp, pw)
        msg = ProtocolMessage.build(
            Kind.REG_LOGIN_REQ, ts=ts, n=n, gm=gm, sig1=sig1, up=up, mp=mp,
            otp=p.otp, tmp_pw=xor_mask(pw, [n, gm, sig1]), sig2=sig2,
        )
        frame = self._seal(key, msg)
        self._rehide(key, "pw_sig2", pw, sig2, None)
        tmp_digest = photon_hash(msg["tmp_pw"] + p.otp)
        p.otp = None
        self.pending = _Pending(Kind.REG_LOGIN_REQ, ts, n, pw, sig2, gm, tmp_digest)
        self.authenticated = False
        self.note("witness", goal="ci_cs", n=n, ts=ts)
        return frame

    def build_login(self, password: str) -> bytes:
        p = self.profile
        if not p.registered:
            raise StateError("profile is not registered yet")
        pw = password_lane(password)
        dev, gm = self._device()
        key = self._current_key(pw, gm)
        ts, n = ts_bytes(self.clock.now_ms()), self._nonce()
        up, mp = p.pseudo_out
        sig1 = sign(dev.cm, n, ts)
        sig2 = sign(gm, n, ts, sig1, up, mp, pw)
        msg = ProtocolMessage.build(
            Kind.LOGIN_REQ, ts=ts, n=n, sig1=sig1, up=up, mp=mp,
            tmp_pw=xor_mask(pw, [n, gm, sig1]), sig2=sig2,
        )
        frame = self._seal(key, msg)
        self._rehide(key, "pw_sig2", pw, sig2, None)
        self.pending = _Pending(Kind.LOGIN_REQ, ts, n, pw, sig2, gm, photon_hash(msg["tmp_pw"]))
        self.authenticated = False
        self.note("witness", goal="ci_cs", n=n, ts=ts)
        return frame

    def process_login_response(self, frame: bytes) -> bytes:
        """Verify the server's answer; returns the CLIENT_ACK frame on success."""
        pend = self.pending
        if pend is None:
            raise self.reject("no-session", "no login in progress")
        p = self.profile
        key = recover_key(p.hidden_key, p.recipe, pend.pw_lane, p.salt,
                          pend.gm_lane if p.recipe == "gm_pw_nonce" else None)
        _, msg = self.open_envelope(key, frame, [p.cs_public_key], Kind.LOGIN_RESP)
        if not is_fresh(self.clock.now_ms(), ts_value(msg["ts"]), self.delta_ms):
            raise self.reject("freshness", "stale login response")
        if (msg["up"], msg["mp"]) != p.pseudo_in:
            raise self.reject("identity", "response pseudonyms are not linked to this user")
        sig3 = sign(msg["ts"], msg["n"], msg["up"], msg["mp"])
        if sig3 != msg["sig5"]:
            raise self.reject("sig-mismatch", "server signature")
        salt = self.rng.randbytes(LANE)
        self._rehide(key, "gm_pw_nonce", pend.pw_lane, salt, pend.gm_lane)
        self.pending = None
        self.authenticated = True
        self.note("request", goal="cs_ci", n=msg["n"], ts=msg["ts"])
        self.note("request", goal="cs_ci_tmp", digest=pend.tmp_digest)
        self.note("witness", goal="ci_cs_ack", n=msg["n"])
        return self._seal(key, ProtocolMessage.build(Kind.CLIENT_ACK, n=msg["n"]))

    # password update and revocation

    def build_password_update(self, old_password: str, new_password: str) -> bytes:
        p = self.profile
        if not p.registered:
            raise StateError("profile is not registered yet")
        old, new = password_lane(old_password), password_lane(new_password)
        dev, gm = self._device()
        key = self._check_password(old, gm)
        ts = ts_bytes(self.clock.now_ms())
        n1, n2, n3 = self._nonce(), self._nonce(), self._nonce()
        up, mp = p.pseudo_out
        sig1 = sign(ts, n1, up, mp, old)
        msg = ProtocolMessage.build(
            Kind.PW_UPDATE_REQ, ts=ts, n1=n1, n2=n2, n3=n3, up=up, mp=mp,
            tmp_old=xor_mask(old, [n2, sig1]), tmp_new=xor_mask(new, [n3, sig1]), sig1=sig1,
        )
        frame = self._seal(key, msg)
        self._rehide(key, "gm_pw_nonce", new, self.rng.randbytes(LANE), gm)
        self.note("sent", kind="PW_UPDATE_REQ")
        return frame

    def build_revocation(self, password: str, reason_index: int) -> bytes:
        p = self.profile
        if not p.registered:
            raise StateError("profile is not registered yet")
        if not 0 <= reason_index < len(self.reason_digests):
            raise ValidationError(f"reason index {reason_index} is not in the list")
        pw = password_lane(password)
        dev, gm = self._device()
        key = self._current_key(pw, gm)
        ts = ts_bytes(self.clock.now_ms())
        n1, n2, n3 = self._nonce(), self._nonce(), self._nonce()
        up, mp = p.pseudo_out
        rr = xor_mask(self.reason_digests[reason_index], [n1])
        sig1 = sign(ts, n1, up, mp, rr, pw, b"delete")
        msg = ProtocolMessage.build(
            Kind.REVOKE_REQ, ts=ts, n1=n1, n2=n2, n3=n3, up=up, mp=mp,
            tmp_rr=xor_mask(rr, [n2, sig1]), tmp_pw=xor_mask(pw, [n3, sig1]), sig1=sig1,
        )
        frame = self._seal(key, msg)
        self._rehide(key, "gm_pw_nonce", pw, self.rng.randbytes(LANE), gm)
        self.note("sent", kind="REVOKE_REQ")
        return frame

    # network entry point

    def handle(self, frame: bytes, peer: str) -> list[Outgoing]:
        return [Outgoing("cs", self.process_login_response(frame), "CLIENT_ACK")]


def _system_rng():
    import random

    return random.SystemRandom()
