"""The attributes server: the only place that links pseudonyms to real identities.

It answers the central server's authentication requests, applies password
changes and carries out revocations, either on request or on its own
initiative through :meth:`AttributesServer.admin_revoke`.
"""

from __future__ import annotations

from typing import Callable

from . import ecies
from .clock import SystemClock, is_fresh
from .datasets import AsStores, IdentityRecord
from .entity import DEFAULT_DELTA_MS, Entity, Outgoing
from .errors import AdminError, Rejection
from .photon import photon_hash, sign
from .wire import LANE, Kind, ProtocolMessage, ts_bytes, ts_value, xor_mask


class AttributesServer(Entity):
    name = "as"

    def __init__(self, keypair, cs_public: ecies.PublicKey, stores: AsStores,
                 clock=None, rng=None, delta_ms: int = DEFAULT_DELTA_MS,
                 fault: Callable[[str], None] | None = None):
        super().__init__()
        self.priv, self.pub = keypair
        self.cs_public = cs_public
        self.stores = stores
        self.clock = clock or SystemClock()
        if rng is None:
            import random
            rng = random.SystemRandom()
        self.rng = rng
        self.delta_ms = delta_ms
        # test hook called at named points; raising from it simulates a crash
        self.fault = fault or (lambda stage: None)

    # -- plumbing -------------------------------------------------------------

    def _fresh(self, ts: bytes, what: str) -> None:
        self.counters["freshness"] += 1
        if not is_fresh(self.clock.now_ms(), ts_value(ts), self.delta_ms):
            raise self.reject("freshness", what)

    def _sign(self, *parts: bytes) -> bytes:
        self.counters["sig"] += 1
        return sign(*parts)

    def _linked(self, msg: ProtocolMessage) -> IdentityRecord:
        self.counters["store"] += 1
        try:
            handle = self.stores.pseudonyms.lookup("cs_as", (msg["up"], msg["mp"]))
        except Rejection:
            raise self.reject("identity", "pseudonyms not linked to an identity") from None
        rec = self.stores.credentials.get(handle)
        if rec is None or rec.revoked:
            raise self.reject("identity", "identity revoked or missing")
        return rec

    def _to_cs(self, msg: ProtocolMessage) -> Outgoing:
        return Outgoing("cs", self.seal(self.priv, self.cs_public, msg, self.rng), msg.kind.name)

    # -- entry point ----------------------------------------------------------

    def handle(self, frame: bytes, peer: str = "") -> list[Outgoing]:
        _, msg = self.open_envelope(self.priv, frame, [self.cs_public],
                                    (Kind.AUTH_REQ, Kind.PW_UPDATE_FWD, Kind.REVOKE_FWD))
        if msg.kind == Kind.AUTH_REQ:
            return [self.handle_auth_request(msg)]
        if msg.kind == Kind.PW_UPDATE_FWD:
            self.handle_password_update_forward(msg)
            return []
        return [self.handle_revocation_forward(msg)]

    # -- operations -----------------------------------------------------------

    def handle_auth_request(self, msg: ProtocolMessage) -> Outgoing:
        now = self.clock.now_ms()
        self._fresh(msg["ts"], "authentication request")
        self.check_replay(("cs", msg["n"]), now, self.delta_ms)
        rec = self._linked(msg)
        pw = xor_mask(msg["tmp_pw"], [msg["n"], msg["sig3"]])
        if pw != rec.pw_lane:
            raise self.reject("pw-mismatch", "password does not match the record")
        if self._sign(msg["ts"], msg["n"], msg["up"], msg["mp"]) != msg["sig3"]:
            raise self.reject("sig-mismatch", "central server signature")
        ts, n = ts_bytes(now), self.rng.randbytes(LANE)
        up, mp = self.stores.pseudonyms.pairs(rec.handle)["as_cs"]
        out = ProtocolMessage.build(Kind.AUTH_RESP, ts=ts, n=n, up=up, mp=mp, sig2=self._sign(ts, n, up, mp))
        self.note("request", goal="cs_as", n=msg["n"], ts=msg["ts"])
        self.note("witness", goal="as_cs", n=n, ts=ts)
        self.note("witness", goal="as_cs_pw", digest=photon_hash(msg["n"] + pw))
        return self._to_cs(out)

    def handle_password_update_forward(self, msg: ProtocolMessage) -> bool:
        now = self.clock.now_ms()
        self._fresh(msg["ts"], "password update")
        self.check_replay(("cs", msg["n1"]), now, self.delta_ms)
        rec = self._linked(msg)
        old = xor_mask(msg["tmp_old"], [msg["n2"], msg["sig2"]])
        if old != rec.pw_lane:
            raise self.reject("pw-mismatch", "old password does not match the record")
        if self._sign(msg["ts"], msg["n1"], msg["up"], msg["mp"], old) != msg["sig2"]:
            raise self.reject("sig-mismatch", "password update signature")
        new = xor_mask(msg["tmp_new"], [msg["n3"], msg["sig2"]])
        self.fault("pw_update_before_write")
        if not self.stores.credentials.set_password(rec.handle, old, new):
            raise self.reject("pw-mismatch", "record changed underneath the update")
        self.note("password-changed", record=rec.handle.hex())
        return True

    def handle_revocation_forward(self, msg: ProtocolMessage) -> Outgoing:
        now = self.clock.now_ms()
        self._fresh(msg["ts"], "revocation")
        self.check_replay(("cs", msg["n1"]), now, self.delta_ms)
        rec = self._linked(msg)
        pw = xor_mask(msg["tmp_pw"], [msg["n2"], msg["sig2"]])
        if pw != rec.pw_lane:
            raise self.reject("pw-mismatch", "password does not match the record")
        if self._sign(msg["ts"], msg["n1"], msg["up"], msg["mp"], pw, b"delete_PW_i_UP_MP") != msg["sig2"]:
            raise self.reject("sig-mismatch", "revocation signature")
        return self._to_cs(self._revoke(rec))

    def _revoke(self, rec: IdentityRecord) -> ProtocolMessage:
        """Erase the password and pseudonym links, then ask the CS to forget the device."""
        up, mp = self.stores.pseudonyms.pairs(rec.handle)["as_cs"]
        ts, n = ts_bytes(self.clock.now_ms()), self.rng.randbytes(LANE)
        out = ProtocolMessage.build(Kind.MAC_DELETE_REQ, ts=ts, up=up, mp=mp,
                                    sig2=self._sign(ts, up, mp, n, b"delete_MAC"), n=n)
        self.fault("revoke_before_write")
        if not self.stores.credentials.revoke(rec.handle):
            raise self.reject("identity", "already revoked")
        self.stores.pseudonyms.sever(rec.handle)
        self.note("revoked", record=rec.handle.hex())
        return out

    def admin_revoke(self, uid: str, mid: str) -> Outgoing:
        """Revoke a user without any client request."""
        rec = self.stores.credentials.find(uid, mid)
        if rec is None:
            if self.stores.credentials.find_any(uid, mid) is not None:
                raise AdminError(f"{uid}/{mid} is already revoked")
            raise AdminError(f"unknown identity {uid}/{mid}")
        return self._to_cs(self._revoke(rec))
