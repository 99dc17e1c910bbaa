"""The central server: the gateway every client talks to.

It checks client requests in a fixed order and stops at the first failure,
swaps pseudonyms at each hop, relays to the attributes server and turns its
answer into the login response. The CS never stores a password; recovered
password lanes live only inside one handler call.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from . import ecies
from .clock import SystemClock, is_fresh
from .datasets import CsStores
from .entity import DEFAULT_DELTA_MS, Entity, Outgoing, client_address
from .errors import Rejection
from .photon import photon_hash, sign
from .wire import LANE, REAL_MAC, Kind, ProtocolMessage, ts_bytes, ts_value, xor_mask

CLIENT_KINDS = (Kind.REG_LOGIN_REQ, Kind.LOGIN_REQ, Kind.CLIENT_ACK, Kind.PW_UPDATE_REQ, Kind.REVOKE_REQ)
AS_KINDS = (Kind.AUTH_RESP, Kind.MAC_DELETE_REQ)


@dataclass
class SessionContext:
    """A login waiting for the AS answer. No password is kept here."""

    peer: bytes
    ts_in: bytes
    n_ci: bytes
    gm: bytes
    phase: str
    n_cs: bytes
    opened_ms: int
    pw_commit: bytes  # h(N_CS || PW), only to check agreement with the AS
    tmp_digest: bytes


def check_freshness(ts_peer: int, clock, delta_ms: int) -> bool:
    return is_fresh(clock.now_ms(), ts_peer, delta_ms)


class CentralServer(Entity):
    name = "cs"

    def __init__(self, keypair, as_public: ecies.PublicKey, client_keys, stores: CsStores,
                 clock=None, rng=None, delta_ms: int = DEFAULT_DELTA_MS):
        super().__init__()
        self.priv, self.pub = keypair
        self.as_public = as_public
        self.client_keys = {k.fingerprint(): k for k in client_keys}
        self.stores = stores
        self.clock = clock or SystemClock()
        if rng is None:
            import random
            rng = random.SystemRandom()
        self.rng = rng
        self.delta_ms = delta_ms
        self.sessions: dict[bytes, SessionContext] = {}
        self.awaiting_ack: dict[bytes, tuple[bytes, int]] = {}
        self.authenticated: list[bytes] = []
        self._lock = threading.Lock()

    # -- plumbing -------------------------------------------------------------

    def _fresh(self, ts: bytes, what: str) -> None:
        self.counters["freshness"] += 1
        if not check_freshness(ts_value(ts), self.clock, self.delta_ms):
            raise self.reject("freshness", what)

    def _sign(self, *parts: bytes) -> bytes:
        self.counters["sig"] += 1
        return sign(*parts)

    def _client_chain(self, fp: bytes, pair) -> bytes:
        self.counters["store"] += 1
        try:
            handle = self.stores.pseudonyms.lookup("ci_cs", pair)
        except Rejection as exc:
            raise self.reject(exc.reason, exc.detail) from None
        if handle != fp:
            raise self.reject("pseudonym-unknown", "pseudonyms belong to another key")
        return handle

    def _nonce(self) -> bytes:
        return self.rng.randbytes(LANE)

    def _to_as(self, msg: ProtocolMessage) -> Outgoing:
        return Outgoing("as", self.seal(self.priv, self.as_public, msg, self.rng), msg.kind.name)

    def _expire(self, now: int) -> None:
        with self._lock:
            for fp in [fp for fp, s in self.sessions.items() if now - s.opened_ms > self.delta_ms]:
                del self.sessions[fp]

    # -- entry point ----------------------------------------------------------

    def handle(self, frame: bytes, peer: str = "") -> list[Outgoing]:
        candidates = [self.as_public, *self.client_keys.values()]
        sender, msg = self.open_envelope(self.priv, frame, candidates, CLIENT_KINDS + AS_KINDS)
        from_as = sender == self.as_public
        if from_as != (msg.kind in AS_KINDS):
            raise self.reject("key", f"{msg.kind.name} from the wrong party")
        self._expire(self.clock.now_ms())
        if msg.kind == Kind.REG_LOGIN_REQ:
            return self.handle_registration_login(sender, msg)
        if msg.kind == Kind.LOGIN_REQ:
            return self.handle_login(sender, msg)
        if msg.kind == Kind.CLIENT_ACK:
            self.finalize_mutual_auth(sender, msg)
            return []
        if msg.kind == Kind.PW_UPDATE_REQ:
            return self.handle_password_update(sender, msg)
        if msg.kind == Kind.REVOKE_REQ:
            return self.handle_revocation(sender, msg)
        if msg.kind == Kind.AUTH_RESP:
            return self.handle_auth_response(msg)
        self.handle_mac_delete(msg)
        return []

    # -- registration and login ----------------------------------------------

    def handle_registration_login(self, sender: ecies.PublicKey, msg: ProtocolMessage) -> list[Outgoing]:
        fp = sender.fingerprint()
        now = self.clock.now_ms()
        self._fresh(msg["ts"], "registration")
        self.check_replay((fp, msg["n"]), now, self.delta_ms)
        self.counters["store"] += 1
        if not self.stores.otp.consume(fp, msg["otp"]):
            raise self.reject("otp-unknown", "one-time password not on file")
        sig1 = self._sign(REAL_MAC, msg["n"], msg["ts"])
        if sig1 != msg["sig1"]:
            raise self.reject("mac-fake", "hardware address check failed")
        up, mp = msg["up"], msg["mp"]
        self._client_chain(fp, (up, mp))
        pw = xor_mask(msg["tmp_pw"], [msg["n"], msg["gm"], sig1])
        sig2 = self._sign(msg["gm"], msg["n"], msg["ts"], sig1, up, mp, msg["otp"], pw)
        if sig2 != msg["sig2"]:
            raise self.reject("sig-mismatch", "registration signature")
        self.counters["store"] += 1
        self.stores.macs.save_mac((up, mp), msg["gm"])
        self.note("accept", kind="REG_LOGIN_REQ")
        return [self._forward_auth(fp, msg, "reg", pw, tmp_digest=photon_hash(msg["tmp_pw"] + msg["otp"]))]

    def handle_login(self, sender: ecies.PublicKey, msg: ProtocolMessage) -> list[Outgoing]:
        fp = sender.fingerprint()
        now = self.clock.now_ms()
        self._fresh(msg["ts"], "login")
        self.check_replay((fp, msg["n"]), now, self.delta_ms)
        up, mp = msg["up"], msg["mp"]
        self._client_chain(fp, (up, mp))
        self.counters["store"] += 1
        gm = self.stores.macs.get((up, mp))
        if gm is None:
            raise self.reject("identity", "no registered device for these pseudonyms")
        sig1 = self._sign(REAL_MAC, msg["n"], msg["ts"])
        if sig1 != msg["sig1"]:
            raise self.reject("mac-fake", "hardware address check failed")
        pw = xor_mask(msg["tmp_pw"], [msg["n"], gm, sig1])
        sig2 = self._sign(gm, msg["n"], msg["ts"], sig1, up, mp, pw)
        if sig2 != msg["sig2"]:
            raise self.reject("sig-mismatch", "login signature")
        self.note("accept", kind="LOGIN_REQ")
        return [self._forward_auth(fp, msg, "login", pw, gm, tmp_digest=photon_hash(msg["tmp_pw"]))]

    def _forward_auth(self, fp: bytes, msg: ProtocolMessage, phase: str, pw: bytes, gm: bytes | None = None,
                      tmp_digest: bytes = b"") -> Outgoing:
        ts, n = ts_bytes(self.clock.now_ms()), self._nonce()
        up, mp = self.stores.pseudonyms.translate((msg["up"], msg["mp"]), "ci_cs", "cs_as")
        sig3 = self._sign(ts, n, up, mp)
        out = ProtocolMessage.build(Kind.AUTH_REQ, ts=ts, n=n, up=up, mp=mp, sig3=sig3,
                                    tmp_pw=xor_mask(pw, [n, sig3]))
        with self._lock:
            self.sessions[fp] = SessionContext(fp, msg["ts"], msg["n"], gm if gm is not None else msg["gm"],
                                               phase, n, self.clock.now_ms(), photon_hash(n + pw), tmp_digest)
        self.note("witness", goal="cs_as", n=n, ts=ts)
        self.note("request", goal="ci_cs", n=msg["n"], ts=msg["ts"])
        return self._to_as(out)

    def handle_auth_response(self, msg: ProtocolMessage) -> list[Outgoing]:
        now = self.clock.now_ms()
        self._fresh(msg["ts"], "attributes server response")
        self.check_replay(("as", msg["n"]), now, self.delta_ms)
        self.counters["store"] += 1
        try:
            fp = self.stores.pseudonyms.lookup("as_cs", (msg["up"], msg["mp"]))
        except Rejection as exc:
            raise self.reject(exc.reason, exc.detail) from None
        with self._lock:
            session = self.sessions.get(fp)
        if session is None:
            raise self.reject("no-session", "no login waiting for this answer")
        sig4 = self._sign(msg["ts"], msg["n"], msg["up"], msg["mp"])
        if sig4 != msg["sig2"]:
            raise self.reject("sig-mismatch", "attributes server signature")
        ts, n = ts_bytes(now), self._nonce()
        up, mp = self.stores.pseudonyms.pairs(fp)["cs_ci"]
        out = ProtocolMessage.build(Kind.LOGIN_RESP, ts=ts, n=n, up=up, mp=mp, sig5=self._sign(ts, n, up, mp))
        with self._lock:
            self.sessions.pop(fp, None)
            self.awaiting_ack[fp] = (n, now)
        self.note("request", goal="as_cs", n=msg["n"], ts=msg["ts"])
        self.note("request", goal="as_cs_pw", digest=session.pw_commit)
        self.note("witness", goal="cs_ci", n=n, ts=ts)
        self.note("witness", goal="cs_ci_tmp", digest=session.tmp_digest)
        client = self.client_keys[fp]
        return [Outgoing(client_address(client), self.seal(self.priv, client, out, self.rng), out.kind.name)]

    def finalize_mutual_auth(self, sender: ecies.PublicKey, msg: ProtocolMessage) -> bool:
        fp = sender.fingerprint()
        with self._lock:
            expected = self.awaiting_ack.get(fp)
            if expected is None or expected[0] != msg["n"]:
                expected = None
            else:
                del self.awaiting_ack[fp]
        if expected is None:
            raise self.reject("auth-failure", "acknowledgement does not echo the open nonce")
        self.authenticated.append(fp)
        self.note("request", goal="ci_cs_ack", n=msg["n"])
        self.note("authenticated", peer=fp.hex())
        return True

    # -- password update and revocation --------------------------------------

    def handle_password_update(self, sender: ecies.PublicKey, msg: ProtocolMessage) -> list[Outgoing]:
        fp = sender.fingerprint()
        now = self.clock.now_ms()
        self._fresh(msg["ts"], "password update")
        self.check_replay((fp, msg["n1"]), now, self.delta_ms)
        pair = (msg["up"], msg["mp"])
        self._client_chain(fp, pair)
        old = xor_mask(msg["tmp_old"], [msg["n2"], msg["sig1"]])
        new = xor_mask(msg["tmp_new"], [msg["n3"], msg["sig1"]])
        if self._sign(msg["ts"], msg["n1"], msg["up"], msg["mp"], old) != msg["sig1"]:
            raise self.reject("sig-mismatch", "password update signature")
        ts = ts_bytes(now)
        n1, n2, n3 = self._nonce(), self._nonce(), self._nonce()
        up, mp = self.stores.pseudonyms.translate(pair, "ci_cs", "cs_as")
        sig2 = self._sign(ts, n1, up, mp, old)
        out = ProtocolMessage.build(
            Kind.PW_UPDATE_FWD, ts=ts, n1=n1, n2=n2, n3=n3, up=up, mp=mp,
            tmp_old=xor_mask(old, [n2, sig2]), tmp_new=xor_mask(new, [n3, sig2]), sig2=sig2,
        )
        self.note("accept", kind="PW_UPDATE_REQ")
        return [self._to_as(out)]

    def handle_revocation(self, sender: ecies.PublicKey, msg: ProtocolMessage) -> list[Outgoing]:
        fp = sender.fingerprint()
        now = self.clock.now_ms()
        self._fresh(msg["ts"], "revocation")
        self.check_replay((fp, msg["n1"]), now, self.delta_ms)
        pair = (msg["up"], msg["mp"])
        self._client_chain(fp, pair)
        rr = xor_mask(msg["tmp_rr"], [msg["n2"], msg["sig1"]])
        pw = xor_mask(msg["tmp_pw"], [msg["n3"], msg["sig1"]])
        if self._sign(msg["ts"], msg["n1"], msg["up"], msg["mp"], rr, pw, b"delete") != msg["sig1"]:
            raise self.reject("sig-mismatch", "revocation signature")
        self.counters["store"] += 1
        reason = self.stores.reasons.lookup(xor_mask(rr, [msg["n1"]]))
        if reason is None:
            raise self.reject("reason-unknown", "revocation reason not in the catalog")
        role = self.stores.pseudonyms.role(fp)
        if role not in reason[1]:
            raise self.reject("role-mismatch", f"role {role} may not give this reason")
        ts = ts_bytes(now)
        n1, n2 = self._nonce(), self._nonce()
        up, mp = self.stores.pseudonyms.translate(pair, "ci_cs", "cs_as")
        sig2 = self._sign(ts, n1, up, mp, pw, b"delete_PW_i_UP_MP")
        out = ProtocolMessage.build(Kind.REVOKE_FWD, ts=ts, n1=n1, n2=n2, up=up, mp=mp,
                                    tmp_pw=xor_mask(pw, [n2, sig2]), sig2=sig2)
        self.note("accept", kind="REVOKE_REQ", reason=reason[0])
        return [self._to_as(out)]

    def handle_mac_delete(self, msg: ProtocolMessage) -> bool:
        now = self.clock.now_ms()
        self._fresh(msg["ts"], "device removal")
        self.check_replay(("as", msg["n"]), now, self.delta_ms)
        self.counters["store"] += 1
        try:
            fp = self.stores.pseudonyms.lookup("as_cs", (msg["up"], msg["mp"]))
        except Rejection as exc:
            raise self.reject(exc.reason, exc.detail) from None
        if self._sign(msg["ts"], msg["up"], msg["mp"], msg["n"], b"delete_MAC") != msg["sig2"]:
            raise self.reject("sig-mismatch", "device removal signature")
        self.stores.macs.delete(self.stores.pseudonyms.pairs(fp)["ci_cs"])
        self.stores.otp.discard(fp)
        with self._lock:
            self.sessions.pop(fp, None)
            self.awaiting_ack.pop(fp, None)
        self.note("mac-deleted", peer=fp.hex())
        return True
