"""Dolev-Yao scenario runner.

The adversary owns the channel: it sees every frame on every link, and can
drop, duplicate, rewrite or inject frames and move the clock. It cannot break
the primitives. Each scenario drives one attack against a freshly
provisioned world and records one report line per adversarial action:

    scenario action entity verdict expected pass|fail

After the attack, every scenario runs the same secrecy scan. The harness
decrypts the honest traffic with the honest keys (it is an oracle, not the
adversary) to learn which secret values were in play. It then checks that
none of those bytes appear anywhere in the ciphertext the adversary saw.

Everything is driven by a :class:`~ramhu.clock.LogicalClock` and seeded
``random.Random`` instances, so a (scenario, seed) pair always produces the
same report.
"""

from __future__ import annotations

import copy
import random
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable

from . import ecies
from .attributes_server import AttributesServer
from .central_server import CentralServer
from .client import Client, SimulatedProbe
from .clock import LogicalClock
from .datasets import Identity, provision
from .entity import DEFAULT_DELTA_MS
from .errors import HarnessError, IntegrityError, InvalidKey, RamhuError
from .network import Capture, Delivery, Network, drop_if, duplicate_if, edit_if
from .photon import photon_hash, sign
from .wire import (
    FAKE_MAC,
    LANE,
    REAL_MAC,
    Kind,
    ProtocolMessage,
    decode,
    encode,
    mac_lane,
    password_lane,
    ts_bytes,
    xor_mask,
)

USERS = (
    Identity("uid-amelia-rossi", "mid-st-mary-clinic", "amelia-horse-battery", "patient"),
    Identity("uid-bruno-keller", "mid-st-mary-clinic", "bruno.pass.phrase77", "doctor"),
    Identity("uid-chen-li", "mid-north-health", "chen-li-secret-2024", "researcher"),
)
MACS = (bytes.fromhex("3c22fb1a7701"), bytes.fromhex("3c22fb1a7702"), bytes.fromhex("a4b1c2d3e4f5"))
OTHER_MAC = bytes.fromhex("020000c0ffee")

BODY = 24  # envelope bytes before the ciphertext body: 8-byte hint, 16-byte nonce
ALL_KINDS = tuple(Kind)
CLIENT_KINDS = {Kind.REG_LOGIN_REQ, Kind.LOGIN_REQ, Kind.PW_UPDATE_REQ, Kind.REVOKE_REQ, Kind.CLIENT_ACK}
CS_TO_AS = {Kind.AUTH_REQ, Kind.PW_UPDATE_FWD, Kind.REVOKE_FWD}
AS_TO_CS = {Kind.AUTH_RESP, Kind.MAC_DELETE_REQ}


# -- report --------------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    scenario: str
    action: str
    entity: str
    verdict: str
    expected: str
    ok: bool

    def line(self) -> str:
        return f"{self.scenario} {self.action} {self.entity} {self.verdict} {self.expected} {'pass' if self.ok else 'fail'}"


@dataclass
class Report:
    scenario: str
    seed: int
    steps: list[Step] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.steps) and all(s.ok for s in self.steps)

    def lines(self) -> list[str]:
        return [s.line() for s in self.steps]

    def failures(self) -> list[Step]:
        return [s for s in self.steps if not s.ok]


class Recorder:
    def __init__(self, report: Report) -> None:
        self.report = report

    def check(self, action: str, entity: str, ok: bool, verdict: str, expected: str) -> bool:
        self.report.steps.append(Step(self.report.scenario, action, entity, verdict, expected, bool(ok)))
        return ok

    def reject(self, action: str, entity: str, verdict: str, allowed: set[str]) -> bool:
        return self.check(action, entity, verdict in allowed, verdict, "reject:" + "|".join(sorted(allowed)))

    def accept(self, action: str, entity: str, verdict: str) -> bool:
        return self.check(action, entity, verdict == "accepted", verdict, "accepted")


def outcome(deliveries: list[Delivery]) -> tuple[str, str]:
    """The first rejection in a delivery chain, or ``accepted`` at the last hop."""
    for d in deliveries:
        if d.verdict != "accepted":
            return d.dst.split(":")[0], d.verdict
    if not deliveries:
        return "-", "nothing-delivered"
    return deliveries[-1].dst.split(":")[0], "accepted"


def flip(frame: bytes, offset: int, mask: int = 0x01) -> bytes:
    b = bytearray(frame)
    b[offset % len(b)] ^= mask
    return bytes(b)


# -- the simulated deployment -------------------------------------------------

class World:
    """Three users, the two servers and a hostile network, all seeded."""

    def __init__(self, seed: int, users=USERS, delta_ms: int = DEFAULT_DELTA_MS):
        root = random.Random(seed)

        def sub() -> random.Random:
            return random.Random(root.getrandbits(64))

        self.users = list(users)
        self.delta_ms = delta_ms
        self.prov = provision(self.users, sub())
        self.clock = LogicalClock()
        p = self.prov
        client_pubs = [pub for _, pub in p.client_keys]
        self.cs = CentralServer(p.cs_key, p.as_key[1], client_pubs, p.cs_stores, self.clock, sub(), delta_ms)
        self.as_ = AttributesServer(p.as_key, p.cs_key[1], p.as_stores, self.clock, sub(), delta_ms)
        self.macs = list(MACS[: len(self.users)])
        self.clients = [Client(prof, SimulatedProbe(mac), self.clock, sub(), delta_ms)
                        for prof, mac in zip(p.profiles, self.macs)]
        self.passwords = [u.password for u in self.users]
        self.used_passwords = set(self.passwords)
        self.net = Network()
        self.net.add(self.cs)
        self.net.add(self.as_)
        for c in self.clients:
            self.net.add(c)
        self.adv_rng = sub()
        self.adv_key = ecies.keygen(self.adv_rng)
        # snapshot of every pseudonym before any revocation severs a chain
        self.chains = {fp: self.prov.cs_stores.pseudonyms.pairs(fp) for fp in self.prov.cs_stores.pseudonyms.handles()}
        self.otps = [prof.otp for prof in p.profiles]

    # honest traffic

    def send(self, i: int, frame: bytes, kind: str) -> list[Delivery]:
        self.net.send(self.clients[i].address, "cs", frame, kind)
        return self.net.run()

    def register(self, i: int) -> list[Delivery]:
        return self.send(i, self.clients[i].build_registration_login(self.passwords[i]), "REG_LOGIN_REQ")

    def login(self, i: int, password: str | None = None) -> list[Delivery]:
        return self.send(i, self.clients[i].build_login(password or self.passwords[i]), "LOGIN_REQ")

    def update_password(self, i: int, new: str) -> list[Delivery]:
        out = self.send(i, self.clients[i].build_password_update(self.passwords[i], new), "PW_UPDATE_REQ")
        if any(d.kind == "PW_UPDATE_FWD" and d.verdict == "accepted" for d in out):
            self.passwords[i] = new
        self.used_passwords.add(new)
        return out

    def revoke(self, i: int, reason: int) -> list[Delivery]:
        return self.send(i, self.clients[i].build_revocation(self.passwords[i], reason), "REVOKE_REQ")

    # adversary helpers

    def inject(self, dst: str, frame: bytes, kind: str = "?", src: str = "adversary") -> list[Delivery]:
        self.net.inject(src, dst, frame, kind)
        return self.net.run()

    def forge(self, kind: Kind, key: ecies.PrivateKey, to: ecies.PublicKey,
              sender_public: ecies.PublicKey | None = None, **fields: bytes) -> bytes:
        msg = ProtocolMessage(kind, fields)
        return ecies.encrypt(key, to, encode(msg), self.adv_rng, sender_public=sender_public).to_bytes()

    def random_fields(self, kind: Kind, **fixed: bytes) -> dict[str, bytes]:
        from .wire import SCHEMAS

        out = {name: self.adv_rng.randbytes(width) for name, width in SCHEMAS[kind]}
        out["ts"] = ts_bytes(self.clock.now_ms()) if "ts" in out else None
        out = {k: v for k, v in out.items() if v is not None}
        out.update(fixed)
        return out

    def client_key(self, i: int) -> tuple[ecies.PrivateKey, ecies.PublicKey]:
        return self.prov.client_keys[i]

    def fp(self, i: int) -> bytes:
        return self.prov.client_keys[i][1].fingerprint()

    def with_hook(self, hook, fn: Callable[[], list[Delivery]]) -> list[Delivery]:
        self.net.channel_intercept(hook)
        try:
            return fn()
        finally:
            self.net.hooks.remove(hook)

    # oracle view of the traffic

    def honest_keys(self) -> list[tuple[ecies.PrivateKey, ecies.PublicKey]]:
        return [self.prov.cs_key, self.prov.as_key, *self.prov.client_keys]

    def open_frame(self, frame: bytes) -> ProtocolMessage | None:
        """Decrypt a captured frame with whichever honest key fits; None if no honest pair does."""
        pubs = [pub for _, pub in self.honest_keys()]
        try:
            env = ecies.CipherEnvelope.from_bytes(frame)
            sender = ecies.identify_sender(env, pubs)
        except RamhuError:
            return None
        for priv, _ in self.honest_keys():
            try:
                return decode(ecies.decrypt(priv, sender, env), ALL_KINDS)
            except RamhuError:
                continue
        return None


# -- secrecy and authentication goals ----------------------------------------

SEC_GOALS = ("sec1", "sec2", "sec3", "sec4", "sec5", "sec6", "sec7", "sec8", "sec9", "sec10", "keys")


def secret_catalog(w: World) -> dict[str, set[bytes]]:
    """Every secret byte string in play, grouped by secrecy goal."""
    sec: dict[str, set[bytes]] = defaultdict(set)
    for u in w.users:
        sec["sec1"] |= {u.uid.encode(), u.mid.encode()}
    for pw in w.used_passwords:
        raw, lane = pw.encode(), password_lane(pw)
        sec["sec1"] |= {raw, lane}
        sec["sec2"] |= {raw, lane}
        sec["sec7"] |= {raw, lane}
    for mac in w.macs:
        sec["sec3"] |= {mac, mac_lane(mac)}
    sec["sec3"] |= {REAL_MAC, FAKE_MAC}
    sec["sec5"] |= {otp for otp in w.otps if otp}
    for chain in w.chains.values():
        for hop in ("ci_cs", "cs_ci"):
            sec["sec6"] |= set(chain[hop])
        for hop in ("cs_as", "as_cs"):
            sec["sec10"] |= set(chain[hop])
    for priv, _ in w.honest_keys():
        sec["keys"].add(priv.to_bytes())
    for c in w.clients:
        sec["keys"].add(c.profile.hidden_key)
    for entry in w.net.transcript:
        msg = w.open_frame(entry.frame)
        if msg is None:
            continue
        f = msg.fields
        if msg.kind in CLIENT_KINDS:
            sec["sec4"] |= {f[k] for k in ("sig1", "sig2") if k in f}
            sec["sec5"] |= {f[k] for k in ("tmp_pw", "tmp_old", "tmp_new", "tmp_rr", "otp") if k in f}
            if "gm" in f:
                sec["sec3"].add(f["gm"])
        elif msg.kind == Kind.LOGIN_RESP:
            sec["sec4"].add(f["sig5"])
        elif msg.kind in CS_TO_AS:
            sec["sec8"] |= {f[k] for k in ("sig2", "sig3") if k in f}
            sec["sec9"] |= {f[k] for k in ("tmp_pw", "tmp_old", "tmp_new") if k in f}
        elif msg.kind in AS_TO_CS:
            sec["sec8"].add(f["sig2"])
    return sec


def scan_transcript(w: World, rec: Recorder) -> None:
    """Byte-scan every captured frame for every secret."""
    frames = [e.frame for e in w.net.transcript]
    catalog = secret_catalog(w)
    for goal in SEC_GOALS:
        secrets = catalog.get(goal, set())
        hits = sum(1 for s in secrets for fr in frames if s in fr)
        verdict = "clean" if hits == 0 else f"leaked:{hits}"
        rec.check(f"scan-{goal}", "adversary", hits == 0, f"{verdict}:{len(secrets)}-values", "clean")


AUTH_GOALS = {
    # label: (goal, witness side, request side)
    "auth1": ("cs_ci", "cs", "client"),
    "auth2": ("ci_cs", "client", "cs"),
    "auth2-ack": ("ci_cs_ack", "client", "cs"),
    "auth3": ("cs_as", "cs", "as"),
    "auth4": ("as_cs", "as", "cs"),
    "auth5": ("cs_ci_tmp", "cs", "client"),
    "auth6": ("as_cs_pw", "as", "cs"),
}


def check_agreement(w: World, rec: Recorder) -> None:
    """Every request must match exactly one witness of the same goal, and vice versa."""
    events = {"cs": w.cs.trace, "as": w.as_.trace, "client": [e for c in w.clients for e in c.trace]}

    def collect(side: str, what: str, goal: str) -> Counter:
        return Counter(tuple(sorted((k, v) for k, v in e.data.items() if k != "goal"))
                       for e in events[side] if e.event == what and e.data.get("goal") == goal)

    for label, (goal, wit, req) in AUTH_GOALS.items():
        witnessed, requested = collect(wit, "witness", goal), collect(req, "request", goal)
        ok = bool(requested) and witnessed == requested
        rec.check(label, req, ok, "agree" if ok else f"w{sum(witnessed.values())}/r{sum(requested.values())}", "agree")


# -- scenarios ----------------------------------------------------------------

def _is(kind: str, direction: str | None = None):
    def pred(p) -> bool:
        return p.kind == kind and (direction is None or f"{p.src}>{p.dst}".startswith(direction))
    return pred


def honest_control(w: World, rec: Recorder) -> None:
    for i in range(len(w.users)):
        rec.accept(f"register-user{i}", "client", outcome(w.register(i))[1])
        rec.check(f"mutual-auth-user{i}", "client", w.clients[i].authenticated,
                  "authenticated" if w.clients[i].authenticated else "unauthenticated", "authenticated")
    for i in range(len(w.users)):
        w.clock.advance(1)
        rec.accept(f"login-user{i}", "client", outcome(w.login(i))[1])
        acked = w.fp(i) in w.cs.authenticated
        rec.check(f"ack-user{i}", "cs", acked, "authenticated" if acked else "unauthenticated", "authenticated")
    check_agreement(w, rec)


def privileged_insider(w: World, rec: Recorder) -> None:
    """A legitimate user (the insider) watches another user's traffic."""
    w.register(0)
    w.register(1)
    cap = Capture()
    w.with_hook(cap, lambda: w.login(0))
    victim_req = next(p.frame for p in cap.packets if p.kind == "LOGIN_REQ")
    insider_priv, _ = w.client_key(1)
    env = ecies.CipherEnvelope.from_bytes(victim_req)
    try:
        ecies.decrypt(insider_priv, w.client_key(0)[1], env)
        verdict = "decrypted"
    except (IntegrityError, InvalidKey) as exc:
        verdict = "integrity" if isinstance(exc, IntegrityError) else "key"
    rec.reject("decrypt-victim-request", "adversary", verdict, {"integrity", "key"})
    # submitting the victim's frame from the insider's own connection
    rec.reject("resubmit-victim-request", "cs", outcome(w.inject("cs", victim_req, "LOGIN_REQ", src=w.clients[1].address))[1],
               {"replay", "freshness"})
    # sealing a request under the insider's key but presenting the victim's public key
    fields = w.random_fields(Kind.LOGIN_REQ, up=w.clients[0].profile.pseudo_out[0], mp=w.clients[0].profile.pseudo_out[1])
    forged = w.forge(Kind.LOGIN_REQ, insider_priv, w.prov.cs_key[1], sender_public=w.client_key(0)[1], **fields)
    rec.reject("insider-key-as-victim", "cs", outcome(w.inject("cs", forged, "LOGIN_REQ"))[1], {"integrity"})
    w.clock.advance(1)
    rec.accept("insider-own-login", "client", outcome(w.login(1))[1])


def stolen_device(w: World, rec: Recorder) -> None:
    """The device (profile plus hardware) or just the application is stolen."""
    w.register(0)
    w.clock.advance(1)
    w.login(0)
    stolen = copy.deepcopy(w.clients[0].profile)

    def thief(probe) -> Client:
        return Client(copy.deepcopy(stolen), probe, w.clock, random.Random(w.adv_rng.getrandbits(64)), w.delta_ms)

    w.clock.advance(1)
    t = thief(SimulatedProbe(w.macs[0]))
    rec.reject("whole-device-guessed-pw", "cs",
               outcome(w.inject("cs", t.build_login("123456"), "LOGIN_REQ", src="thief"))[1], {"integrity", "key"})
    t = thief(SimulatedProbe(OTHER_MAC))
    rec.reject("app-on-other-device-known-pw", "cs",
               outcome(w.inject("cs", t.build_login(w.passwords[0]), "LOGIN_REQ", src="thief"))[1], {"integrity", "key"})
    t = thief(SimulatedProbe(w.macs[0], permanent=OTHER_MAC))
    rec.reject("app-with-spoofed-mac-known-pw", "cs",
               outcome(w.inject("cs", t.build_login(w.passwords[0]), "LOGIN_REQ", src="thief"))[1], {"mac-fake"})
    t = thief(SimulatedProbe(OTHER_MAC))
    try:
        t.build_registration_login(w.passwords[0])
        verdict = "built"
    except RamhuError:
        verdict = "no-otp"
    rec.check("re-register-without-otp", "thief", verdict == "no-otp", verdict, "no-otp")
    stored = stolen.to_text()
    leaks = [s for s in (w.users[0].uid, w.users[0].mid, w.passwords[0]) if s in stored]
    rec.check("profile-holds-no-ids-or-pw", "thief", not leaks, "clean" if not leaks else "leaked", "clean")
    w.clock.advance(1)
    rec.accept("owner-still-logs-in", "client", outcome(w.login(0))[1])


def replay(w: World, rec: Recorder) -> None:
    w.register(0)
    w.clock.advance(1)
    cap = Capture()
    w.with_hook(cap, lambda: w.login(0))
    req = next(p.frame for p in cap.packets if p.kind == "LOGIN_REQ")
    auth = next(p.frame for p in cap.packets if p.kind == "AUTH_REQ")
    rec.reject("replay-login-within-window", "cs", outcome(w.inject("cs", req, "LOGIN_REQ"))[1], {"replay"})
    rec.reject("replay-auth-req-within-window", "as", outcome(w.inject("as", auth, "AUTH_REQ", src="cs"))[1], {"replay"})
    w.clock.advance(w.delta_ms + 1)
    rec.reject("replay-login-after-window", "cs", outcome(w.inject("cs", req, "LOGIN_REQ"))[1], {"freshness"})
    rec.reject("replay-auth-req-after-window", "as", outcome(w.inject("as", auth, "AUTH_REQ", src="cs"))[1], {"freshness"})
    dup = duplicate_if(_is("LOGIN_REQ"))
    out = w.with_hook(dup, lambda: w.login(0))
    copies = [d for d in out if d.kind == "LOGIN_REQ"]
    second = copies[1].verdict if len(copies) > 1 else "missing"
    rec.reject("duplicate-delivery", "cs", second, {"replay"})
    rec.check("first-copy-authenticates", "client", w.clients[0].authenticated,
              "authenticated" if w.clients[0].authenticated else "unauthenticated", "authenticated")


def mitm(w: World, rec: Recorder) -> None:
    w.register(0)
    cases = [
        ("edit-login-body", "LOGIN_REQ", BODY + 40, "cs", {"integrity"}),
        ("edit-login-hint", "LOGIN_REQ", 0, "cs", {"key"}),
        ("edit-login-tag", "LOGIN_REQ", -1, "cs", {"integrity"}),
        ("edit-auth-req", "AUTH_REQ", BODY + 5, "as", {"integrity"}),
        ("edit-auth-resp", "AUTH_RESP", BODY + 5, "cs", {"integrity"}),
        ("edit-login-resp", "LOGIN_RESP", BODY + 5, "client", {"integrity"}),
        ("edit-client-ack", "CLIENT_ACK", BODY + 2, "cs", {"integrity"}),
    ]
    for action, kind, offset, entity, allowed in cases:
        w.clock.advance(1)
        hook = edit_if(_is(kind), lambda f, o=offset: flip(f, o))
        out = w.with_hook(hook, lambda: w.login(0))
        rec.reject(action, entity, outcome(out)[1], allowed)
    w.clock.advance(1)
    w.with_hook(drop_if(_is("LOGIN_RESP")), lambda: w.login(0))
    rec.check("drop-login-resp", "client", not w.clients[0].authenticated,
              "unauthenticated" if not w.clients[0].authenticated else "authenticated", "unauthenticated")
    w.clock.advance(1)
    rec.accept("retry-after-interference", "client", outcome(w.login(0))[1])


def chi_square_uniform(data: bytes) -> tuple[float, float]:
    """Chi-square statistic of byte counts against uniform, and the 0.1% critical value."""
    counts = Counter(data)
    expected = len(data) / 256
    stat = sum((counts.get(b, 0) - expected) ** 2 / expected for b in range(256))
    # Wilson-Hilferty approximation of the chi-square quantile, df = 255
    df = 255
    z = statistics.NormalDist().inv_cdf(0.999)
    crit = df * (1 - 2 / (9 * df) + z * (2 / (9 * df)) ** 0.5) ** 3
    return stat, crit


def guessing(w: World, rec: Recorder) -> None:
    """Masked passwords look uniform, and wrong guesses are rejected online."""
    w.register(0)
    c = Client(copy.deepcopy(w.clients[0].profile), SimulatedProbe(w.macs[0]), w.clock,
               random.Random(w.adv_rng.getrandbits(64)), w.delta_ms)
    cs_priv = w.prov.cs_key[0]
    masked = bytearray()
    observed = None
    gen = random.Random(w.adv_rng.getrandbits(64))
    for k in range(128):
        if k:
            c.probe = SimulatedProbe(gen.randbytes(6))
        frame = c.build_login(w.passwords[0])
        msg = decode(ecies.decrypt(cs_priv, w.client_key(0)[1], ecies.CipherEnvelope.from_bytes(frame)), Kind.LOGIN_REQ)
        masked += msg["tmp_pw"]
        observed = observed or msg
    stat, crit = chi_square_uniform(bytes(masked))
    rec.check("tmp-pw-uniformity", "oracle", stat < crit, f"chi2={stat:.1f}", f"chi2<{crit:.1f}")
    # With the envelope assumed open (nonce and Sig1 known), the hardware
    # address still pads the first six password bytes: every candidate that
    # differs only there is consistent with the observation.
    pw = w.passwords[0].encode()
    candidates = [pw] + [bytes([0x61 + j]) * 6 + pw[6:] for j in range(8)]
    base = xor_mask(observed["tmp_pw"], [observed["n"], observed["sig1"]])
    consistent = sum(1 for cand in candidates if not any(xor_mask(base, [password_lane(cand.decode())])[6:]))
    rec.check("pw-undetermined-without-gm", "oracle", consistent == len(candidates),
              f"consistent={consistent}", f"consistent={len(candidates)}")
    thief = Client(copy.deepcopy(w.clients[0].profile), SimulatedProbe(w.macs[0]), w.clock,
                   random.Random(w.adv_rng.getrandbits(64)), w.delta_ms)
    for guess in ("123456", "password", "amelia2024"):
        thief.profile = copy.deepcopy(w.clients[0].profile)
        w.clock.advance(1)
        rec.reject(f"online-guess-{guess}", "cs",
                   outcome(w.inject("cs", thief.build_login(guess), "LOGIN_REQ", src="thief"))[1], {"integrity", "key"})


def user_impersonation(w: World, rec: Recorder) -> None:
    """The attacker knows the victim's pseudonyms and public key, but not the password or private key."""
    w.register(0)
    up, mp = w.clients[0].profile.pseudo_out
    adv_priv, _ = w.adv_key
    cs_pub = w.prov.cs_key[1]
    fields = w.random_fields(Kind.LOGIN_REQ, up=up, mp=mp)
    rec.reject("own-key-victim-pseudonyms", "cs",
               outcome(w.inject("cs", w.forge(Kind.LOGIN_REQ, adv_priv, cs_pub, **fields), "LOGIN_REQ"))[1], {"key"})
    forged = w.forge(Kind.LOGIN_REQ, adv_priv, cs_pub, sender_public=w.client_key(0)[1], **fields)
    rec.reject("own-key-claiming-victim-key", "cs", outcome(w.inject("cs", forged, "LOGIN_REQ"))[1], {"integrity"})
    reg = w.random_fields(Kind.REG_LOGIN_REQ, up=up, mp=mp, gm=mac_lane(w.macs[0]))
    rec.reject("forged-registration", "cs",
               outcome(w.inject("cs", w.forge(Kind.REG_LOGIN_REQ, adv_priv, cs_pub, **reg), "REG_LOGIN_REQ"))[1], {"key"})
    # device impersonation: the right password on a machine whose address was changed to the victim's
    w.clock.advance(1)
    spoof = Client(copy.deepcopy(w.clients[0].profile), SimulatedProbe(w.macs[0], permanent=OTHER_MAC),
                   w.clock, random.Random(w.adv_rng.getrandbits(64)), w.delta_ms)
    rec.reject("spoofed-device-address", "cs",
               outcome(w.inject("cs", spoof.build_login(w.passwords[0]), "LOGIN_REQ", src="spoofer"))[1], {"mac-fake"})
    spoof_win = Client(copy.deepcopy(w.clients[0].profile), SimulatedProbe(w.macs[0], override=w.macs[0]),
                       w.clock, random.Random(w.adv_rng.getrandbits(64)), w.delta_ms)
    rec.reject("registry-override-address", "cs",
               outcome(w.inject("cs", spoof_win.build_login(w.passwords[0]), "LOGIN_REQ", src="spoofer"))[1], {"mac-fake"})


def server_impersonation(w: World, rec: Recorder) -> None:
    w.register(0)
    w.clock.advance(1)
    adv_priv, _ = w.adv_key
    c = w.clients[0]
    # the real request never arrives; the attacker answers in the server's place
    w.with_hook(drop_if(_is("LOGIN_REQ")), lambda: w.login(0))
    resp = w.random_fields(Kind.LOGIN_RESP, up=c.profile.pseudo_in[0], mp=c.profile.pseudo_in[1])
    resp["sig5"] = sign(resp["ts"], resp["n"], resp["up"], resp["mp"])
    client_pub = w.client_key(0)[1]
    rec.reject("fake-login-resp", "client",
               outcome(w.inject(c.address, w.forge(Kind.LOGIN_RESP, adv_priv, client_pub, **resp), "LOGIN_RESP"))[1],
               {"key"})
    forged = w.forge(Kind.LOGIN_RESP, adv_priv, client_pub, sender_public=w.prov.cs_key[1], **resp)
    rec.reject("fake-login-resp-claiming-cs-key", "client", outcome(w.inject(c.address, forged, "LOGIN_RESP"))[1],
               {"integrity"})
    rec.check("client-not-fooled", "client", not c.authenticated,
              "unauthenticated" if not c.authenticated else "authenticated", "unauthenticated")
    chain = w.chains[w.fp(0)]
    ar = w.random_fields(Kind.AUTH_RESP, up=chain["as_cs"][0], mp=chain["as_cs"][1])
    rec.reject("fake-as-to-cs", "cs",
               outcome(w.inject("cs", w.forge(Kind.AUTH_RESP, adv_priv, w.prov.cs_key[1], **ar), "AUTH_RESP"))[1], {"key"})
    aq = w.random_fields(Kind.AUTH_REQ, up=chain["cs_as"][0], mp=chain["cs_as"][1])
    rec.reject("fake-cs-to-as", "as",
               outcome(w.inject("as", w.forge(Kind.AUTH_REQ, adv_priv, w.prov.as_key[1], **aq), "AUTH_REQ"))[1], {"key"})


def dos(w: World, rec: Recorder) -> None:
    """A flood of stale requests must die at the timestamp check."""
    captured = []
    for i in range(len(w.users)):
        w.register(i)
    for i in range(len(w.users)):
        w.clock.advance(1)
        cap = Capture()
        w.with_hook(cap, lambda i=i: w.login(i))
        captured.append(next(p.frame for p in cap.packets if p.kind == "LOGIN_REQ"))
    w.clock.advance(w.delta_ms + 1)
    before = dict(w.cs.counters)
    # four senders, 25 frames each, interleaved round-robin
    senders = [[captured[(s + k) % len(captured)] for k in range(25)] for s in range(4)]
    for k in range(25):
        for s, frames in enumerate(senders):
            w.net.inject(f"flooder{s}", "cs", frames[k], "LOGIN_REQ")
    out = w.net.run()
    verdicts = Counter(d.verdict for d in out)
    rec.check("stale-flood", "cs", verdicts == Counter({"freshness": 100}),
              ",".join(f"{v}={n}" for v, n in sorted(verdicts.items())), "freshness=100")
    delta = {k: w.cs.counters.get(k, 0) - before.get(k, 0) for k in ("sig", "store", "freshness")}
    rec.check("no-sig-work", "cs", delta["sig"] == 0, f"sig={delta['sig']}", "sig=0")
    rec.check("no-store-work", "cs", delta["store"] == 0, f"store={delta['store']}", "store=0")
    w.clock.advance(1)
    rec.accept("service-after-flood", "client", outcome(w.login(0))[1])


def password_change(w: World, rec: Recorder) -> None:
    w.register(0)
    w.clock.advance(1)
    snapshot = copy.deepcopy(w.clients[0].profile)
    hook = edit_if(_is("PW_UPDATE_REQ"), lambda f: flip(f, BODY + 100))
    out = w.with_hook(hook, lambda: w.send(0, w.clients[0].build_password_update(w.passwords[0], "attacker-choice"),
                                          "PW_UPDATE_REQ"))
    rec.reject("edit-update-request", "cs", outcome(out)[1], {"integrity"})
    w.clients[0].profile = snapshot
    w.clock.advance(1)
    rec.accept("old-password-still-valid", "client", outcome(w.login(0))[1])
    # an attacker holding the victim's key but not the old password
    priv, pub = w.client_key(0)
    guess = password_lane("guessed-old-password")
    new = password_lane("attacker-new-password")
    f = w.random_fields(Kind.PW_UPDATE_REQ, up=w.clients[0].profile.pseudo_out[0], mp=w.clients[0].profile.pseudo_out[1])
    f["sig1"] = sign(f["ts"], f["n1"], f["up"], f["mp"], guess)
    f["tmp_old"] = xor_mask(guess, [f["n2"], f["sig1"]])
    f["tmp_new"] = xor_mask(new, [f["n3"], f["sig1"]])
    out = w.inject("cs", w.forge(Kind.PW_UPDATE_REQ, priv, w.prov.cs_key[1], **f), "PW_UPDATE_REQ")
    rec.reject("stolen-key-unknown-old-pw", outcome(out)[0], outcome(out)[1], {"pw-mismatch"})
    # an honest change, then a replay of it
    cap = Capture()
    out = w.with_hook(cap, lambda: w.update_password(0, "amelia-new-horse-2"))
    rec.accept("honest-update", "as", outcome(out)[1])
    frame = next(p.frame for p in cap.packets if p.kind == "PW_UPDATE_REQ")
    rec.reject("replay-update", "cs", outcome(w.inject("cs", frame, "PW_UPDATE_REQ"))[1], {"replay"})
    w.clock.advance(w.delta_ms + 1)
    rec.reject("replay-update-late", "cs", outcome(w.inject("cs", frame, "PW_UPDATE_REQ"))[1], {"freshness"})
    rec.accept("login-new-password", "client", outcome(w.login(0))[1])


def _try_decrypt_all(w: World, frames: list[bytes]) -> str:
    adv_priv, _ = w.adv_key
    pubs = [pub for _, pub in w.honest_keys()]
    opened = 0
    for fr in frames:
        try:
            env = ecies.CipherEnvelope.from_bytes(fr)
            ecies.decrypt(adv_priv, ecies.identify_sender(env, pubs), env)
            opened += 1
        except RamhuError:
            pass
    return "integrity" if opened == 0 else f"decrypted:{opened}"


def eavesdropping(w: World, rec: Recorder) -> None:
    cap = Capture()
    w.net.channel_intercept(cap)
    w.register(2)
    w.clock.advance(1)
    w.login(2)
    w.clock.advance(1)
    w.update_password(2, "chen-li-rotated-2025")
    w.clock.advance(1)
    rec.accept("honest-revocation", "cs", outcome(w.revoke(2, 0))[1])
    w.net.hooks.remove(cap)
    kinds = {p.kind for p in cap.packets}
    rec.check("capture-every-kind", "adversary", len(kinds) >= 9, f"kinds={len(kinds)}", "kinds>=9")
    rec.reject("decrypt-captured", "adversary", _try_decrypt_all(w, [p.frame for p in cap.packets]),
               {"integrity", "key"})


def _windows(frame: bytes, k: int = 8) -> set[bytes]:
    return {frame[i:i + k] for i in range(len(frame) - k + 1)}


def traceability(w: World, rec: Recorder, sessions: int = 10) -> None:
    w.register(0)
    per_session: list[list[bytes]] = []
    for _ in range(sessions):
        w.clock.advance(1)
        cap = Capture()
        out = w.with_hook(cap, lambda: w.login(0))
        if outcome(out)[1] != "accepted":
            rec.accept("login", "client", outcome(out)[1])
        per_session.append([p.frame for p in cap.packets])
    links = {">".join(end.split(":")[0] for end in e.direction.split(">")) for e in w.net.transcript}
    seen: dict[bytes, int] = {}
    repeats = 0
    for s, frames in enumerate(per_session):
        mine = set().union(*(_windows(f) for f in frames))
        for win in mine:
            if seen.setdefault(win, s) != s:
                repeats += 1
    rec.check("cross-session-8-byte-windows", "adversary", repeats == 0, f"repeats={repeats}", "repeats=0")
    ids = [u.uid.encode() for u in w.users] + [u.mid.encode() for u in w.users]
    pseud = [x for chain in w.chains.values() for pair in chain.values() for x in pair]
    frames = [f for fr in per_session for f in fr]
    id_hits = sum(1 for f in frames for s in ids if s in f)
    ps_hits = sum(1 for f in frames for s in pseud if s in f)
    rec.check("identity-substrings", "adversary", id_hits == 0, f"hits={id_hits}", "hits=0")
    rec.check("pseudonym-bytes-on-wire", "adversary", ps_hits == 0, f"hits={ps_hits}", "hits=0")
    want = {"client>cs", "cs>as", "as>cs", "cs>client"}
    rec.check("links-observed", "adversary", want <= links, f"links={len(links & want)}", f"links={len(want)}")


def revocation_penetration(w: World, rec: Recorder) -> None:
    i = 1  # a doctor
    w.register(i)
    w.clock.advance(1)
    out = w.with_hook(edit_if(_is("REVOKE_REQ"), lambda f: flip(f, BODY + 200)),
                      lambda: w.revoke(i, 2))
    rec.reject("edit-revocation", "cs", outcome(out)[1], {"integrity"})
    w.clock.advance(1)
    cap = Capture()
    w.with_hook(cap, lambda: w.with_hook(drop_if(_is("REVOKE_REQ")), lambda: w.revoke(i, 2)))
    held = next(p.frame for p in cap.packets if p.kind == "REVOKE_REQ")
    w.clock.advance(w.delta_ms + 1)
    rec.reject("delayed-revocation", "cs", outcome(w.inject("cs", held, "REVOKE_REQ"))[1], {"freshness"})
    rec.reject("wrong-role-reason", "cs", outcome(w.revoke(i, 0))[1], {"role-mismatch"})
    priv, _ = w.client_key(i)
    up, mp = w.clients[i].profile.pseudo_out

    def forged_revocation(rr_digest: bytes, pw: bytes) -> bytes:
        f = w.random_fields(Kind.REVOKE_REQ, up=up, mp=mp)
        rr = xor_mask(rr_digest, [f["n1"]])
        f["sig1"] = sign(f["ts"], f["n1"], up, mp, rr, pw, b"delete")
        f["tmp_rr"] = xor_mask(rr, [f["n2"], f["sig1"]])
        f["tmp_pw"] = xor_mask(pw, [f["n3"], f["sig1"]])
        return w.forge(Kind.REVOKE_REQ, priv, w.prov.cs_key[1], **f)

    w.clock.advance(1)
    out = w.inject("cs", forged_revocation(photon_hash(b"made-up reason"), password_lane(w.passwords[i])), "REVOKE_REQ")
    rec.reject("unknown-reason", "cs", outcome(out)[1], {"reason-unknown"})
    out = w.inject("cs", forged_revocation(w.cs.stores.reasons.digest(2), password_lane("not-the-password")), "REVOKE_REQ")
    rec.reject("stolen-key-wrong-pw", outcome(out)[0], outcome(out)[1], {"pw-mismatch"})
    w.clock.advance(1)
    rec.accept("victim-still-active", "client", outcome(w.login(i))[1])


def verifier(w: World, rec: Recorder) -> None:
    """The attacker walks off with every CS dataset (but not the CS private key)."""
    w.register(0)
    w.register(1)
    s = w.cs.stores
    dump = "".join(x.to_text() for x in (s.otp, s.macs, s.pseudonyms, s.reasons))
    raw = dump.encode()
    secrets = []
    for u, pw in zip(w.users, w.passwords):
        secrets += [u.uid, u.mid, pw, u.uid.encode().hex(), u.mid.encode().hex(), pw.encode().hex(),
                    password_lane(pw).hex()]
    hits = [x for x in secrets if x.encode() in raw]
    rec.check("cs-store-dump", "adversary", not hits, "no-identity-or-pw" if not hits else "leaked",
              "no-identity-or-pw")
    adv_priv, _ = w.adv_key
    cs_pub = w.prov.cs_key[1]
    up, mp = w.chains[w.fp(0)]["ci_cs"]
    gm = s.macs.get((up, mp))
    f = w.random_fields(Kind.LOGIN_REQ, up=up, mp=mp)
    f["sig1"] = sign(REAL_MAC, f["n"], f["ts"])
    pw_guess = password_lane("guess")
    f["tmp_pw"] = xor_mask(pw_guess, [f["n"], gm, f["sig1"]])
    f["sig2"] = sign(gm, f["n"], f["ts"], f["sig1"], up, mp, pw_guess)
    rec.reject("login-from-stolen-datasets", "cs",
               outcome(w.inject("cs", w.forge(Kind.LOGIN_REQ, adv_priv, cs_pub, **f), "LOGIN_REQ"))[1], {"key"})
    forged = w.forge(Kind.LOGIN_REQ, adv_priv, cs_pub, sender_public=w.client_key(0)[1], **f)
    rec.reject("stolen-datasets-claiming-victim-key", "cs", outcome(w.inject("cs", forged, "LOGIN_REQ"))[1],
               {"integrity"})
    aup, amp = w.chains[w.fp(0)]["cs_as"]
    aq = w.random_fields(Kind.AUTH_REQ, up=aup, mp=amp)
    aq["sig3"] = sign(aq["ts"], aq["n"], aup, amp)
    rec.reject("auth-req-from-stolen-datasets", "as",
               outcome(w.inject("as", w.forge(Kind.AUTH_REQ, adv_priv, w.prov.as_key[1], **aq), "AUTH_REQ"))[1], {"key"})


def leakage(w: World, rec: Recorder) -> None:
    w.register(0)
    w.clock.advance(1)
    old = w.passwords[0]
    out = w.with_hook(duplicate_if(_is("PW_UPDATE_REQ")), lambda: w.update_password(0, "amelia-leak-test-77"))
    copies = [d for d in out if d.kind == "PW_UPDATE_REQ"]
    rec.reject("duplicate-update", "cs", copies[1].verdict if len(copies) > 1 else "missing", {"replay"})
    w.clock.advance(1)
    rec.accept("login-new-password", "client", outcome(w.login(0))[1])
    plain = [old.encode(), w.passwords[0].encode(), w.users[0].uid.encode(), w.users[0].mid.encode()]
    hits = sum(1 for e in w.net.transcript for s in plain if s in e.frame)
    rec.check("ids-and-passwords-on-wire", "adversary", hits == 0, f"hits={hits}", "hits=0")


SCENARIOS: dict[str, Callable[[World, Recorder], None]] = {
    "privileged-insider": privileged_insider,
    "stolen-device": stolen_device,
    "replay": replay,
    "mitm": mitm,
    "guessing": guessing,
    "user-impersonation": user_impersonation,
    "server-impersonation": server_impersonation,
    "dos": dos,
    "password-change": password_change,
    "eavesdropping": eavesdropping,
    "traceability": traceability,
    "revocation-penetration": revocation_penetration,
    "verifier": verifier,
    "leakage": leakage,
}
CONTROL = "honest-control"
ALL_SCENARIOS = (*SCENARIOS, CONTROL)


def run_scenario(name: str, seed: int = 0) -> Report:
    if name == CONTROL:
        fn = honest_control
    elif name in SCENARIOS:
        fn = SCENARIOS[name]
    else:
        raise HarnessError(f"unknown scenario {name!r}; choose from {', '.join(ALL_SCENARIOS)}")
    w = World(seed)
    report = Report(name, seed)
    rec = Recorder(report)
    try:
        fn(w, rec)
    except (RamhuError, StopIteration, IndexError) as exc:
        rec.check("script", "harness", False, type(exc).__name__, "completed")
    scan_transcript(w, rec)
    return report


def run_all(seed: int = 0, names=ALL_SCENARIOS) -> list[Report]:
    return [run_scenario(n, seed) for n in names]


def format_reports(reports: list[Report]) -> str:
    lines = ["scenario action entity verdict expected result"]
    for r in reports:
        lines += r.lines()
    return "\n".join(lines) + "\n"
