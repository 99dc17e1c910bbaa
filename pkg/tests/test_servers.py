import copy
import random
import threading

import pytest

from ramhu.client import Client, SimulatedProbe
from ramhu.errors import AdminError, Rejection
from ramhu.harness import World, outcome
from ramhu.photon import sign
from ramhu.wire import FAKE_MAC, REAL_MAC, Kind, mac_lane, password_lane, ts_bytes, xor_mask


def reg_fields(w, i, *, otp=None, cm=REAL_MAC, pair=None, pw=None, ts=None, tamper_sig2=False):
    """A registration message built field by field, so single checks can be broken."""
    prof = w.prov.profiles[i]
    n = w.adv_rng.randbytes(32)
    ts = ts if ts is not None else ts_bytes(w.clock.now_ms())
    gm = mac_lane(w.macs[i])
    up, mp = pair or prof.pseudo_out
    otp = otp if otp is not None else prof.otp
    pw = password_lane(pw or w.passwords[i])
    sig1 = sign(cm, n, ts)
    sig2 = sign(gm, n, ts, sig1, up, mp, otp, pw)
    if tamper_sig2:
        sig2 = bytes([sig2[0] ^ 1]) + sig2[1:]
    return dict(ts=ts, n=n, gm=gm, sig1=sig1, up=up, mp=mp, otp=otp,
                tmp_pw=xor_mask(pw, [n, gm, sig1]), sig2=sig2)


def send_reg(w, i, **kw):
    key, pub = w.client_key(i)
    frame = w.forge(Kind.REG_LOGIN_REQ, key, w.prov.cs_key[1], **reg_fields(w, i, **kw))
    return outcome(w.inject("cs", frame, "REG_LOGIN_REQ", src=w.clients[i].address))


def test_forged_registration_matches_the_client():
    w = World(seed=3)
    # CS and AS accept; the real client never sent it, so it has no session to match
    assert send_reg(w, 0) == ("client", "no-session")
    assert [d.verdict for d in w.net.deliveries[:3]] == ["accepted"] * 3
    assert w.cs.authenticated == []


@pytest.mark.parametrize("kw, verdict", [
    (dict(ts=ts_bytes(0), otp=b"\x00" * 32, cm=FAKE_MAC), "freshness"),
    (dict(otp=b"\x00" * 32, cm=FAKE_MAC), "otp-unknown"),
    (dict(cm=FAKE_MAC, tamper_sig2=True), "mac-fake"),
    (dict(pair="other", tamper_sig2=True), "pseudonym-unknown"),
    (dict(tamper_sig2=True), "sig-mismatch"),
])
def test_registration_check_order(kw, verdict):
    w = World(seed=3)
    if kw.get("pair") == "other":
        kw["pair"] = w.prov.profiles[1].pseudo_out
    assert send_reg(w, 0, **kw) == ("cs", verdict)


def test_failed_registration_after_otp_burns_it():
    w = World(seed=3)
    assert send_reg(w, 0, cm=FAKE_MAC) == ("cs", "mac-fake")
    assert send_reg(w, 0) == ("cs", "otp-unknown")


def test_client_cannot_speak_for_the_attributes_server(registered):
    w = registered
    key, _ = w.client_key(0)
    frame = w.forge(Kind.AUTH_RESP, key, w.prov.cs_key[1], **w.random_fields(Kind.AUTH_RESP))
    assert outcome(w.inject("cs", frame)) == ("cs", "key")


def test_ack_with_wrong_nonce(registered):
    w = registered
    key, _ = w.client_key(0)
    frame = w.forge(Kind.CLIENT_ACK, key, w.prov.cs_key[1], n=b"\x07" * 32)
    assert outcome(w.inject("cs", frame)) == ("cs", "auth-failure")


def test_ack_completes_login(registered):
    w = registered
    before = len(w.cs.authenticated)
    w.login(1)
    assert w.cs.authenticated[before:] == [w.fp(1)]
    assert w.clients[1].authenticated


def test_wrong_password_unmasks_the_wrong_key(registered):
    w = registered
    assert outcome(w.login(0, "not-the-password")) in {("cs", "integrity"), ("cs", "key")}
    assert not w.clients[0].authenticated


def test_forged_auth_request_with_wrong_password(registered):
    w = registered
    cs_key, _ = w.prov.cs_key
    up, mp = w.chains[w.fp(0)]["cs_as"]
    ts, n = ts_bytes(w.clock.now_ms()), b"\x05" * 32
    sig3 = sign(ts, n, up, mp)
    frame = w.forge(Kind.AUTH_REQ, cs_key, w.prov.as_key[1], ts=ts, n=n, up=up, mp=mp, sig3=sig3,
                    tmp_pw=xor_mask(password_lane("guess"), [n, sig3]))
    assert outcome(w.inject("as", frame)) == ("as", "pw-mismatch")


def test_login_response_without_session(registered):
    w = registered
    as_key, _ = w.prov.as_key
    up, mp = w.chains[w.fp(0)]["as_cs"]
    ts, n = ts_bytes(w.clock.now_ms()), b"\x06" * 32
    frame = w.forge(Kind.AUTH_RESP, as_key, w.prov.cs_key[1], ts=ts, n=n, up=up, mp=mp, sig2=sign(ts, n, up, mp))
    assert outcome(w.inject("cs", frame)) == ("cs", "no-session")


# -- freshness ---------------------------------------------------------------

@pytest.mark.parametrize("shift, verdict", [(0, "accepted"), ("delta", "accepted"), ("delta+1", "freshness"),
                                            (-1, "freshness")])
def test_freshness_boundary(registered, shift, verdict):
    w = registered
    frame = w.clients[0].build_login(w.passwords[0])
    shift = {"delta": w.delta_ms, "delta+1": w.delta_ms + 1}.get(shift, shift)
    w.clock.advance(shift)
    got = outcome(w.send(0, frame, "LOGIN_REQ"))
    assert got[1] == verdict


def test_replayed_login_inside_window(registered):
    w = registered
    frame = w.clients[0].build_login(w.passwords[0])
    assert outcome(w.send(0, frame, "LOGIN_REQ")) [1] == "accepted"
    assert outcome(w.send(0, frame, "LOGIN_REQ")) == ("cs", "replay")


# -- concurrency ---------------------------------------------------------------

def test_otp_contention_single_winner():
    w = World(seed=4)
    prof = w.prov.profiles[0]
    frames = []
    for k in range(16):
        c = Client(copy.deepcopy(prof), SimulatedProbe(w.macs[0]), w.clock, random.Random(k))
        frames.append(c.build_registration_login(w.passwords[0]))
    assert len(set(frames)) == 16
    results = []
    gate = threading.Barrier(16)

    def go(frame):
        gate.wait()
        try:
            w.cs.handle(frame, "peer")
            results.append("accepted")
        except Rejection as exc:
            results.append(exc.reason)

    threads = [threading.Thread(target=go, args=(f,)) for f in frames]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results.count("accepted") == 1
    assert set(results) == {"accepted", "otp-unknown"}


# -- password update and revocation -----------------------------------------

def test_password_update_changes_the_record(registered):
    w = registered
    w.update_password(0, "fresh-pass-2026")
    rec = w.as_.stores.credentials.find(w.users[0].uid, w.users[0].mid)
    assert rec.pw_lane == password_lane("fresh-pass-2026")
    w.clock.advance(1)
    assert outcome(w.login(0)) [1] == "accepted"


def test_crash_before_password_write_changes_nothing(registered):
    w = registered
    u = w.users[0]

    def crash(stage):
        if stage == "pw_update_before_write":
            raise RuntimeError("power cut")

    w.as_.fault = crash
    with pytest.raises(RuntimeError):
        w.update_password(0, "fresh-pass-2026")
    assert w.as_.stores.credentials.find(u.uid, u.mid).pw_lane == password_lane(u.password)


def test_crash_before_revoke_write_changes_nothing(registered):
    w = registered
    u = w.users[0]
    before = w.as_.stores.pseudonyms.to_text()

    def crash(stage):
        if stage == "revoke_before_write":
            raise RuntimeError("power cut")

    w.as_.fault = crash
    with pytest.raises(RuntimeError):
        w.revoke(0, 4)
    rec = w.as_.stores.credentials.find(u.uid, u.mid)
    assert rec is not None and not rec.revoked
    assert w.as_.stores.pseudonyms.to_text() == before


def test_revocation_reason_rules(registered):
    w = registered
    assert outcome(w.revoke(1, 0)) == ("cs", "role-mismatch")  # a doctor ending a study
    w.clock.advance(1)
    assert outcome(w.revoke(1, 2)) [1] == "accepted"
    assert w.as_.stores.credentials.find(w.users[1].uid, w.users[1].mid) is None
    assert w.cs.stores.macs.get(w.chains[w.fp(1)]["ci_cs"]) is None
    w.clock.advance(1)
    assert outcome(w.login(1))[1] in {"identity", "pseudonym-unknown"}


def test_unknown_reason_digest(registered):
    w = registered
    c = w.clients[0]
    c.reason_digests[0] = b"\x01" * 32
    assert outcome(w.revoke(0, 0)) == ("cs", "reason-unknown")


def test_admin_revoke(registered):
    w = registered
    u = w.users[2]
    out = w.as_.admin_revoke(u.uid, u.mid)
    assert outcome(w.inject("cs", out.frame, "MAC_DELETE_REQ", src="as")) [1] == "accepted"
    with pytest.raises(AdminError):
        w.as_.admin_revoke(u.uid, u.mid)
    with pytest.raises(AdminError):
        w.as_.admin_revoke("uid-nobody", u.mid)
    w.clock.advance(1)
    assert outcome(w.login(2))[1] in {"identity", "pseudonym-unknown"}
