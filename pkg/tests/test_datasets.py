import random
import threading
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from ramhu.datasets import (
    AS_HOPS,
    DEFAULT_REASONS,
    HOPS,
    AsStores,
    CredentialStore,
    CsStores,
    Identity,
    MacRegistry,
    OtpStore,
    PseudonymDirectory,
    RevocationReasonCatalog,
    client_public_keys,
    provision,
    read_users_file,
    write_provisioned,
)
from ramhu.errors import ProvisioningError, Rejection, StoreLoadError
from ramhu.photon import photon_hash
from ramhu.wire import password_lane

USERS = [Identity("uid-1", "mid-a", "pw-one", "patient"), Identity("uid-2", "mid-a", "pw-two", "doctor")]


@pytest.fixture(scope="module")
def prov():
    return provision(USERS, random.Random(5))


def test_otp_consume_once():
    s = OtpStore()
    s.add(b"f" * 8, b"o" * 32)
    assert s.consume(b"f" * 8, b"o" * 32)
    assert not s.consume(b"f" * 8, b"o" * 32)


def test_otp_unknown_or_wrong_value():
    s = OtpStore()
    s.add(b"f" * 8, b"o" * 32)
    assert not s.consume(b"g" * 8, b"o" * 32)
    assert not s.consume(b"f" * 8, b"x" * 32)
    assert b"f" * 8 in s


def test_otp_concurrent_consumers_one_winner():
    for trial in range(20):
        s = OtpStore()
        s.add(b"f" * 8, b"o" * 32)
        wins = []
        start = threading.Barrier(16)

        def go():
            start.wait()
            wins.append(s.consume(b"f" * 8, b"o" * 32))

        threads = [threading.Thread(target=go) for _ in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert wins.count(True) == 1, trial


def test_two_users_sixteen_distinct_ids(prov):
    ids = prov.cs_stores.pseudonyms.all_ids()
    assert len(ids) == 16 and len(set(ids)) == 16
    assert set(prov.as_stores.pseudonyms.all_ids()) <= set(ids)
    assert len(prov.as_stores.pseudonyms.all_ids()) == 8


def test_hop_translation_round_trip(prov):
    d = prov.cs_stores.pseudonyms
    for fp in d.handles():
        start = d.pairs(fp)["ci_cs"]
        pair, hop = start, "ci_cs"
        seen = []
        for _ in HOPS:
            pair = d.translate_hop(pair, hop)
            hop = HOPS[(HOPS.index(hop) + 1) % 4]
            seen.append(pair)
        assert pair == start
        assert seen[-2] == d.pairs(fp)["cs_ci"]
        assert d.translate(d.translate(start, "ci_cs", "cs_as"), "cs_as", "ci_cs") == start


def test_unknown_pair_rejected(prov):
    with pytest.raises(Rejection) as exc:
        prov.cs_stores.pseudonyms.translate((b"\x00" * 16, b"\x00" * 16), "ci_cs", "cs_as")
    assert exc.value.reason == "pseudonym-unknown"


def test_as_and_cs_agree_on_shared_hops(prov):
    cs, as_ = prov.cs_stores.pseudonyms, prov.as_stores.pseudonyms
    for handle in as_.handles():
        pairs = as_.pairs(handle)
        assert set(pairs) == set(AS_HOPS)
        fp = cs.lookup("cs_as", pairs["cs_as"])
        assert cs.pairs(fp)["as_cs"] == pairs["as_cs"]


def test_duplicate_ids_refused():
    d = PseudonymDirectory()
    d.add(b"a", {"ci_cs": (b"1" * 16, b"2" * 16)})
    with pytest.raises(ProvisioningError):
        d.add(b"b", {"ci_cs": (b"3" * 16, b"1" * 16)})


def test_provision_is_deterministic(tmp_path):
    for name in ("one", "two"):
        write_provisioned(provision(USERS, random.Random(9)), tmp_path / name)
    files = sorted(p.relative_to(tmp_path / "one") for p in (tmp_path / "one").rglob("*") if p.is_file())
    assert len(files) == 11
    for f in files:
        assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes(), f


def test_provision_writes_no_client_private_keys(tmp_path, prov):
    write_provisioned(prov, tmp_path)
    everything = b"".join(p.read_bytes() for p in tmp_path.rglob("*") if p.is_file())
    for priv, _ in prov.client_keys:
        assert priv.to_bytes().hex().encode() not in everything
    assert len(client_public_keys(tmp_path / "public.keys")) == 2


@pytest.mark.parametrize("users", [
    [],
    [USERS[0], USERS[0]],
    [Identity("u", "m", "pw", "pilot")],
    [Identity("u" * 65, "m", "pw")],
    [Identity("u", "m", "")],
])
def test_provision_rejects_bad_input(users):
    with pytest.raises(ProvisioningError):
        provision(users, random.Random(1))


def test_duplicate_identity_is_provisioning_error():
    with pytest.raises(ProvisioningError):
        provision([USERS[0], USERS[0]], random.Random(1))


def test_cs_stores_hold_no_passwords(prov, tmp_path):
    prov.cs_stores.save(tmp_path)
    text = b"".join(p.read_bytes() for p in tmp_path.iterdir())
    for u in USERS:
        for needle in (u.password.encode(), u.password.encode().hex().encode(), password_lane(u.password).hex().encode(),
                       u.uid.encode().hex().encode()):
            assert needle not in text


def test_reason_catalog_has_the_five_reasons(prov):
    cat = prov.cs_stores.reasons
    assert len(cat) == 5
    assert cat.texts() == [t for t, _ in DEFAULT_REASONS]
    for i, (text, roles) in enumerate(DEFAULT_REASONS):
        assert cat.digest(i) == photon_hash(text.encode())
        assert cat.lookup(cat.digest(i)) == (text, tuple(roles))


def test_reason_digest_checked_on_load():
    text = RevocationReasonCatalog().to_text()
    tampered = text.replace(text.split()[1], "00" * 32, 1)
    with pytest.raises(StoreLoadError):
        RevocationReasonCatalog.from_text(tampered)


def test_password_compare_and_swap(prov):
    store = CredentialStore.from_text(prov.as_stores.credentials.to_text())
    rec = store.find("uid-1", "mid-a")
    assert not store.set_password(rec.handle, password_lane("wrong"), password_lane("new"))
    assert store.set_password(rec.handle, password_lane("pw-one"), password_lane("new"))
    assert store.get(rec.handle).pw_lane == password_lane("new")


def test_revoke_is_a_tombstone(prov):
    store = CredentialStore.from_text(prov.as_stores.credentials.to_text())
    rec = store.find("uid-2", "mid-a")
    assert store.revoke(rec.handle)
    assert not store.revoke(rec.handle)
    assert store.find("uid-2", "mid-a") is None
    gone = store.find_any("uid-2", "mid-a")
    assert gone.revoked and gone.pw_lane is None
    assert not store.set_password(rec.handle, None, password_lane("x"))


def _mutated(prov):
    """Stores after a consumed OTP, a saved MAC, a changed password and a revocation."""
    cs = CsStores(OtpStore.from_text(prov.cs_stores.otp.to_text()),
                  MacRegistry(),
                  PseudonymDirectory.from_text(prov.cs_stores.pseudonyms.to_text()),
                  RevocationReasonCatalog.from_text(prov.cs_stores.reasons.to_text()))
    as_ = AsStores(CredentialStore.from_text(prov.as_stores.credentials.to_text()),
                   PseudonymDirectory.from_text(prov.as_stores.pseudonyms.to_text()))
    fp = cs.pseudonyms.handles()[0]
    cs.otp.discard(fp)
    cs.macs.save_mac(cs.pseudonyms.pairs(fp)["ci_cs"], password_lane("gm-lane-stand-in"))
    recs = as_.credentials.records()
    as_.credentials.set_password(recs[0].handle, recs[0].pw_lane, password_lane("changed"))
    as_.credentials.revoke(recs[1].handle)
    as_.pseudonyms.sever(recs[1].handle)
    cs.pseudonyms.sever(cs.pseudonyms.handles()[1])
    return cs, as_


def test_save_load_save_is_byte_identical(prov, tmp_path):
    cs, as_ = _mutated(prov)
    cs.save(tmp_path / "a" / "cs")
    as_.save(tmp_path / "a" / "as")
    CsStores.load(tmp_path / "a" / "cs").save(tmp_path / "b" / "cs")
    AsStores.load(tmp_path / "a" / "as").save(tmp_path / "b" / "as")
    for sub in ("cs", "as"):
        for f in (tmp_path / "a" / sub).iterdir():
            assert f.read_bytes() == (tmp_path / "b" / sub / f.name).read_bytes(), f.name


def test_missing_store_file(tmp_path):
    with pytest.raises(StoreLoadError):
        CsStores.load(tmp_path)


def test_binary_garbage_store_file(tmp_path):
    (tmp_path / "otp.store").write_bytes(b"\xff\xfe\x00garbage")
    with pytest.raises(StoreLoadError):
        OtpStore.load(tmp_path)


STORE_TYPES = [OtpStore, MacRegistry, PseudonymDirectory, RevocationReasonCatalog, CredentialStore]


@settings(max_examples=300, suppress_health_check=[HealthCheck.too_slow])
@given(st.sampled_from(STORE_TYPES), st.text(max_size=200))
def test_fuzzed_text_never_crashes(cls, text):
    try:
        cls.from_text(text)
    except StoreLoadError:
        pass


@settings(max_examples=300, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
@given(st.sampled_from(range(5)), st.integers(0, 10**9), st.integers(1, 8))
def test_corrupted_real_files_never_crash(prov, which, salt, edits):
    cs, as_ = prov.cs_stores, prov.as_stores
    store = [cs.otp, cs.pseudonyms, cs.reasons, as_.credentials, as_.pseudonyms][which]
    text = list(store.to_text())
    rnd = random.Random(salt)
    for _ in range(edits):
        pos = rnd.randrange(len(text))
        op = rnd.randrange(3)
        if op == 0:
            text[pos] = rnd.choice("0123456789abcdefxyz- \n")
        elif op == 1:
            del text[pos]
        else:
            text.insert(pos, rnd.choice("0f \n-"))
    try:
        type(store).from_text("".join(text))
    except StoreLoadError:
        pass


def test_users_file(tmp_path):
    f = tmp_path / "users.txt"
    f.write_text("# comment\nuid-1 mid-a pw-one doctor\n\nuid-2 mid-a pw-two  # trailing comment\n")
    assert read_users_file(f) == [Identity("uid-1", "mid-a", "pw-one", "doctor"), Identity("uid-2", "mid-a", "pw-two")]
    f.write_text("only-two fields\n")
    with pytest.raises(ProvisioningError):
        read_users_file(f)
