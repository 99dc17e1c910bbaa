import random

import pytest
from cryptography.hazmat.primitives.asymmetric import ec as crypto_ec

from ramhu import curve as C
from ramhu.ecies import (
    CipherEnvelope,
    PrivateKey,
    PublicKey,
    decrypt,
    derive_shared,
    encrypt,
    identify_sender,
    keygen,
    read_key_file,
    write_key_file,
)
from ramhu.errors import IntegrityError, InvalidKey, MalformedMessage
from ramhu.photon import photon_hash


@pytest.fixture(scope="module")
def pairs():
    rng = random.Random(42)
    return [keygen(rng) for _ in range(4)]


def test_scalar_one_gives_generator():
    assert PrivateKey(1).public_key().point == C.P256.g


def test_scalar_n_minus_one_gives_negated_generator():
    pub = PrivateKey(C.P256.n - 1).public_key()
    assert pub.x == C.P256.gx
    assert pub.y == (-C.P256.gy) % C.P256.p


def test_scalar_range_enforced():
    with pytest.raises(InvalidKey):
        PrivateKey(0)
    with pytest.raises(InvalidKey):
        PrivateKey(C.P256.n)


def test_hundred_keys_distinct_and_on_curve():
    rng = random.Random(7)
    keys = [keygen(rng) for _ in range(100)]
    assert len({k.scalar for k, _ in keys}) == 100
    assert all(C.P256.contains(p.point) for _, p in keys)


def test_public_keys_match_cryptography_library():
    rng = random.Random(8)
    for _ in range(5):
        priv, pub = keygen(rng)
        ref = crypto_ec.derive_private_key(priv.scalar, crypto_ec.SECP256R1()).public_key().public_numbers()
        assert (ref.x, ref.y) == pub.point


def test_shared_secret_matches_cryptography_ecdh():
    rng = random.Random(9)
    (a, A), (b, B) = keygen(rng), keygen(rng)
    ka = crypto_ec.derive_private_key(a.scalar, crypto_ec.SECP256R1())
    kb = crypto_ec.derive_private_key(b.scalar, crypto_ec.SECP256R1())
    raw_x = ka.exchange(crypto_ec.ECDH(), kb.public_key())
    assert derive_shared(a, B) == photon_hash(raw_x)


PINNED_SHARED = "8e5cf35c4b35a1f517e115c289d80bfb9777f1cbeb4fb392cee5f99fe384fbfb"


def test_pinned_shared_secret():
    # Frozen from the cryptography-library ECDH x-coordinate hashed with the test oracle.
    a = PrivateKey(0x1111111111111111111111111111111111111111111111111111111111111111)
    b = PrivateKey(0x2222222222222222222222222222222222222222222222222222222222222222)
    assert derive_shared(a, b.public_key()).hex() == PINNED_SHARED


def test_scalar_one_shared_is_hash_of_x(pairs):
    _, B = pairs[1]
    assert derive_shared(PrivateKey(1), B) == photon_hash(B.x.to_bytes(32, "big"))


def test_dh_symmetry(pairs):
    (a, A), (b, B) = pairs[0], pairs[1]
    assert derive_shared(a, B) == derive_shared(b, A)


def test_secp256k1_curve_works():
    rng = random.Random(1)
    a, A = keygen(rng, C.SECP256K1)
    b, B = keygen(rng, C.SECP256K1)
    assert derive_shared(a, B) == derive_shared(b, A)
    ref = crypto_ec.derive_private_key(a.scalar, crypto_ec.SECP256K1()).public_key().public_numbers()
    assert (ref.x, ref.y) == A.point


def test_off_curve_public_key_rejected():
    with pytest.raises(InvalidKey):
        PublicKey(C.P256.gx, C.P256.gy + 1)
    with pytest.raises(InvalidKey):
        PublicKey.from_point(None)


def test_round_trip_and_nonce_freshness(pairs):
    rng = random.Random(2)
    (a, A), (b, B) = pairs[0], pairs[1]
    e1 = encrypt(a, B, b"hello world", rng)
    e2 = encrypt(a, B, b"hello world", rng)
    assert e1.nonce != e2.nonce and e1.body != e2.body
    assert decrypt(b, A, e1) == b"hello world"
    assert decrypt(b, A, CipherEnvelope.from_bytes(e2.to_bytes())) == b"hello world"


def test_empty_plaintext_refused(pairs):
    with pytest.raises(ValueError):
        encrypt(pairs[0][0], pairs[1][1], b"", random.Random(0))


def test_wrong_recipient_key_fails_tag(pairs):
    rng = random.Random(3)
    (a, A), (b, B), (c, _) = pairs[0], pairs[1], pairs[2]
    env = encrypt(a, B, b"secret", rng)
    with pytest.raises(IntegrityError):
        decrypt(c, A, env)


def test_wrong_sender_key_fails_hint(pairs):
    rng = random.Random(3)
    (a, _), (b, B), (_, Cpub) = pairs[0], pairs[1], pairs[2]
    env = encrypt(a, B, b"secret", rng)
    with pytest.raises(InvalidKey):
        decrypt(b, Cpub, env)


def test_attacker_reencryption_under_claimed_identity(pairs):
    # attacker advertises the victim's key in the hint but encrypts with its own
    rng = random.Random(4)
    (victim, V), (srv, S), (atk, _) = pairs[0], pairs[1], pairs[2]
    env = encrypt(atk, S, b"forged request", rng, sender_public=V)
    assert identify_sender(env, [S, V]) == V
    with pytest.raises(IntegrityError):
        decrypt(srv, V, env)


def test_single_bit_flip_sweep(pairs):
    rng = random.Random(5)
    (a, A), (b, B) = pairs[0], pairs[1]
    raw = encrypt(a, B, rng.randbytes(64), rng).to_bytes()
    for i in range(len(raw) * 8):
        bad = bytearray(raw)
        bad[i // 8] ^= 1 << (i % 8)
        with pytest.raises((IntegrityError, InvalidKey)):
            decrypt(b, A, CipherEnvelope.from_bytes(bytes(bad)))


def test_short_envelope_is_malformed():
    with pytest.raises(MalformedMessage):
        CipherEnvelope.from_bytes(bytes(40))


def test_identify_sender(pairs):
    rng = random.Random(6)
    (a, A), (b, B) = pairs[0], pairs[1]
    env = encrypt(a, B, b"x", rng)
    assert identify_sender(env, [p for _, p in pairs]) == A
    with pytest.raises(InvalidKey):
        identify_sender(env, [B])


def test_hint_is_salted(pairs):
    rng = random.Random(6)
    (a, A), (b, B) = pairs[0], pairs[1]
    hints = {encrypt(a, B, b"x", rng).sender_hint for _ in range(20)}
    assert len(hints) == 20


def test_round_trip_long_messages(pairs):
    rng = random.Random(12)
    (a, A), (b, B) = pairs[0], pairs[1]
    nonces = set()
    for _ in range(1000):
        m = rng.randbytes(rng.randint(1, 4096))
        env = encrypt(a, B, m, rng)
        nonces.add(env.nonce)
        assert decrypt(b, A, env) == m
    assert len(nonces) == 1000


def test_key_file_round_trip(tmp_path, pairs):
    path = tmp_path / "k.keys"
    entries = {"cs": pairs[0], "as": (None, pairs[1][1])}
    write_key_file(path, entries)
    assert read_key_file(path) == entries
    path.write_text("cs 00 11\n")
    with pytest.raises(InvalidKey):
        read_key_file(path)
    path.write_text(f"cs {pairs[0][0].to_bytes().hex()} {pairs[1][1].to_bytes().hex()}\n")
    with pytest.raises(InvalidKey):
        read_key_file(path)


def test_private_key_repr_hides_scalar(pairs):
    priv = pairs[0][0]
    assert hex(priv.scalar)[2:] not in repr(priv)
