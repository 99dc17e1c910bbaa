import itertools
import random
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

import photon_oracle as oracle
from ramhu.errors import EncodingError
from ramhu.photon import (
    INTERNAL_CONSTANTS,
    MIX,
    ROUND_CONSTANTS,
    SBOX,
    SpongeState,
    gf_mul,
    pad,
    permutation,
    photon_hash,
    photon_hash_many,
    read_vectors,
    sig_concat,
    sign,
    split_sig_concat,
)

VECTORS = Path(__file__).parent / "data" / "photon256_vectors.txt"

# Computed once with tests/photon_oracle.py and frozen here.
PINNED = {
    b"": "eecb13369cf15ca19ff76c36a6637789199644a9a0b320f41826155ea2e2d6d5",
    b"abc": "c412435e329f6f4837a5e55eda83d66d8a8eae5d9744931f9c7cbb7e55584df6",
    b"The quick brown fox jumps over the lazy dog":
        "aba4e687dad8d33e6edc38ad436e5f7a1b17a6828bdac696ea4067457ab6d7de",
}


@pytest.mark.parametrize("msg,expected", sorted(PINNED.items()))
def test_pinned_digest(msg, expected):
    assert photon_hash(msg).hex() == expected


def test_vector_file_matches_both_implementations():
    vectors = read_vectors(VECTORS)
    assert len(vectors) >= 3
    msgs = [m for m, _ in vectors]
    assert oracle.hash_batch(msgs) == [d for _, d in vectors]
    for msg, digest in vectors:
        assert photon_hash(msg) == digest


def test_constants_agree_with_generators():
    assert bytes(oracle.SBOX.tolist()) == SBOX
    assert list(ROUND_CONSTANTS) == oracle.RC
    assert list(INTERNAL_CONSTANTS) == oracle.IC
    assert MIX == oracle.mix_matrix()
    # six shifts of the companion matrix move its last row to the top
    assert MIX[0] == [2, 3, 1, 2, 1, 4]


def _det_gf(m):
    m = [row[:] for row in m]
    n = len(m)
    det = 1
    for c in range(n):
        piv = next((r for r in range(c, n) if m[r][c]), None)
        if piv is None:
            return 0
        m[c], m[piv] = m[piv], m[c]
        det = gf_mul(det, m[c][c])
        inv = oracle._inverse(m[c][c])
        for r in range(c + 1, n):
            if m[r][c]:
                f = gf_mul(m[r][c], inv)
                m[r] = [a ^ gf_mul(f, b) for a, b in zip(m[r], m[c])]
    return det


def test_mix_matrix_is_mds():
    # every square submatrix must be nonsingular over GF(2^8)
    for k in range(1, 7):
        for rows in itertools.combinations(range(6), k):
            for cols in itertools.combinations(range(6), k):
                sub = [[MIX[r][c] for c in cols] for r in rows]
                assert _det_gf(sub) != 0, (rows, cols)


def test_permutation_matches_oracle():
    import numpy as np
    rng = random.Random(3)
    for _ in range(20):
        cells = [[rng.randrange(256) for _ in range(6)] for _ in range(6)]
        ref = oracle.permute(np.array([cells], dtype=np.uint8))[0].tolist()
        assert permutation(cells) == ref


def test_random_corpus_matches_oracle():
    rng = random.Random(11)
    msgs = [rng.randbytes(rng.randrange(0, 24)) for _ in range(2000)]
    expected = oracle.hash_batch(msgs)
    assert photon_hash_many(msgs) == expected
    assert [photon_hash(m) for m in msgs[:300]] == expected[:300]


def test_pad_rule():
    assert pad(b"") == b"\x80\x00\x00\x00"
    assert pad(b"abc") == b"abc\x80"
    assert pad(b"abcd") == b"abcd\x80\x00\x00\x00"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.binary(max_size=40), max_size=5))
def test_streaming_equals_one_shot(chunks):
    s = SpongeState()
    for c in chunks:
        s.update(c)
    assert s.digest() == photon_hash(b"".join(chunks))
    assert s.absorbed_bits == 8 * sum(map(len, chunks))


def test_sponge_phase_is_one_way():
    s = SpongeState().update(b"abc")
    assert s.phase == "absorbing"
    s.digest()
    assert s.phase == "squeezing"
    with pytest.raises(ValueError):
        s.update(b"d")
    cells = s.cells
    assert len(cells) == 6 and all(len(r) == 6 and all(0 <= v < 256 for v in r) for r in cells)


def test_copy_is_independent():
    base = SpongeState().update(b"prefix!!")
    a = base.copy().update(b"one")
    b = base.copy().update(b"two")
    assert a.digest() == photon_hash(b"prefix!!one")
    assert b.digest() == photon_hash(b"prefix!!two")
    assert base.phase == "absorbing"


def test_batch_with_prefix():
    base = SpongeState().update(b"x" * 48)
    tails = [b"", b"1", b"1234", b"12345678"]
    assert photon_hash_many(tails, prefix=base) == [photon_hash(b"x" * 48 + t) for t in tails]
    with pytest.raises(ValueError):
        photon_hash_many(tails, prefix=SpongeState().update(b"odd"))


def test_no_collisions_in_random_corpus():
    rng = random.Random(5)
    msgs = list({rng.randbytes(8) for _ in range(10_000)})
    assert len(set(photon_hash_many(msgs))) == len(msgs)


def test_avalanche():
    rng = random.Random(9)
    total = 0
    trials = 1000
    for _ in range(trials):
        m = bytearray(rng.randbytes(16))
        h0 = int.from_bytes(photon_hash(bytes(m)), "big")
        bit = rng.randrange(128)
        m[bit // 8] ^= 1 << (bit % 8)
        total += bin(h0 ^ int.from_bytes(photon_hash(bytes(m)), "big")).count("1")
    mean_fraction = total / trials / 256
    assert mean_fraction >= 0.30
    assert 0.45 < mean_fraction < 0.55


def test_sig_concat_basics():
    assert sig_concat([]) == b""
    assert sig_concat([b"A", b"B"]) != sig_concat([b"B", b"A"])
    assert sig_concat([b"a\x00"]) != sig_concat([b"a"])
    with pytest.raises(EncodingError):
        sig_concat([bytes(33)])
    assert sign(b"a", b"b") == photon_hash(sig_concat([b"a", b"b"]))


@given(st.lists(st.binary(max_size=32), max_size=8))
def test_sig_concat_round_trip(parts):
    assert split_sig_concat(sig_concat(parts)) == parts


@given(st.binary(max_size=99))
def test_split_rejects_or_round_trips(blob):
    try:
        parts = split_sig_concat(blob)
    except EncodingError:
        return
    assert sig_concat(parts) == blob
