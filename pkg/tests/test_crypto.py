import os

import pytest
from hypothesis import given, settings, strategies as st

from fsse import crypto
from fsse.common import InvalidArgument

from sha256_ref import sha256 as ref_sha256

blocks = st.binary(min_size=16, max_size=16)

# FIPS-197 known answers
ZERO = bytes(16)
AES_ZERO_KAT = bytes.fromhex("66e94bd4ef8a2c3b884cfa59ca342b2e")
C1_KEY = bytes.fromhex("000102030405060708090a0b0c0d0e0f")
C1_PT = bytes.fromhex("00112233445566778899aabbccddeeff")
C1_CT = bytes.fromhex("69c4e0d86a7b0430d8cdb78070b4c55a")

FIXED = bytes(range(32))  # t_w || st for the oracle checks below


def test_reference_sha256_matches_fips_vectors():
    assert ref_sha256(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert ref_sha256(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert ref_sha256(b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq").hex() == \
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"


def test_keyword_hash_known_values():
    # frozen from the reference SHA-256 over 0x00 || keyword
    assert crypto.keyword_hash(b"abc").hex() == "609f6e36d2405585188d5cfd761f407c"
    assert crypto.keyword_hash(b"a").hex() == "022a6979e6dab7aa5ae4c3e5e45f7e97"
    assert crypto.keyword_hash(b"b").hex() == "57eb35615d47f34ec714cacdf5fd7460"


@given(st.binary(min_size=1, max_size=300))
@settings(max_examples=50)
def test_keyword_hash_agrees_with_reference(w):
    assert crypto.keyword_hash(w) == ref_sha256(b"\x00" + w)[:16]
    assert crypto.keyword_hash(w) == crypto.keyword_hash(w)


def test_keyword_hash_rejects_empty():
    with pytest.raises(InvalidArgument):
        crypto.keyword_hash(b"")


def test_h1_h2_known_values():
    assert crypto.h1(FIXED).hex() == "491176b0f443c65a7c7d72df47d6cbc0d04e111fb5a619f60d3e77677ab6f919"
    assert crypto.h2(FIXED, 25).hex() == "121e01fd47d8c2ecdb10fa6f0a51a97a48cebd0de5231f274f"


@given(st.binary(min_size=1, max_size=100))
@settings(max_examples=50)
def test_hash_roles_agree_with_reference_and_are_separated(x):
    assert crypto.h1(x) == ref_sha256(b"\x01" + x)
    assert crypto.h2(x, 32) == ref_sha256(b"\x02" + x)
    assert crypto.h2(x, 9) == crypto.h2(x, 32)[:9]
    assert crypto.h1(x) != crypto.h2(x, 32)


def test_h1_rejects_empty_and_h2_checks_length():
    with pytest.raises(InvalidArgument):
        crypto.h1(b"")
    for bad in (0, 33):
        with pytest.raises(InvalidArgument):
            crypto.h2(b"x", bad)
    assert len(crypto.h2(b"x", 9)) == 9


def test_aes_known_answers():
    assert crypto.prf(ZERO, ZERO) == AES_ZERO_KAT
    assert crypto.prp_forward(ZERO, ZERO) == AES_ZERO_KAT
    assert crypto.prp_forward(C1_KEY, C1_PT) == C1_CT
    assert crypto.prp_inverse(C1_KEY, C1_CT) == C1_PT
    assert crypto.prp_inverse(ZERO, AES_ZERO_KAT) == ZERO


@pytest.mark.parametrize("fn", [crypto.prf, crypto.prp_forward, crypto.prp_inverse])
def test_block_length_checked(fn):
    with pytest.raises(InvalidArgument):
        fn(bytes(15), ZERO)
    with pytest.raises(InvalidArgument):
        fn(ZERO, bytes(17))


@given(blocks, blocks)
def test_prp_round_trip(k, x):
    assert crypto.prp_inverse(k, crypto.prp_forward(k, x)) == x
    assert crypto.prp_forward(k, crypto.prp_inverse(k, x)) == x


@given(blocks, st.lists(blocks, min_size=2, max_size=40, unique=True))
def test_prp_injective(k, xs):
    assert len({crypto.prp_forward(k, x) for x in xs}) == len(xs)


@pytest.mark.parametrize("n", [1, 7, 1000])
def test_chain_recovery(n):
    keys = [os.urandom(16) for _ in range(n)]
    st0 = os.urandom(16)
    states = [st0]
    for k in keys:
        states.append(crypto.prp_forward(k, states[-1]))
    st = states[-1]
    for i, k in enumerate(reversed(keys)):
        st = crypto.prp_inverse(k, st)
        assert st == states[n - 1 - i]
    assert st == st0


def test_random_block_unique_and_sized():
    draws = {crypto.random_block() for _ in range(1_000_000)}
    assert len(draws) == 1_000_000
    assert all(len(d) == 16 for d in list(draws)[:100])


def test_seeded_source_reproducible():
    a, b = crypto.SeededRandom(5), crypto.SeededRandom(5)
    assert [a.block() for _ in range(10)] == [b.block() for _ in range(10)]
    assert crypto.SeededRandom(6).block() != crypto.SeededRandom(5).block()


def test_seeded_source_refused_outside_test_mode():
    crypto.enable_test_mode(False)
    try:
        with pytest.raises(InvalidArgument):
            crypto.SeededRandom(1)
    finally:
        crypto.enable_test_mode(True)


def test_op_counters():
    crypto.ops_reset()
    crypto.prf(ZERO, ZERO)
    crypto.h1(b"x")
    crypto.h2(b"x", 3)
    crypto.random_block()
    assert crypto.ops_snapshot() == {"prf": 1, "prp": 0, "prp_inv": 0, "h1": 1, "h2": 1, "rand": 1}
