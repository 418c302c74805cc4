"""Primitive-level contracts: AEAD roundtrips and tamper rejection, PRP
bijectivity, multiset-hash order independence, MAC determinism."""

import random
import secrets

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsbt import crypto
from hsbt.crypto import (
    AuthenticationError,
    Ciphertext,
    MultisetHash,
    SecretKey,
    decrypt,
    decrypt_wire,
    encrypt,
    encrypt_wire,
    generate_key,
    mac_tag,
    mset_eq,
    prp_apply,
    prp_permutation,
)


def test_generate_key_length_and_distinctness():
    k1, k2 = generate_key(128), generate_key(128)
    assert len(k1) == 16 and len(k2) == 16
    assert k1 != k2


def test_generate_key_no_repeats_in_1000_draws():
    draws = {generate_key() for _ in range(1000)}
    assert len(draws) == 1000


def test_generate_key_rejects_other_parameters():
    with pytest.raises(ValueError):
        generate_key(256)


def test_secret_key_halves_must_differ():
    k = generate_key()
    with pytest.raises(ValueError):
        SecretKey(k, k)
    sk = SecretKey.generate()
    assert sk.tree_key != sk.value_key


def test_encrypt_decrypt_roundtrip_with_aad():
    key = generate_key()
    ct = encrypt(key, b"payload", b"slot-7")
    assert decrypt(key, ct, b"slot-7") == b"payload"


def test_encrypt_is_probabilistic():
    key = generate_key()
    a = encrypt(key, b"same message", b"")
    b = encrypt(key, b"same message", b"")
    assert a.to_bytes() != b.to_bytes()


def test_decrypt_rejects_wrong_key_and_wrong_aad():
    key, other = generate_key(), generate_key()
    ct = encrypt(key, b"m", b"a")
    with pytest.raises(AuthenticationError):
        decrypt(other, ct, b"a")
    with pytest.raises(AuthenticationError):
        decrypt(key, ct, b"b")


def test_decrypt_rejects_single_bit_flip():
    key = generate_key()
    wire = bytearray(encrypt(key, b"twelve bytes!", b"").to_bytes())
    wire[14] ^= 0x01
    with pytest.raises(AuthenticationError):
        decrypt(key, Ciphertext.from_bytes(bytes(wire)), b"")


def test_wire_layout_is_nonce_body_tag():
    key = generate_key()
    ct = encrypt(key, b"\x00" * 20, b"")
    wire = ct.to_bytes()
    assert len(wire) == 12 + 20 + 16
    assert wire[:12] == ct.nonce and wire[-16:] == ct.tag
    back = Ciphertext.from_bytes(wire)
    assert (back.nonce, back.body, back.tag) == (ct.nonce, ct.body, ct.tag)


def test_wire_helpers_match_object_api():
    key = generate_key()
    wire = encrypt_wire(key, b"abc", b"ad")
    assert decrypt_wire(key, wire, b"ad") == b"abc"
    assert decrypt(key, Ciphertext.from_bytes(wire), b"ad") == b"abc"
    with pytest.raises(AuthenticationError):
        decrypt_wire(key, wire, b"xx")


def test_aead_fuzz_bit_flips_never_accepted():
    # Smaller sibling of the acceptance sweep; full 10^4 flips run there.
    key = generate_key()
    rng = random.Random(7)
    wire = encrypt_wire(key, secrets.token_bytes(64), b"p")
    for _ in range(500):
        flipped = bytearray(wire)
        flipped[rng.randrange(len(wire))] ^= 1 << rng.randrange(8)
        with pytest.raises(AuthenticationError):
            decrypt_wire(key, bytes(flipped), b"p")


# -- PRP ---------------------------------------------------------------------


def test_prp_singleton_domain():
    assert prp_apply(generate_key(), 1, 0) == 0


def test_prp_domain_8_is_permutation():
    key = generate_key()
    image = {prp_apply(key, 8, x) for x in range(8)}
    assert image == set(range(8))


def test_prp_non_power_of_two_domain_is_permutation():
    key = generate_key()
    image = sorted(prp_apply(key, 1000, x) for x in range(1000))
    assert image == list(range(1000))


def test_prp_vectorized_matches_scalar():
    key = generate_key()
    for n in (1, 2, 3, 5, 17, 64, 100, 257):
        perm = prp_permutation(key, n)
        assert sorted(perm.tolist()) == list(range(n))
        for x in range(0, n, max(1, n // 7)):
            assert prp_apply(key, n, x) == perm[x]


def test_prp_deterministic_per_key_and_key_sensitive():
    k1, k2 = generate_key(), generate_key()
    p1a = prp_permutation(k1, 512)
    p1b = prp_permutation(k1, 512)
    p2 = prp_permutation(k2, 512)
    assert np.array_equal(p1a, p1b)
    assert not np.array_equal(p1a, p2)


def test_prp_rejects_out_of_domain_point():
    with pytest.raises(ValueError):
        prp_apply(generate_key(), 10, 10)
    with pytest.raises(ValueError):
        prp_apply(generate_key(), 10, -1)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=2048))
def test_prp_bijective_on_random_domains(n):
    perm = prp_permutation(b"\x42" * 16, n)
    assert len(np.unique(perm)) == n and int(perm.max()) == n - 1


# -- Multiset hash -----------------------------------------------------------


def test_mset_commutative_fold():
    key = generate_key()
    h0 = MultisetHash.empty(key)
    assert h0.add(b"a").add(b"b") == h0.add(b"b").add(b"a")


def test_mset_nondegenerate_and_count_sensitive():
    h0 = MultisetHash.empty(generate_key())
    h1 = h0.add(b"a")
    assert h1 != h0
    h2 = h1.add(b"a")
    # XOR cancels the accumulator but the element counter keeps them apart.
    assert h2.digest == h0.digest
    assert not mset_eq(h2, h0) and not mset_eq(h2, h1)


def test_mset_add_all_matches_repeated_add():
    key = generate_key()
    items = [secrets.token_bytes(9) for _ in range(20)]
    one_by_one = MultisetHash.empty(key)
    for item in items:
        one_by_one = one_by_one.add(item)
    assert one_by_one == MultisetHash.empty(key).add_all(items)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.binary(min_size=1, max_size=16), min_size=1, max_size=30), st.randoms())
def test_mset_invariant_under_shuffle(items, rng):
    key = b"\x13" * 16
    base = MultisetHash.empty(key).add_all(items)
    shuffled = list(items)
    rng.shuffle(shuffled)
    assert mset_eq(base, MultisetHash.empty(key).add_all(shuffled))


def test_mset_shuffle_invariance_50_elements_100_shuffles():
    key = generate_key()
    items = [secrets.token_bytes(12) for _ in range(50)]
    reference = MultisetHash.empty(key).add_all(items)
    rng = random.Random(1234)
    for _ in range(100):
        rng.shuffle(items)
        assert mset_eq(reference, MultisetHash.empty(key).add_all(items))


# -- MAC ---------------------------------------------------------------------


def test_mac_deterministic_and_256_bit():
    key = generate_key()
    assert mac_tag(key, b"msg") == mac_tag(key, b"msg")
    assert len(mac_tag(key, b"msg")) == 32


def test_mac_key_sensitivity():
    assert mac_tag(generate_key(), b"msg") != mac_tag(generate_key(), b"msg")


def test_mac_message_bit_sensitivity():
    key = generate_key()
    assert mac_tag(key, b"\x00") != mac_tag(key, b"\x01")


def test_result_mac_binds_count_and_digest():
    key = generate_key()
    a = MultisetHash.empty(key).add(b"x")
    b = a.add(b"x")
    assert crypto.result_mac(key, a) != crypto.result_mac(key, b)
