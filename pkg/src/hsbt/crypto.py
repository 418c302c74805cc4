"""Cryptographic building blocks for the encrypted index.

Four primitives live here: authenticated probabilistic encryption (AES-128-GCM),
a small-domain pseudorandom permutation (cycle-walking Feistel network keyed by
AES), an incremental multiset hash (XOR accumulator over a keyed PRF plus an
explicit element counter), and an HMAC tag.

All operations are pure given their key material, so they are safe for
unrestricted concurrent use.  `MultisetHash` values are immutable snapshots;
`add` returns a new state.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
import struct
from dataclasses import dataclass, field

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

KEY_BYTES = 16
NONCE_BYTES = 12
TAG_BYTES = 16
MSET_DIGEST_BYTES = 16
MAC_BYTES = 32

_FEISTEL_ROUNDS = 4


class AuthenticationError(Exception):
    """Decryption or tag verification failed.

    Raised for a wrong key, wrong associated data, or a modified ciphertext;
    callers use this to detect tampering.
    """


def generate_key(security_param: int = 128) -> bytes:
    """Draw one uniformly random 128-bit symmetric key from the OS CSPRNG."""
    if security_param != 128:
        raise ValueError(f"unsupported security parameter: {security_param}")
    return secrets.token_bytes(KEY_BYTES)


@dataclass(frozen=True)
class SecretKey:
    """Client key material: `tree_key` protects index nodes and query tokens,
    `value_key` protects the stored values and never leaves the client."""

    tree_key: bytes
    value_key: bytes

    def __post_init__(self) -> None:
        if len(self.tree_key) != KEY_BYTES or len(self.value_key) != KEY_BYTES:
            raise ValueError("keys must be 16 bytes")
        if self.tree_key == self.value_key:
            raise ValueError("tree key and value key must differ")

    @classmethod
    def generate(cls, security_param: int = 128) -> "SecretKey":
        return cls(generate_key(security_param), generate_key(security_param))


@dataclass(frozen=True)
class Ciphertext:
    """One authenticated ciphertext.

    Wire layout is ``nonce(12) || body || tag(16)``, bit-exact.  The optional
    `aad` field echoes the associated data the ciphertext was bound to; it is
    never serialized.
    """

    nonce: bytes
    body: bytes
    tag: bytes
    aad: bytes | None = field(default=None, compare=False)

    def to_bytes(self) -> bytes:
        return self.nonce + self.body + self.tag

    @classmethod
    def from_bytes(cls, wire: bytes) -> "Ciphertext":
        if len(wire) < NONCE_BYTES + TAG_BYTES:
            raise ValueError("ciphertext too short")
        return cls(wire[:NONCE_BYTES], wire[NONCE_BYTES:-TAG_BYTES], wire[-TAG_BYTES:])


_aead_cache: dict[bytes, AESGCM] = {}


def _aead(key: bytes) -> AESGCM:
    inst = _aead_cache.get(key)
    if inst is None:
        inst = _aead_cache[key] = AESGCM(key)
    return inst


def encrypt(key: bytes, plaintext: bytes, aad: bytes = b"") -> Ciphertext:
    """Probabilistic authenticated encryption; a fresh nonce is drawn per call."""
    nonce = secrets.token_bytes(NONCE_BYTES)
    sealed = _aead(key).encrypt(nonce, plaintext, aad or None)
    return Ciphertext(nonce, sealed[:-TAG_BYTES], sealed[-TAG_BYTES:], aad)


def decrypt(key: bytes, ciphertext: Ciphertext, aad: bytes = b"") -> bytes:
    """Invert `encrypt`; raises AuthenticationError unless (key, aad, c) is authentic."""
    try:
        return _aead(key).decrypt(
            ciphertext.nonce, ciphertext.body + ciphertext.tag, aad or None
        )
    except InvalidTag:
        raise AuthenticationError("ciphertext rejected") from None


def encrypt_wire(key: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    """`encrypt` directly to wire bytes (hot path for bulk record handling)."""
    nonce = secrets.token_bytes(NONCE_BYTES)
    return nonce + _aead(key).encrypt(nonce, plaintext, aad or None)


def decrypt_wire(key: bytes, wire: bytes, aad: bytes = b"") -> bytes:
    """Invert `encrypt_wire`; raises AuthenticationError on any modification."""
    if len(wire) < NONCE_BYTES + TAG_BYTES:
        raise AuthenticationError("ciphertext too short")
    try:
        return _aead(key).decrypt(wire[:NONCE_BYTES], wire[NONCE_BYTES:], aad or None)
    except InvalidTag:
        raise AuthenticationError("ciphertext rejected") from None


def decrypt_wires(key: bytes, wires, aad: bytes = b"") -> list[bytes]:
    """Bulk `decrypt_wire`; any failure aborts the whole batch."""
    aead = _aead(key)
    bound = aad or None
    out = []
    try:
        for wire in wires:
            out.append(aead.decrypt(wire[:NONCE_BYTES], wire[NONCE_BYTES:], bound))
    except (InvalidTag, ValueError):
        raise AuthenticationError("ciphertext rejected") from None
    return out


def value_digest(value: bytes) -> bytes:
    """128-bit digest of a plaintext value, as embedded in leaf nodes and
    recomputed by the client during result verification."""
    return hashlib.sha256(value).digest()[:MSET_DIGEST_BYTES]


# ---------------------------------------------------------------------------
# Small-domain pseudorandom permutation
# ---------------------------------------------------------------------------
#
# A 4-round balanced Feistel network over the smallest even bit-width covering
# the domain, with AES-128 as the round function, restricted to [0, n) by
# cycle-walking.  Walking terminates because the Feistel network permutes the
# power-of-two superset, and costs < 4 expected iterations since the superset
# is below 4n.


def _feistel_width(domain_size: int) -> int:
    bits = max((domain_size - 1).bit_length(), 2)
    return bits + (bits & 1)


def _round_values(encryptor, width: int, rnd: int, halves: np.ndarray) -> np.ndarray:
    # One PRF evaluation per element: AES_k(width || round || half), bulk-encrypted.
    m = halves.shape[0]
    blocks = np.zeros((m, 16), dtype=np.uint8)
    blocks[:, 0] = width
    blocks[:, 1] = rnd
    blocks[:, 8:16] = halves.astype("<u8").view(np.uint8).reshape(m, 8)
    out = encryptor.update(blocks.tobytes())
    return np.frombuffer(out, dtype=np.uint8).reshape(m, 16)[:, :8].copy().view("<u8").reshape(m)


def _feistel(encryptor, width: int, xs: np.ndarray) -> np.ndarray:
    half = width // 2
    mask = np.uint64((1 << half) - 1)
    left = xs >> np.uint64(half)
    right = xs & mask
    for rnd in range(_FEISTEL_ROUNDS):
        f = _round_values(encryptor, width, rnd, right) & mask
        left, right = right, left ^ f
    return (left << np.uint64(half)) | right


def _prp_encryptor(key: bytes):
    # Raw AES block permutation used strictly as a PRF on distinct inputs.
    return Cipher(algorithms.AES(key), modes.ECB()).encryptor()


def prp_permutation(key: bytes, domain_size: int) -> np.ndarray:
    """Evaluate the keyed permutation on the whole domain [0, domain_size).

    Returns an array `p` with ``p[x] == prp_apply(key, domain_size, x)``.
    """
    if domain_size < 1:
        raise ValueError("domain size must be positive")
    if domain_size == 1:
        return np.zeros(1, dtype=np.uint64)
    enc = _prp_encryptor(key)
    width = _feistel_width(domain_size)
    ys = _feistel(enc, width, np.arange(domain_size, dtype=np.uint64))
    bad = ys >= domain_size
    while bad.any():
        ys[bad] = _feistel(enc, width, ys[bad])
        bad = ys >= domain_size
    return ys


def prp_apply(key: bytes, domain_size: int, x: int) -> int:
    """Apply the keyed permutation to one point of [0, domain_size)."""
    if not 0 <= x < domain_size:
        raise ValueError(f"point {x} outside domain [0, {domain_size})")
    if domain_size == 1:
        return 0
    enc = _prp_encryptor(key)
    width = _feistel_width(domain_size)
    y = _feistel(enc, width, np.array([x], dtype=np.uint64))
    while y[0] >= domain_size:
        y = _feistel(enc, width, y)
    return int(y[0])


# ---------------------------------------------------------------------------
# Incremental multiset hash
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultisetHash:
    """Order-independent incremental digest of a multiset of byte strings.

    The accumulator XORs a keyed PRF of each element, and the explicit element
    counter keeps repeated elements from cancelling out.  Equality compares
    both accumulator and count.
    """

    digest: bytes
    count: int
    key: bytes

    @classmethod
    def empty(cls, key: bytes) -> "MultisetHash":
        return cls(bytes(MSET_DIGEST_BYTES), 0, key)

    def add(self, element: bytes) -> "MultisetHash":
        h = hashlib.blake2b(element, key=self.key, digest_size=MSET_DIGEST_BYTES).digest()
        mixed = (
            int.from_bytes(self.digest, "little") ^ int.from_bytes(h, "little")
        ).to_bytes(MSET_DIGEST_BYTES, "little")
        return MultisetHash(mixed, self.count + 1, self.key)

    def add_all(self, elements) -> "MultisetHash":
        acc = int.from_bytes(self.digest, "little")
        n = self.count
        for element in elements:
            acc ^= int.from_bytes(
                hashlib.blake2b(element, key=self.key, digest_size=MSET_DIGEST_BYTES).digest(),
                "little",
            )
            n += 1
        return MultisetHash(acc.to_bytes(MSET_DIGEST_BYTES, "little"), n, self.key)


def mset_eq(a: MultisetHash, b: MultisetHash) -> bool:
    """True iff both accumulators and both element counts agree."""
    return a.digest == b.digest and a.count == b.count


def mac_tag(key: bytes, message: bytes) -> bytes:
    """Deterministic 256-bit keyed tag (HMAC-SHA256)."""
    return hmac.new(key, message, hashlib.sha256).digest()


def result_mac(tree_key: bytes, state: MultisetHash) -> bytes:
    """Tag over a result-multiset state, issued at session finalization and
    recomputed by the client over the values it actually received."""
    msg = b"hsbt-results\x00" + state.digest + struct.pack("<Q", state.count)
    return mac_tag(tree_key, msg)
