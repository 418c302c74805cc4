"""Serialization and encryption of the index container.

The container holds two regions behind a small header:

* node region: one fixed-size encrypted record per tree node, the record of
  node ``x`` stored at slot ``PRP(tree_key, node_count, x.id)``.  Every record
  has the same size whether it came from the root, an inner node, or a leaf,
  so the ciphertexts expose nothing about node fullness.  Each record is
  bound to its slot through the AEAD associated data, so relocating a record
  is detected at decryption.
* value region: ``n`` length-prefixed encrypted blobs in the random order
  chosen at build time, decryptable only with the value key.

Node record plaintext, all integers little-endian::

    id(4) | flags(1, bit0 = leaf) | key_count(2) | keys[(b-1) x 4] |
    pointers[b x 4] | integrity region (only when the integrity flag is set)

The integrity region is ``max(4 b, 16 (b-1))`` bytes: inner nodes lay out one
child id per pointer slot, leaves one 16-byte value digest per key slot; the
shared size keeps records shape-identical.  Inner pointer slots hold child
storage positions on disk (the build-side child ids are rewritten here).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from hsbt.bptree import DUMMY_POINTER, KEY_INFINITY, KEY_NEG_INFINITY, PlainNode, PlainTree
import hmac as _hmac

from hsbt.crypto import (
    Ciphertext,
    MultisetHash,
    NONCE_BYTES,
    SecretKey,
    TAG_BYTES,
    decrypt_wires,
    encrypt,
    encrypt_wire,
    prp_permutation,
    result_mac,
    value_digest,
)

HEADER_MAGIC = b"HSBT1"
HEADER_VERSION = 1
_HEADER = struct.Struct("<5sBBBHIQI")  # magic, version, integrity, key width, b, #nodes, n, record size

_NODE_FIXED = struct.Struct("<IBH")
_FLAG_LEAF = 0x01


def integrity_region_size(branching: int) -> int:
    return max(4 * branching, 16 * (branching - 1))


def node_plain_size(branching: int, integrity: bool) -> int:
    size = _NODE_FIXED.size + 4 * (branching - 1) + 4 * branching
    return size + (integrity_region_size(branching) if integrity else 0)


def serialize_node(node: PlainNode, branching: int, integrity: bool, *, pointer_map=None) -> bytes:
    """Fixed-shape plaintext for one node.

    `pointer_map` rewrites live inner pointers (child ids from the build) to
    storage positions; leaves keep their value-region indices as is.
    """
    pointers = list(node.pointers)
    if not node.is_leaf and pointer_map is not None:
        for i in range(node.key_count + 1):
            pointers[i] = pointer_map(pointers[i])
    out = bytearray()
    out += _NODE_FIXED.pack(node.node_id, _FLAG_LEAF if node.is_leaf else 0, node.key_count)
    out += np.asarray(node.keys, dtype="<u4").tobytes()
    out += np.asarray(pointers, dtype="<u4").tobytes()
    if integrity:
        region = bytearray(integrity_region_size(branching))
        if node.is_leaf:
            for i, digest in enumerate(node.value_hashes or ()):
                region[16 * i : 16 * i + 16] = digest
        else:
            # Child ids, one per pointer slot, dummy-padded like the pointers.
            ids = list(node.pointers[: node.key_count + 1])
            ids += [DUMMY_POINTER] * (branching - len(ids))
            region[: 4 * branching] = np.asarray(ids, dtype="<u4").tobytes()
        out += region
    return bytes(out)


@dataclass(slots=True)
class DecodedNode:
    """A node record after decryption, as seen inside the enclave."""

    node_id: int
    is_leaf: bool
    key_count: int
    keys: tuple[int, ...]  # b-1 entries, padded with KEY_INFINITY
    pointers: tuple[int, ...]  # b entries
    slot: int
    child_ids: tuple[int, ...] | None = None  # b entries (inner, integrity mode)
    _hash_region: bytes | None = None

    def value_hash(self, pointer_slot: int) -> bytes:
        """Digest stored next to leaf pointer `pointer_slot` (1-based like the keys)."""
        off = 16 * (pointer_slot - 1)
        return self._hash_region[off : off + 16]


_word_structs: dict[int, struct.Struct] = {}


def _words(count: int) -> struct.Struct:
    s = _word_structs.get(count)
    if s is None:
        s = _word_structs[count] = struct.Struct(f"<{count}I")
    return s


def deserialize_node(plain: bytes, branching: int, integrity: bool, slot: int) -> DecodedNode:
    node_id, flags, key_count = _NODE_FIXED.unpack_from(plain, 0)
    off = _NODE_FIXED.size
    keys = _words(branching - 1).unpack_from(plain, off)
    off += 4 * (branching - 1)
    pointers = _words(branching).unpack_from(plain, off)
    off += 4 * branching
    is_leaf = bool(flags & _FLAG_LEAF)
    child_ids = None
    hash_region = None
    if integrity:
        if is_leaf:
            hash_region = plain[off : off + 16 * (branching - 1)]
        else:
            child_ids = _words(branching).unpack_from(plain, off)
    return DecodedNode(node_id, is_leaf, key_count, keys, pointers, slot, child_ids, hash_region)


@dataclass
class EncryptedIndex:
    """The deployable container: header fields plus the two encrypted regions.

    Immutable after creation; concurrent readers need no coordination.  The
    node region is a single byte blob sliced by slot, which doubles as the
    shared host-memory region the enclave fetches records from.
    """

    branching: int
    n_values: int
    node_count: int
    key_width: int
    integrity: bool
    node_record_size: int
    node_region: bytes
    value_blobs: tuple[bytes, ...]

    def node_record(self, slot: int) -> bytes:
        if not 0 <= slot < self.node_count:
            raise IndexError(f"node slot {slot} outside [0, {self.node_count})")
        start = slot * self.node_record_size
        return self.node_region[start : start + self.node_record_size]

    def value_blob(self, index: int) -> bytes:
        if not 0 <= index < self.n_values:
            raise IndexError(f"value index {index} outside [0, {self.n_values})")
        return self.value_blobs[index]

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(
            _HEADER.pack(
                HEADER_MAGIC,
                HEADER_VERSION,
                1 if self.integrity else 0,
                self.key_width,
                self.branching,
                self.node_count,
                self.n_values,
                self.node_record_size,
            )
        )
        out.write(self.node_region)
        for blob in self.value_blobs:
            out.write(struct.pack("<I", len(blob)))
            out.write(blob)
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedIndex":
        magic, version, integrity, key_width, b, node_count, n, record_size = _HEADER.unpack_from(
            data, 0
        )
        if magic != HEADER_MAGIC:
            raise ValueError("not an index container")
        if version != HEADER_VERSION:
            raise ValueError(f"unsupported container version {version}")
        off = _HEADER.size
        region = data[off : off + node_count * record_size]
        off += node_count * record_size
        blobs = []
        for _ in range(n):
            (length,) = struct.unpack_from("<I", data, off)
            off += 4
            blobs.append(data[off : off + length])
            off += length
        return cls(b, n, node_count, key_width, bool(integrity), record_size, region, tuple(blobs))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EncryptedIndex":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def slot_aad(slot: int) -> bytes:
    return struct.pack("<I", slot)


def encrypt_index(
    sk: SecretKey, tree: PlainTree, values, *, integrity: bool = False
) -> EncryptedIndex:
    """Encrypt a built tree and its values into a container.

    `values` must align with the pair order given to the build; the tree's
    value permutation decides where each encrypted blob lands.
    """
    if len(values) != tree.n_values:
        raise ValueError("value count does not match the built tree")
    node_count = len(tree.nodes)
    slot_of_id = prp_permutation(sk.tree_key, node_count)

    plain_size = node_plain_size(tree.branching, integrity)
    records: list[bytes | None] = [None] * node_count
    for node in tree.nodes:
        slot = int(slot_of_id[node.node_id])
        plain = serialize_node(
            node, tree.branching, integrity, pointer_map=lambda i: int(slot_of_id[i])
        )
        assert len(plain) == plain_size
        records[slot] = encrypt_wire(sk.tree_key, plain, slot_aad(slot))

    record_size = len(records[0])
    assert all(len(r) == record_size for r in records)

    blobs: list[bytes | None] = [None] * tree.n_values
    for i, value in enumerate(values):
        blobs[tree.value_positions[i]] = encrypt_wire(sk.value_key, bytes(value))

    return EncryptedIndex(
        branching=tree.branching,
        n_values=tree.n_values,
        node_count=node_count,
        key_width=4,
        integrity=integrity,
        node_record_size=record_size,
        node_region=b"".join(records),
        value_blobs=tuple(blobs),
    )


# ---------------------------------------------------------------------------
# Query tokens and client-side result handling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RangeToken:
    """Authenticated encryption of the queried range endpoints.

    Randomized: two tokens for the same range are distinct ciphertexts.  In
    multi-user mode the client id rides alongside in the clear so the enclave
    can pick the right key.
    """

    ciphertext: Ciphertext
    client_id: str | None = None

    @property
    def wire_size(self) -> int:
        prefix = len(self.client_id.encode()) + 1 if self.client_id else 0
        return prefix + NONCE_BYTES + 8 + TAG_BYTES


def make_token(
    tree_key: bytes,
    r_start: int | None,
    r_end: int | None,
    client_id: str | None = None,
) -> RangeToken:
    """Mint a token for [r_start, r_end]; `None` endpoints encode the open
    sides (below / above queries)."""
    rs = KEY_NEG_INFINITY if r_start is None else int(r_start)
    re_ = KEY_INFINITY if r_end is None else int(r_end)
    if not 0 <= rs <= 0xFFFFFFFF or not 0 <= re_ <= 0xFFFFFFFF:
        raise ValueError("range endpoint outside the 32-bit key space")
    if rs > re_:
        raise ValueError(f"empty range: {rs} > {re_}")
    return RangeToken(encrypt(tree_key, struct.pack("<II", rs, re_)), client_id)


def unpack_range(plain: bytes) -> tuple[int, int]:
    if len(plain) != 8:
        raise ValueError("token plaintext must be 8 bytes")
    rs, re_ = struct.unpack("<II", plain)
    return rs, re_


def decrypt_results(value_key: bytes, blobs) -> list[bytes]:
    """Decrypt fetched result blobs, in order.  Any authentication failure
    aborts the whole result: partial output would mask tampering."""
    return decrypt_wires(value_key, blobs)


def verify_result_mac(tree_key: bytes, values, mac: bytes) -> bool:
    """Recompute the result multiset digest over the values actually received
    and compare against the enclave-issued tag."""
    state = MultisetHash.empty(tree_key).add_all(value_digest(v) for v in values)
    return _hmac.compare_digest(result_mac(tree_key, state), mac)
