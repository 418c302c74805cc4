"""The simulated trusted component.

Everything in this module models code running behind the hardware isolation
boundary: it holds the tree key (never exported), decrypts tokens and node
records, walks the tree, and hands only value pointers back out.  The two
query entry points mirror the two deployment modes:

* `search_resident`: the whole decrypted tree was loaded into trusted memory
  once (`load_tree`); queries then never decrypt another node and cross the
  boundary exactly twice (token in, pointers out).  The observable channel is
  the page-granular access pattern of the resident node array.
* `search_batch`: nodes stay encrypted in the shared host region; the
  untrusted driver passes storage positions batch by batch and routes the
  returned pointers.  The observable channel is the node-granular fetch
  pattern.

In integrity mode `search_batch` additionally runs a per-query session that
counts the nodes it asked for and folds three multiset hashes (expected node
ids, received node ids, matched value digests).  A session only ever yields a
result tag when every requested node arrived, nothing else arrived, and the
first node of the query was the root.

Every pointer list leaving the enclave is freshly shuffled, and in-node
matching touches every key and pointer slot whether it matches or not, so
neither output order nor intra-node access reveals key positions.
"""

from __future__ import annotations

import random
import secrets
import struct
import threading
from dataclasses import dataclass

import numpy as np

from hsbt.codec import DecodedNode, EncryptedIndex, RangeToken, deserialize_node, node_plain_size, slot_aad, unpack_range
from hsbt.crypto import (
    AuthenticationError,
    MultisetHash,
    decrypt,
    decrypt_wire,
    mset_eq,
    prp_apply,
    result_mac,
)

PAGE_SIZE = 4096

DEFAULT_CLIENT = "client-0"


class EnclaveError(Exception):
    """Base class for trusted-side rejections."""


class NoKeyError(EnclaveError):
    """Operation needs a provisioned key that is not installed."""


class CapacityExceededError(EnclaveError):
    """Resident-tree load would exceed the trusted memory budget."""


class EnclaveAbort(EnclaveError):
    """The trusted side refused to continue: failed authentication or a
    protocol deviation by the untrusted driver."""


@dataclass
class IntegritySession:
    """Per-query integrity state, keyed by a single-use nonce."""

    nonce: bytes
    expected_amount: int
    expected_hash: MultisetHash
    received_hash: MultisetHash
    result_hash: MultisetHash


@dataclass
class TouchCounter:
    """Instrumentation for the data-oblivious in-node scan: slots examined,
    not slots matched."""

    key_slots: int = 0
    pointer_slots: int = 0

    def reset(self) -> None:
        self.key_slots = 0
        self.pointer_slots = 0


def oblivious_match_slots(
    node: DecodedNode, r_start: int, r_end: int, counter: TouchCounter | None = None
) -> list[int]:
    """Pointer slots of `node` whose key interval meets [r_start, r_end].

    Branch-free selection: one inclusion bit is computed for every pointer
    slot, live or padded, matching or not, using non-short-circuiting bitwise
    combinations of comparisons, so every key slot and every pointer slot is
    examined on every call.  For an inner node a slot matches when its
    child's key window intersects the range; for a leaf, when its key lies
    inside.  Padded slots are suppressed by the liveness term in the bit.
    """
    keys = node.keys
    branching = len(keys) + 1
    kc = node.key_count
    if node.is_leaf:
        bits = [False]
        bits += [
            (r_start <= k) & (k <= r_end) & (j <= kc) for j, k in enumerate(keys, start=1)
        ]
    else:
        bits = [r_start < keys[0]]
        bits += [
            (
                ((keys[j - 1] <= r_start) & (r_start < keys[j]))
                | ((keys[j - 1] <= r_end) & (r_end < keys[j]))
                | ((r_start <= keys[j - 1]) & (keys[j] <= r_end))
            )
            & (j <= kc)
            for j in range(1, branching - 1)
        ]
        bits.append((keys[branching - 2] <= r_end) & (branching - 1 <= kc))
    if counter is not None:
        counter.key_slots += branching - 1
        counter.pointer_slots += branching
    return [j for j, bit in enumerate(bits) if bit]


def _id_bytes(node_id: int) -> bytes:
    return struct.pack("<I", node_id)


# Per-query shuffle seeds come from a process-level generator that is itself
# seeded from the OS CSPRNG once; drawing from the OS per query would cost a
# syscall on the hot path without changing what the simulation models.
_seed_stream = random.Random(secrets.randbits(128))


class _OrderRng:
    """Per-query randomness for output-order hiding.

    `permuted` draws a fresh uniform permutation; `index` draws one uniform
    position from a buffered float stream (used to pop a random worklist
    element, which is distribution-identical to re-permuting the worklist
    before every pop and costs O(1) instead of O(|worklist|))."""

    __slots__ = ("gen", "_buf", "_at")

    def __init__(self, seed: int):
        self.gen = np.random.Generator(np.random.PCG64(seed))
        self._buf = None
        self._at = 0

    def index(self, n: int) -> int:
        if self._buf is None or self._at >= self._buf.shape[0]:
            self._buf = self.gen.random(512)
            self._at = 0
        f = self._buf[self._at]
        self._at += 1
        return int(f * n)

    def permuted(self, items: list) -> list:
        if len(items) < 2:
            return items
        return [items[i] for i in self.gen.permutation(len(items))]


class EnclaveSim:
    """Simulated enclave: key table, optional resident tree, session map.

    `reserved_space` is the byte budget for streamed node batches and decides
    the batch ceiling; `capacity` is the budget for a resident tree (modelling
    the protected-memory limit).  Query paths are read-only and may run
    concurrently; session and key-table mutation is serialized internally.

    `order_seed_source` is a test-only hook: when set, per-query shuffle seeds
    are drawn from it (and recorded on the trace) so an auditor can replay
    output orders.  Production use leaves it unset and seeds from the CSPRNG.
    """

    def __init__(
        self,
        *,
        reserved_space: int = 64 * 1024,
        capacity: int = 96 * 2**20,
        order_seed_source=None,
    ):
        self.reserved_space = reserved_space
        self.capacity = capacity
        self.node_decryptions = 0
        self.touch_counter = TouchCounter()
        self._order_seed_source = order_seed_source
        self._key_table: dict[str, bytes] = {}
        self._tree_key: bytes | None = None
        self._root_id: int | None = None
        self._container: EncryptedIndex | None = None
        self._resident: list[DecodedNode] | None = None
        self._resident_root_slot: int | None = None
        self._resident_plain_size: int | None = None
        self._sessions: dict[bytes, IntegritySession] = {}
        self._lock = threading.Lock()

    # -- provisioning and container wiring ---------------------------------

    def provision(self, client_id: str, tree_key: bytes, root_id: int | None = None) -> None:
        """Install a client's token key over the (simulated) secure channel.

        The data owner's provisioning carries the root id and makes its key
        the node-decryption key; re-provisioning a client replaces its key.
        """
        with self._lock:
            self._key_table[client_id] = tree_key
            if root_id is not None:
                self._tree_key = tree_key
                self._root_id = root_id

    def attach_container(self, index: EncryptedIndex) -> None:
        """Share the container with the enclave (host-memory mapping: records
        are fetched from it directly, no copy crosses the boundary)."""
        self._container = index

    def root_slot(self, node_count: int) -> int:
        """Storage slot of the root node.  Revealed to the driver at setup;
        the first fetch of any query discloses it anyway."""
        if self._tree_key is None or self._root_id is None:
            raise NoKeyError("enclave not provisioned")
        return prp_apply(self._tree_key, node_count, self._root_id)

    def max_batch_nodes(self, record_size: int) -> int:
        """Batch ceiling: how many records fit in the reserved space."""
        return max(1, self.reserved_space // record_size)

    @property
    def tree_loaded(self) -> bool:
        return self._resident is not None

    # -- construction 1: resident tree --------------------------------------

    def load_tree(self, index: EncryptedIndex) -> None:
        """One-time load: verify and decrypt every node into trusted memory."""
        if self._tree_key is None:
            raise NoKeyError("enclave not provisioned")
        plain_size = node_plain_size(index.branching, index.integrity)
        if plain_size * index.node_count > self.capacity:
            raise CapacityExceededError(
                f"resident tree needs {plain_size * index.node_count} bytes, "
                f"budget is {self.capacity}"
            )
        resident: list[DecodedNode | None] = [None] * index.node_count
        root_slot = None
        for slot in range(index.node_count):
            try:
                plain = decrypt_wire(self._tree_key, index.node_record(slot), slot_aad(slot))
            except AuthenticationError:
                raise EnclaveAbort(f"node record at slot {slot} failed authentication") from None
            self.node_decryptions += 1
            node = deserialize_node(plain, index.branching, index.integrity, slot)
            resident[slot] = node
            if node.node_id == self._root_id:
                root_slot = slot
        if root_slot is None:
            raise EnclaveAbort("provisioned root id not present in the container")
        self._resident = resident
        self._resident_root_slot = root_slot
        self._resident_plain_size = plain_size
        self._container = index

    def _page_of(self, slot: int) -> int:
        # Resident nodes sit back to back in slot order; the page channel
        # observes 4 KiB granules of that layout.
        return slot * self._resident_plain_size // PAGE_SIZE

    def search_resident(self, token: RangeToken, trace=None) -> list[int]:
        """Range search over the resident tree; returns value pointers.

        Breadth-style walk with a re-shuffled worklist each round and a final
        shuffle of the pointer list.
        """
        if self._resident is None:
            raise EnclaveError("no resident tree loaded")
        rs, re_ = self._open_token(token)
        rng = self._fresh_order_rng(trace)
        resident = self._resident
        counter = self.touch_counter
        pointers: list[int] = []
        worklist = [resident[self._resident_root_slot]]
        while worklist:
            # Uniform random pop == freshly permuted worklist each round.
            at = rng.index(len(worklist))
            node = worklist[at]
            worklist[at] = worklist[-1]
            worklist.pop()
            if trace is not None:
                trace.page_touch(self._page_of(node.slot))
            slots = oblivious_match_slots(node, rs, re_, counter)
            node_pointers = node.pointers
            if node.is_leaf:
                pointers.extend(node_pointers[s] for s in slots)
            else:
                worklist.extend(resident[node_pointers[s]] for s in slots)
        pointers = rng.permuted(pointers)
        if trace is not None:
            trace.pointers_out(pointers)
        return pointers

    # -- construction 2: streamed batches ------------------------------------

    def search_batch(
        self,
        token: RangeToken,
        positions,
        session: bytes | None = None,
        trace=None,
    ) -> tuple[list[tuple[bool, int]], bytes | None]:
        """Process one batch of node positions for a range query.

        Returns ``(pairs, nonce)`` where each pair is ``(is_value, pointer)``:
        value pointers come from leaves and index the value region, node
        pointers name storage positions still to traverse.  Output order is a
        fresh random permutation.  `nonce` continues the integrity session
        (None outside integrity mode).
        """
        if self._container is None:
            raise EnclaveError("no container attached")
        if self._tree_key is None:
            raise NoKeyError("no node-decryption key provisioned")
        container = self._container
        integrity = container.integrity
        rs, re_ = self._open_token(token)
        rng = self._fresh_order_rng(trace)

        sess: IntegritySession | None = None
        if integrity and session is not None:
            with self._lock:
                sess = self._sessions.get(session)
            if sess is None:
                raise EnclaveAbort("unknown or expired session nonce")

        out: list[tuple[bool, int]] = []
        branching = container.branching
        tree_key = self._tree_key
        counter = self.touch_counter
        for position in positions:
            try:
                record = container.node_record(position)
            except IndexError:
                self._drop_session(sess)
                raise EnclaveAbort(f"no node record at position {position}") from None
            try:
                plain = decrypt_wire(tree_key, record, slot_aad(position))
            except AuthenticationError:
                self._drop_session(sess)
                raise EnclaveAbort(f"node at position {position} failed authentication") from None
            self.node_decryptions += 1
            node = deserialize_node(plain, branching, integrity, position)
            if trace is not None:
                trace.node_fetch(position)

            if integrity:
                if sess is None:
                    if node.node_id != self._root_id:
                        raise EnclaveAbort("protocol violation: first node is not the root")
                    sess = self._new_session()
                else:
                    sess.received_hash = sess.received_hash.add(_id_bytes(node.node_id))
                    sess.expected_amount -= 1
                    if sess.expected_amount < 0:
                        self._drop_session(sess)
                        raise EnclaveAbort("protocol violation: more nodes than requested")

            slots = oblivious_match_slots(node, rs, re_, counter)
            node_pointers = node.pointers
            if node.is_leaf:
                out.extend((True, node_pointers[s]) for s in slots)
                if sess is not None and slots:
                    sess.result_hash = sess.result_hash.add_all(
                        node.value_hash(s) for s in slots
                    )
            else:
                out.extend((False, node_pointers[s]) for s in slots)
                if sess is not None and slots:
                    child_ids = node.child_ids
                    sess.expected_hash = sess.expected_hash.add_all(
                        _id_bytes(child_ids[s]) for s in slots
                    )
                    sess.expected_amount += len(slots)

        out = rng.permuted(out)
        if trace is not None:
            trace.pointers_out([p for is_value, p in out if is_value])
        return out, (sess.nonce if sess is not None else None)

    def finalize_session(self, nonce: bytes) -> bytes:
        """Close an integrity session and issue the result tag.

        Only succeeds when no requested node is outstanding and the received
        node multiset matches the requested one; any other state aborts, and
        the nonce is consumed either way.
        """
        with self._lock:
            sess = self._sessions.pop(nonce, None)
        if sess is None:
            raise EnclaveAbort("unknown or expired session nonce")
        if sess.expected_amount != 0:
            raise EnclaveAbort(
                f"protocol violation: {sess.expected_amount} requested nodes never arrived"
            )
        if not mset_eq(sess.expected_hash, sess.received_hash):
            raise EnclaveAbort("protocol violation: received nodes differ from requested nodes")
        return result_mac(self._tree_key, sess.result_hash)

    # -- internals -----------------------------------------------------------

    def _open_token(self, token: RangeToken) -> tuple[int, int]:
        key = self._key_table.get(token.client_id or DEFAULT_CLIENT)
        if key is None:
            raise NoKeyError(f"no key provisioned for {token.client_id or DEFAULT_CLIENT!r}")
        try:
            plain = decrypt(key, token.ciphertext)
        except AuthenticationError:
            raise EnclaveAbort("token failed authentication") from None
        return unpack_range(plain)

    def _fresh_order_rng(self, trace) -> _OrderRng:
        seed = (
            self._order_seed_source()
            if self._order_seed_source is not None
            else _seed_stream.getrandbits(64)
        )
        if trace is not None:
            trace.order_seeds.append(seed)
        return _OrderRng(seed)

    def _new_session(self) -> IntegritySession:
        empty = MultisetHash.empty(self._tree_key)
        sess = IntegritySession(secrets.token_bytes(16), 0, empty, empty, empty)
        with self._lock:
            self._sessions[sess.nonce] = sess
        return sess

    def _drop_session(self, sess: IntegritySession | None) -> None:
        if sess is not None:
            with self._lock:
                self._sessions.pop(sess.nonce, None)
