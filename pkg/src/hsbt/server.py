"""Untrusted-side query drivers.

Code here stands in for the server software outside the trust boundary: it
never sees key material or plaintext, only ciphertext records, encrypted
tokens, and the pointer lists the enclave emits.  It moves bytes, batches
node positions, and accounts for boundary crossings.

Both drivers fail closed: any enclave rejection propagates and no partial
result is returned.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

from hsbt.codec import EncryptedIndex, RangeToken
from hsbt.enclave import EnclaveSim

CSV_HEADER = "construction,b,n,range_size,result_size,crossings,nodes,bytes_in,bytes_out,micros"


@dataclass
class QueryStats:
    """Per-query cost accounting along the boundary-cost taxonomy: mode
    switches (crossings), node transfer volume, and raw byte movement.

    `range_size` is client knowledge (the driver cannot read the token) and
    is filled in by whoever minted the query; drivers leave it at 0.
    """

    construction: int
    branching: int
    n_values: int
    range_size: int
    result_size: int
    crossings: int
    nodes_transferred: int
    bytes_in: int
    bytes_out: int
    micros: float

    def csv_row(self) -> str:
        return (
            f"{self.construction},{self.branching},{self.n_values},{self.range_size},"
            f"{self.result_size},{self.crossings},{self.nodes_transferred},"
            f"{self.bytes_in},{self.bytes_out},{self.micros:.1f}"
        )


def fetch_values(index: EncryptedIndex, pointers) -> list[bytes]:
    """Dereference value pointers into the value region, in pointer order.

    An out-of-range pointer means the enclave output was corrupted in
    transit; surfacing it beats returning garbage.
    """
    region = index.value_blobs
    n = index.n_values
    out = []
    append = out.append
    for p in pointers:
        if 0 <= p < n:
            append(region[p])
        else:
            raise ValueError(f"value pointer {p} outside [0, {n})")
    return out


def search_resident(
    index: EncryptedIndex, enclave: EnclaveSim, token: RangeToken, trace=None
) -> tuple[list[bytes], QueryStats]:
    """Resident-tree query: one trusted call, then dereference the pointers.

    Steady state moves nothing but the token in and the pointer list out, so
    the crossing count is always two.
    """
    t0 = time.perf_counter()
    pointers = enclave.search_resident(token, trace=trace)
    blobs = fetch_values(index, pointers)
    micros = (time.perf_counter() - t0) * 1e6
    stats = QueryStats(
        construction=1,
        branching=index.branching,
        n_values=index.n_values,
        range_size=0,
        result_size=len(blobs),
        crossings=2,
        nodes_transferred=0,
        bytes_in=token.wire_size,
        bytes_out=4 * len(pointers),
        micros=micros,
    )
    return blobs, stats


def search_streamed(
    index: EncryptedIndex, enclave: EnclaveSim, token: RangeToken, trace=None
) -> tuple[list[bytes], bytes | None, QueryStats]:
    """Streamed query: FIFO node queue, batched trusted calls, pointer routing.

    Seeds the queue with the root position, drains up to the enclave's batch
    ceiling per crossing, re-queues node pointers, and accumulates value
    pointers.  In integrity mode the session is finalized afterwards (one
    more crossing) and the result tag returned for the client to check.
    """
    t0 = time.perf_counter()
    max_batch = enclave.max_batch_nodes(index.node_record_size)
    queue: deque[int] = deque([enclave.root_slot(index.node_count)])
    value_pointers: list[int] = []
    nonce: bytes | None = None
    crossings = 0
    nodes_moved = 0
    bytes_in = 0
    bytes_out = 0

    while queue:
        batch = [queue.popleft() for _ in range(min(len(queue), max_batch))]
        pairs, nonce = enclave.search_batch(token, batch, session=nonce, trace=trace)
        crossings += 1
        nodes_moved += len(batch)
        # Records move by reference out of shared memory, but their bytes are
        # still charged as boundary input alongside the token.
        bytes_in += token.wire_size + len(batch) * index.node_record_size
        bytes_out += 5 * len(pairs) + (len(nonce) if nonce else 0)
        for is_value, pointer in pairs:
            if is_value:
                value_pointers.append(pointer)
            else:
                queue.append(pointer)

    mac: bytes | None = None
    if index.integrity:
        mac = enclave.finalize_session(nonce)
        crossings += 1
        bytes_in += len(nonce)
        bytes_out += len(mac)

    blobs = fetch_values(index, value_pointers)
    micros = (time.perf_counter() - t0) * 1e6
    stats = QueryStats(
        construction=2,
        branching=index.branching,
        n_values=index.n_values,
        range_size=0,
        result_size=len(blobs),
        crossings=crossings,
        nodes_transferred=nodes_moved,
        bytes_in=bytes_in,
        bytes_out=bytes_out,
        micros=micros,
    )
    return blobs, mac, stats
