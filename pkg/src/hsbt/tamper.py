"""Scripted active-attacker runs for the integrity protocol.

Each script perturbs exactly one aspect of an otherwise honest streamed
query and reports how the pipeline reacted:

* ``modify-node``   - flip one bit of a node record the query will fetch
* ``modify-value``  - flip one bit of a result blob before the client sees it
* ``swap-nodes``    - answer one node request with a different valid record
* ``drop-requested-node`` - never deliver one requested node
* ``wrong-first-node``    - open the query with a non-root node
* ``withhold-results``    - drop one encrypted value from the response
* ``replay-token``  - replay an old token unmodified (harmless: the tree is
  static, a replay reveals nothing new and must yield the same result set)

Denial-of-service behaviours (just refusing to answer) are out of scope: the
driver can always stall, and no response is its own signal.

The attacker drives its own copy of the streaming loop so the production
driver stays free of injection hooks.
"""

from __future__ import annotations

import dataclasses
import enum
import random
from collections import deque
from dataclasses import dataclass

from hsbt.codec import EncryptedIndex, RangeToken, decrypt_results, verify_result_mac
from hsbt.crypto import AuthenticationError, SecretKey
from hsbt.enclave import EnclaveError, EnclaveSim

KINDS = (
    "modify-node",
    "modify-value",
    "swap-nodes",
    "drop-requested-node",
    "wrong-first-node",
    "withhold-results",
    "replay-token",
)


class Outcome(enum.Enum):
    ENCLAVE_ABORT = "enclave-abort"
    CLIENT_REJECT = "client-reject"
    ACCEPTED = "accepted"


@dataclass(frozen=True)
class TamperScript:
    """One attack behaviour; targets are drawn from `rng` at run time."""

    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown tamper script {self.kind!r}")


@dataclass
class TamperReport:
    outcome: Outcome
    detail: str
    values: list[bytes] | None = None


def _drive(
    index: EncryptedIndex,
    enclave: EnclaveSim,
    token: RangeToken,
    *,
    first_slot: int | None = None,
    substitute: dict[int, int] | None = None,
    drop_slots: set[int] | None = None,
    trace=None,
):
    """Streaming loop with injection points; returns (value pointers, nonce)."""
    queue = deque([first_slot if first_slot is not None else enclave.root_slot(index.node_count)])
    max_batch = enclave.max_batch_nodes(index.node_record_size)
    pointers: list[int] = []
    nonce = None
    while queue:
        batch = []
        while queue and len(batch) < max_batch:
            slot = queue.popleft()
            if drop_slots and slot in drop_slots:
                drop_slots.discard(slot)
                continue
            if substitute and slot in substitute:
                slot = substitute.pop(slot)
            batch.append(slot)
        if not batch:
            continue
        pairs, nonce = enclave.search_batch(token, batch, session=nonce, trace=trace)
        for is_value, ptr in pairs:
            (pointers.append if is_value else queue.append)(ptr)
    return pointers, nonce


def _client_receive(sk: SecretKey, blobs, mac) -> TamperReport:
    try:
        values = decrypt_results(sk.value_key, blobs)
    except AuthenticationError:
        return TamperReport(Outcome.CLIENT_REJECT, "a result value failed decryption")
    if mac is None or not verify_result_mac(sk.tree_key, values, mac):
        return TamperReport(Outcome.CLIENT_REJECT, "result tag missing or mismatched")
    return TamperReport(Outcome.ACCEPTED, "result verified", values)


def _touched_slots(index, enclave, token) -> list[int]:
    """Honest dry run to learn which slots the query fetches, root first."""
    from hsbt.leakage import AccessTrace

    trace = AccessTrace()
    _, nonce = _drive(index, enclave, token, trace=trace)
    if nonce is not None:
        enclave.finalize_session(nonce)
    return trace.touched("node")


def run_with_tamper(
    index: EncryptedIndex,
    enclave: EnclaveSim,
    sk: SecretKey,
    token: RangeToken,
    script: TamperScript,
    rng: random.Random,
) -> TamperReport:
    """Execute one scripted deviation against one query and classify the result.

    Requires an integrity-mode container for every script except
    ``replay-token``; the caller supplies a query whose traversal reaches
    below the root and returns at least one value, so every script has a
    meaningful target.
    """
    kind = script.kind
    if kind != "replay-token" and not index.integrity:
        raise ValueError(f"script {kind!r} needs an integrity-mode container")

    if kind == "replay-token":
        first, nonce1 = _drive(index, enclave, token)
        second, nonce2 = _drive(index, enclave, token)
        for nonce in (nonce1, nonce2):
            if nonce is not None:
                enclave.finalize_session(nonce)
        same = set(first) == set(second)
        outcome = Outcome.ACCEPTED if same else Outcome.CLIENT_REJECT
        return TamperReport(outcome, f"replay result sets identical: {same}")

    touched = _touched_slots(index, enclave, token)
    root_slot = touched[0]

    if kind == "modify-node":
        target = rng.choice(touched)
        region = bytearray(index.node_region)
        offset = target * index.node_record_size + rng.randrange(index.node_record_size)
        region[offset] ^= 1 << rng.randrange(8)
        broken = dataclasses.replace(index, node_region=bytes(region))
        enclave.attach_container(broken)
        try:
            _drive(broken, enclave, token)
            return TamperReport(Outcome.ACCEPTED, f"modified node {target} went unnoticed")
        except EnclaveError as exc:
            return TamperReport(Outcome.ENCLAVE_ABORT, str(exc))
        finally:
            enclave.attach_container(index)

    if kind == "wrong-first-node":
        wrong = rng.choice([s for s in range(index.node_count) if s != root_slot])
        try:
            _drive(index, enclave, token, first_slot=wrong)
            return TamperReport(Outcome.ACCEPTED, f"non-root first node {wrong} accepted")
        except EnclaveError as exc:
            return TamperReport(Outcome.ENCLAVE_ABORT, str(exc))

    if kind in ("swap-nodes", "drop-requested-node"):
        candidates = [s for s in touched if s != root_slot]
        target = rng.choice(candidates)
        if kind == "swap-nodes":
            outsiders = [s for s in range(index.node_count) if s not in set(touched)]
            action = {"substitute": {target: rng.choice(outsiders)}}
        else:
            action = {"drop_slots": {target}}
        try:
            pointers, nonce = _drive(index, enclave, token, **action)
            mac = enclave.finalize_session(nonce)
            blobs = [index.value_blob(p) for p in pointers]
            report = _client_receive(sk, blobs, mac)
            report.detail = f"{kind} on {target}: " + report.detail
            return report
        except EnclaveError as exc:
            return TamperReport(Outcome.ENCLAVE_ABORT, str(exc))

    # modify-value / withhold-results: the traversal itself stays honest.
    try:
        pointers, nonce = _drive(index, enclave, token)
        mac = enclave.finalize_session(nonce)
    except EnclaveError as exc:  # pragma: no cover - honest run should pass
        return TamperReport(Outcome.ENCLAVE_ABORT, str(exc))
    blobs = [index.value_blob(p) for p in pointers]

    if kind == "modify-value":
        at = rng.randrange(len(blobs))
        broken = bytearray(blobs[at])
        broken[rng.randrange(len(broken))] ^= 1 << rng.randrange(8)
        blobs[at] = bytes(broken)
        return _client_receive(sk, blobs, mac)

    if kind == "withhold-results":
        del blobs[rng.randrange(len(blobs))]
        return _client_receive(sk, blobs, mac)

    raise AssertionError(f"unhandled script {kind!r}")
