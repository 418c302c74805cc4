"""Benchmark harness: construction comparison over result sizes, branching
and tree-size sweeps, integrity overhead.

A workload is a list of cells; each cell fixes (n, branching, result size,
construction, integrity) and is measured over `reps` queries whose ranges are
sampled as uniformly random windows of the sorted key list, so every query
returns exactly the requested number of values.  Reported latencies are
medians: single-query times at this scale are noisy and the tail belongs to
the allocator, not the algorithm.
"""

from __future__ import annotations

import random
import statistics
from dataclasses import dataclass

from hsbt.bptree import KEY_MAX, build_tree, scan_oracle
from hsbt.codec import decrypt_results, encrypt_index, make_token, verify_result_mac
from hsbt.crypto import SecretKey
from hsbt.enclave import DEFAULT_CLIENT, EnclaveSim
from hsbt.server import search_resident, search_streamed

BENCH_CSV_HEADER = (
    "construction,b,n,integrity,result_size,reps,median_micros,"
    "median_crossings,median_nodes,median_touched"
)


@dataclass(frozen=True)
class WorkloadCell:
    n: int
    branching: int
    result_size: int
    construction: int  # 1 = resident tree, 2 = streamed batches
    reps: int = 1000
    integrity: bool = False

    def __post_init__(self):
        if self.construction not in (1, 2):
            raise ValueError("construction must be 1 or 2")
        if self.result_size > self.n:
            raise ValueError("result size cannot exceed the pair count")


def make_dataset(n: int, rng: random.Random, value_size: int = 16):
    """n distinct random keys with fixed-size payloads."""
    keys = rng.sample(range(1, KEY_MAX + 1), n)
    return [(k, b"%0*d" % (value_size, i)) for i, k in enumerate(keys)]


def sample_result_window(sorted_keys, result_size: int, rng: random.Random):
    """A uniformly random window of `result_size` consecutive sorted keys;
    querying [first, last] returns exactly those keys' values."""
    start = rng.randrange(0, len(sorted_keys) - result_size + 1)
    return sorted_keys[start], sorted_keys[start + result_size - 1]


@dataclass
class _Deployment:
    pairs: list
    sk: SecretKey
    index: object
    enclave: EnclaveSim
    sorted_keys: list


class DeploymentCache:
    """Builds (and reuses) one encrypted deployment per (n, b, integrity)."""

    def __init__(self, seed: int, value_size: int = 16, reserved_space: int = 64 * 1024):
        self.seed = seed
        self.value_size = value_size
        self.reserved_space = reserved_space
        self._cache: dict[tuple, _Deployment] = {}

    def get(self, n: int, branching: int, integrity: bool) -> _Deployment:
        key = (n, branching, integrity)
        if key not in self._cache:
            rng = random.Random(f"{self.seed}/{n}/{branching}/{integrity}")
            pairs = make_dataset(n, rng, self.value_size)
            tree = build_tree(pairs, branching, rng=rng)
            sk = SecretKey.generate()
            index = encrypt_index(sk, tree, [v for _, v in pairs], integrity=integrity)
            enclave = EnclaveSim(reserved_space=self.reserved_space)
            enclave.provision(DEFAULT_CLIENT, sk.tree_key, root_id=tree.root_id)
            enclave.attach_container(index)
            self._cache[key] = _Deployment(pairs, sk, index, enclave, sorted(k for k, _ in pairs))
        return self._cache[key]


def run_cell(cell: WorkloadCell, cache: DeploymentCache, rng: random.Random, *, verify: bool = False) -> dict:
    """Measure one cell; returns the median row.

    With `verify` set, every query's decrypted values are checked against the
    scan oracle (slow; meant for correctness sweeps, not timing)."""
    dep = cache.get(cell.n, cell.branching, cell.integrity)
    if cell.construction == 1 and not dep.enclave.tree_loaded:
        dep.enclave.load_tree(dep.index)

    micros, crossings, nodes, touched = [], [], [], []
    for _ in range(cell.reps):
        rs, re_ = sample_result_window(dep.sorted_keys, cell.result_size, rng)
        token = make_token(dep.sk.tree_key, rs, re_)
        if cell.construction == 1:
            blobs, stats = search_resident(dep.index, dep.enclave, token)
            mac = None
        else:
            blobs, mac, stats = search_streamed(dep.index, dep.enclave, token)
        stats.range_size = re_ - rs + 1
        assert stats.result_size == cell.result_size
        if verify:
            values = decrypt_results(dep.sk.value_key, blobs)
            want = scan_oracle(dep.pairs, rs, re_)
            assert sorted(values) == sorted(want)
            if mac is not None:
                assert verify_result_mac(dep.sk.tree_key, values, mac)
        micros.append(stats.micros)
        crossings.append(stats.crossings)
        nodes.append(stats.nodes_transferred)
        touched.append(stats.nodes_transferred if cell.construction == 2 else 0)

    return {
        "construction": cell.construction,
        "b": cell.branching,
        "n": cell.n,
        "integrity": int(cell.integrity),
        "result_size": cell.result_size,
        "reps": cell.reps,
        "median_micros": statistics.median(micros),
        "median_crossings": statistics.median(crossings),
        "median_nodes": statistics.median(nodes),
        "median_touched": statistics.median(touched),
    }


def row_to_csv(row: dict) -> str:
    return (
        f"{row['construction']},{row['b']},{row['n']},{row['integrity']},"
        f"{row['result_size']},{row['reps']},{row['median_micros']:.1f},"
        f"{row['median_crossings']},{row['median_nodes']},{row['median_touched']}"
    )


def run_workload(cells, seed: int, *, reserved_space: int = 64 * 1024, verify: bool = False):
    """Run every cell against a shared deployment cache; yields result rows."""
    cache = DeploymentCache(seed, reserved_space=reserved_space)
    rng = random.Random(seed ^ 0x5EED)
    for cell in cells:
        yield run_cell(cell, cache, rng, verify=verify)
