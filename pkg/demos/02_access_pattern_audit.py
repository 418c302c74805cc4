"""What the server sees, and why that is all it sees.

Records the boundary events of real queries (node fetches, page touches,
emitted pointers), computes the formally declared leakage for the same
queries, and runs the auditor: the trace must be exactly reconstructible
from the leakage.  Injecting a single out-of-leakage fetch flips the verdict.
"""

import random

from hsbt.bptree import build_tree
from hsbt.codec import encrypt_index, make_token, node_plain_size
from hsbt.crypto import SecretKey, prp_permutation
from hsbt.enclave import DEFAULT_CLIENT, EnclaveSim
from hsbt.leakage import (
    AccessTrace,
    PageLayout,
    audit_query,
    formal_vertex_ids,
    leak_enc,
    leak_hw_nodes,
    leak_hw_pages,
)
from hsbt.server import search_resident, search_streamed

rng = random.Random(11)
keys = rng.sample(range(1, 2**32 - 1), 2_000)
pairs = [(k, b"v%05d" % i) for i, k in enumerate(keys)]
tree = build_tree(pairs, branching=8, rng=rng)
sk = SecretKey.generate()
index = encrypt_index(sk, tree, [v for _, v in pairs])

static = leak_enc(pairs, tree)
print(f"static leakage: n={static.n_values}, node count={static.node_count}, value sizes visible\n")

seed_rng = random.Random(12)
enclave = EnclaveSim(order_seed_source=lambda: seed_rng.getrandbits(64))
enclave.provision(DEFAULT_CLIENT, sk.tree_key, root_id=tree.root_id)
enclave.attach_container(index)
enclave.load_tree(index)

perm = prp_permutation(sk.tree_key, index.node_count)
position_map = lambda nid: int(perm[nid])

sorted_keys = sorted(keys)
lo, hi = sorted_keys[400], sorted_keys[424]

# -- streamed construction: node-granular channel ------------------------------

print(f"== streamed query [{lo}, {hi}]: node-granular trace ==")
trace = AccessTrace()
search_streamed(index, enclave, make_token(sk.tree_key, lo, hi), trace=trace)
for line in trace.to_lines()[:8]:
    print("  trace:", line)
print(f"  ... {len(trace.events)} events total")

access, pattern = leak_hw_nodes(tree, lo, hi, position_map=position_map)
print(f"declared leakage: {len(access.vertices)} positions, {len(access.edges)} edges")
verdict = audit_query(trace, access, pattern)
print(f"audit: {'PASS' if verdict.passed else 'FAIL'} - {verdict.detail}\n")

# -- resident construction: page-granular channel -------------------------------

print("== same range, resident tree: page-granular trace ==")
layout = PageLayout(record_size=node_plain_size(index.branching, index.integrity))
trace = AccessTrace()
search_resident(index, enclave, make_token(sk.tree_key, lo, hi), trace=trace)
access_p, pattern_p = leak_hw_pages(tree, lo, hi, layout, position_map=position_map)
verdict = audit_query(trace, access_p, pattern_p)
print(f"pages touched: {sorted(set(trace.touched('page')))}")
print(f"audit: {'PASS' if verdict.passed else 'FAIL'} - {verdict.detail}\n")

# -- the definitional gap: boundary probes ---------------------------------------

gap_lo = sorted_keys[100] + 1
gap_hi = sorted_keys[101] - 1
access_g, _ = leak_hw_nodes(tree, gap_lo, gap_hi)
print(f"no-result range [{gap_lo}, {gap_hi}]:")
print(f"  textbook leaf-plus-ancestors set: {sorted(formal_vertex_ids(tree, gap_lo, gap_hi))}")
print(f"  probe path actually walked:       {sorted(access_g.vertices)}")

# -- a dishonest server is caught -------------------------------------------------

print("\n== injecting one fetch outside the declared leakage ==")
trace = AccessTrace()
search_streamed(index, enclave, make_token(sk.tree_key, lo, hi), trace=trace)
access, pattern = leak_hw_nodes(tree, lo, hi, position_map=position_map)
outsider = next(s for s in range(index.node_count) if s not in access.vertices)
trace.node_fetch(outsider)
verdict = audit_query(trace, access, pattern)
print(f"audit: {'PASS' if verdict.passed else 'FAIL'} - {verdict.detail}")
assert not verdict.passed
