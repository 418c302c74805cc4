"""Tree construction contracts, cross-checked against an independent
reference insertion written here (sorted-list node model, no shared code)."""

import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsbt.bptree import (
    DUMMY_POINTER,
    KEY_INFINITY,
    KEY_MAX,
    BuildError,
    build_tree,
    scan_oracle,
)


# --- independent reference: counts nodes/levels of textbook insertion -------


class _RefTree:
    """Minimal reference B+-tree used only as a structural oracle."""

    def __init__(self, branching):
        self.b = branching
        self.root = ("leaf", [])

    def insert(self, key):
        grown = self._insert(self.root, key)
        if grown is not None:
            sep, right = grown
            self.root = ("inner", [sep], [self.root, right])

    def _insert(self, node, key):
        if node[0] == "leaf":
            keys = node[1]
            lo, hi = 0, len(keys)
            while lo < hi:
                mid = (lo + hi) // 2
                if keys[mid] <= key:
                    lo = mid + 1
                else:
                    hi = mid
            keys.insert(lo, key)
            if len(keys) <= self.b - 1:
                return None
            mid = len(keys) // 2
            for off in range(len(keys)):
                for s in (mid - off, mid + off):
                    if 1 <= s < len(keys) and keys[s - 1] < keys[s]:
                        right = ("leaf", keys[s:])
                        del keys[s:]
                        return right[1][0], right
            raise AssertionError("reference split failed")
        _, keys, children = node
        idx = 0
        while idx < len(keys) and keys[idx] <= key:
            idx += 1
        grown = self._insert(children[idx], key)
        if grown is None:
            return None
        sep, right = grown
        keys.insert(idx, sep)
        children.insert(idx + 1, right)
        if len(keys) <= self.b - 1:
            return None
        mid = len(keys) // 2
        up = keys[mid]
        sibling = ("inner", keys[mid + 1 :], children[mid + 1 :])
        del keys[mid:], children[mid + 1 :]
        return up, sibling

    def stats(self):
        count = 0
        height = 0
        stack = [(self.root, 1)]
        while stack:
            node, depth = stack.pop()
            count += 1
            height = max(height, depth)
            if node[0] == "inner":
                stack.extend((c, depth + 1) for c in node[2])
        return count, height

    def leaf_keys(self):
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop(0)
            if node[0] == "leaf":
                out.extend(node[1])
            else:
                stack = node[2] + stack
        return out


def _pairs(keys):
    return [(k, b"v%d" % i) for i, k in enumerate(keys)]


def _walk_check(tree):
    """Full traversal: padding shape, separator bounds, leaf key collection."""
    collected = []
    stack = [(tree.root, 0, 2**32)]
    while stack:
        node, lo, hi = stack.pop()
        assert len(node.keys) == tree.branching - 1
        assert len(node.pointers) == tree.branching
        live = list(node.keys[: node.key_count])
        assert live == sorted(live)
        assert all(k == KEY_INFINITY for k in node.keys[node.key_count :])
        assert all(lo <= k < hi for k in live)
        if node.is_leaf:
            assert node.pointers[0] == DUMMY_POINTER
            assert all(p == DUMMY_POINTER for p in node.pointers[node.key_count + 1 :])
            collected.extend(live)
        else:
            assert all(p == DUMMY_POINTER for p in node.pointers[node.key_count + 1 :])
            bounds = [lo] + live + [hi]
            children = tree.children(node)
            for i in reversed(range(len(children))):
                stack.append((children[i], bounds[i], bounds[i + 1]))
    return collected


def test_singleton_pair_builds_single_root_leaf():
    tree = build_tree([(5, b"v")], 4)
    assert len(tree.nodes) == 1
    root = tree.root
    assert root.is_leaf and root.node_id == 0 == tree.root_id
    assert root.keys == (5, KEY_INFINITY, KEY_INFINITY)
    assert root.pointers[1] == 0 and root.pointers[0] == DUMMY_POINTER


def test_nine_keys_b4_matches_reference_insertion():
    pairs = _pairs(range(1, 10))
    tree = build_tree(pairs, 4)
    ref = _RefTree(4)
    for k in range(1, 10):
        ref.insert(k)
    count, height = ref.stats()
    assert len(tree.nodes) == count == 5
    assert tree.height == height == 2
    leaf_keys = [list(n.keys[: n.key_count]) for n in tree.iter_leaves()]
    assert leaf_keys == [[1, 2], [3, 4], [5, 6], [7, 8, 9]]


@pytest.mark.parametrize("b,n,seed", [(4, 200, 1), (7, 999, 2), (10, 3000, 3)])
def test_random_trees_match_reference_structure(b, n, seed):
    rng = random.Random(seed)
    keys = [rng.randrange(1, KEY_MAX) for _ in range(n)]
    tree = build_tree(_pairs(keys), b, rng=random.Random(0))
    ref = _RefTree(b)
    for k in keys:
        ref.insert(k)
    count, height = ref.stats()
    assert len(tree.nodes) == count
    assert tree.height == height
    assert _walk_check(tree) == ref.leaf_keys()


def test_ten_thousand_random_keys_all_reachable():
    rng = random.Random(42)
    keys = [rng.randrange(1, KEY_MAX) for _ in range(10_000)]
    tree = build_tree(_pairs(keys), 10, rng=random.Random(7))
    assert Counter(_walk_check(tree)) == Counter(keys)
    # Value pointers form a permutation of the value region.
    ptrs = [p for leaf in tree.iter_leaves() for p in leaf.pointers[1 : leaf.key_count + 1]]
    assert sorted(ptrs) == list(range(10_000))


def test_height_bound():
    rng = random.Random(9)
    for b, n in ((4, 500), (10, 10_000)):
        keys = rng.sample(range(1, KEY_MAX), n)
        tree = build_tree(_pairs(keys), b, rng=random.Random(0))
        import math

        assert tree.height <= math.ceil(math.log(n, math.ceil(b / 2))) + 1


def test_build_deterministic_given_seed():
    key_rng = random.Random(5)
    pairs = _pairs([key_rng.randrange(1, KEY_MAX) for _ in range(500)])
    t1 = build_tree(pairs, 6, rng=random.Random(99))
    t2 = build_tree(pairs, 6, rng=random.Random(99))
    assert t1 == t2
    t3 = build_tree(pairs, 6, rng=random.Random(100))
    assert t1.value_positions != t3.value_positions


def test_duplicate_keys_all_stored_and_returned():
    pairs = [(50, b"a"), (50, b"b"), (7, b"c"), (50, b"d"), (99, b"e")]
    tree = build_tree(pairs, 5, rng=random.Random(1))
    assert Counter(_walk_check(tree)) == Counter([50, 50, 7, 50, 99])
    assert Counter(scan_oracle(pairs, 50, 50)) == Counter([b"a", b"b", b"d"])


def test_duplicate_run_beyond_node_capacity_rejected():
    pairs = [(5, b"x")] * 6 + [(1, b"y"), (9, b"z")]
    with pytest.raises(BuildError):
        build_tree(pairs, 4)


def test_domain_validation():
    with pytest.raises(BuildError):
        build_tree([(0, b"v")], 4)
    with pytest.raises(BuildError):
        build_tree([(KEY_MAX + 1, b"v")], 4)
    with pytest.raises(BuildError):
        build_tree([], 4)
    with pytest.raises(BuildError):
        build_tree([(1, b"v")], 2)


def test_scan_oracle_direct_cases():
    pairs = _pairs(range(1, 10))
    assert scan_oracle(pairs, 3, 5) == [pairs[2][1], pairs[3][1], pairs[4][1]]
    assert scan_oracle(pairs, 100, KEY_MAX) == []
    with pytest.raises(ValueError):
        scan_oracle(pairs, 5, 3)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.integers(min_value=1, max_value=5000), min_size=1, max_size=300),
    st.integers(min_value=3, max_value=12),
)
def test_property_leaf_multiset_equals_input(keys, b):
    capped = Counter(keys)
    if any(c > b - 1 for c in capped.values()):
        keys = [k for k in keys if capped[k] <= b - 1]
        if not keys:
            return
    tree = build_tree(_pairs(keys), b, rng=random.Random(0))
    assert Counter(_walk_check(tree)) == Counter(keys)
