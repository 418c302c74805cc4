"""Command-line front end.

Subcommands:

* ``build``  - read key-value pairs, build and encrypt an index container
* ``query``  - run one range query against a container (either construction)
* ``bench``  - run a workload sweep and emit a CSV of per-cell medians
* ``audit``  - replay random queries under the trace recorder and audit each
  against its computed leakage
* ``tamper`` - run scripted active-attacker behaviours against a fresh
  deployment and report detection

Exit codes: 0 ok, 1 verification/authentication failure, 2 usage error.

``--seed`` makes everything reproducible except AEAD nonces and wall times;
in particular ``build --seed`` derives the key material deterministically so
two builds of the same input agree structurally (reproducible-build mode).
Key material lands in a ``<out>.key`` sidecar the server never reads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
import struct
import sys
from pathlib import Path

from hsbt import bench as bench_mod
from hsbt.bptree import build_tree
from hsbt.codec import EncryptedIndex, decrypt_results, encrypt_index, make_token, verify_result_mac
from hsbt.crypto import AuthenticationError, SecretKey, prp_permutation
from hsbt.enclave import DEFAULT_CLIENT, EnclaveError, EnclaveSim
from hsbt.leakage import AccessTrace, PageLayout, audit_query, leak_enc, leak_hw_nodes, leak_hw_pages
from hsbt.server import CSV_HEADER, search_resident, search_streamed
from hsbt.tamper import KINDS, Outcome, TamperScript, run_with_tamper

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2


class CliError(Exception):
    """Bad input or failed verification; message goes to stderr."""

    def __init__(self, message, code=EXIT_VERIFY):
        super().__init__(message)
        self.code = code


def read_pairs_text(path: Path):
    """Lines of ``<key> <value...>``; the value is the rest of the line."""
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key_part, _, value_part = line.partition(" ")
        try:
            key = int(key_part)
        except ValueError:
            raise CliError(f"{path}:{lineno}: key {key_part!r} is not an integer")
        pairs.append((key, value_part.encode()))
    return pairs


def read_pairs_binary(path: Path):
    """``u32 count`` then per pair ``u32 key, u32 len, bytes`` (little-endian)."""
    data = path.read_bytes()
    if len(data) < 4:
        raise CliError(f"{path}: truncated binary pair stream")
    (count,) = struct.unpack_from("<I", data, 0)
    off = 4
    pairs = []
    for _ in range(count):
        key, length = struct.unpack_from("<II", data, off)
        off += 8
        pairs.append((key, data[off : off + length]))
        off += length
    return pairs


def _derived_secret_key(seed: int) -> SecretKey:
    tree_key = hashlib.blake2b(b"tree-key", key=struct.pack("<q", seed), digest_size=16).digest()
    value_key = hashlib.blake2b(b"value-key", key=struct.pack("<q", seed), digest_size=16).digest()
    return SecretKey(tree_key, value_key)


def _load_keyfile(path: Path):
    meta = json.loads(path.read_text())
    sk = SecretKey(bytes.fromhex(meta["tree_key"]), bytes.fromhex(meta["value_key"]))
    return sk, meta


def _provisioned_enclave(sk: SecretKey, meta, index, reserved_space) -> EnclaveSim:
    enclave = EnclaveSim(reserved_space=reserved_space)
    enclave.provision(DEFAULT_CLIENT, sk.tree_key, root_id=meta["root_id"])
    enclave.attach_container(index)
    return enclave


def _parse_range(spec: str):
    lo, sep, hi = spec.partition(":")
    if not sep:
        raise CliError(f"range must look like A:B, got {spec!r}", EXIT_USAGE)
    r_start = int(lo) if lo else None
    r_end = int(hi) if hi else None
    return r_start, r_end


# -- subcommands ---------------------------------------------------------------


def cmd_build(args) -> int:
    path = Path(args.input)
    if not path.exists():
        raise CliError(f"input file {path} does not exist", EXIT_USAGE)
    pairs = read_pairs_binary(path) if args.format == "binary" else read_pairs_text(path)
    if not pairs:
        raise CliError(f"{path}: no key-value pairs to index")

    sk = _derived_secret_key(args.seed) if args.seed is not None else SecretKey.generate()
    rng = random.Random(args.seed)
    tree = build_tree(pairs, args.b, rng=rng)
    index = encrypt_index(sk, tree, [v for _, v in pairs], integrity=args.integrity == "on")
    out = Path(args.out)
    index.save(out)
    keyfile = out.with_suffix(out.suffix + ".key")
    keyfile.write_text(
        json.dumps(
            {
                "tree_key": sk.tree_key.hex(),
                "value_key": sk.value_key.hex(),
                "root_id": tree.root_id,
                "b": args.b,
                "seed": args.seed,
                "integrity": args.integrity == "on",
            },
            indent=2,
        )
    )
    static = leak_enc(pairs, tree)
    print(f"container written to {out} ({len(index.to_bytes())} bytes), key material in {keyfile}")
    print(
        f"static leakage: n={static.n_values} nodes={static.node_count} "
        f"value_bytes={sum(static.value_sizes)}"
    )
    return EXIT_OK


def cmd_query(args) -> int:
    index = EncryptedIndex.load(Path(args.index))
    sk, meta = _load_keyfile(Path(args.key))
    enclave = _provisioned_enclave(sk, meta, index, args.reserved_space)
    r_start, r_end = _parse_range(args.range)
    token = make_token(sk.tree_key, r_start, r_end)

    try:
        if args.construction == 1:
            enclave.load_tree(index)
            blobs, stats = search_resident(index, enclave, token)
            mac = None
        else:
            blobs, mac, stats = search_streamed(index, enclave, token)
        values = decrypt_results(sk.value_key, blobs)
        if mac is not None and not verify_result_mac(sk.tree_key, values, mac):
            raise CliError("result tag verification failed")
    except (EnclaveError, AuthenticationError) as exc:
        raise CliError(f"query rejected: {exc}")

    for value in values:
        sys.stdout.buffer.write(value + b"\n")
    print(CSV_HEADER, file=sys.stderr)
    print(stats.csv_row(), file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    cells = [
        bench_mod.WorkloadCell(
            n=n,
            branching=b,
            result_size=r,
            construction=c,
            reps=args.reps,
            integrity=args.integrity == "on",
        )
        for n in args.n
        for b in args.b
        for r in args.result_size
        for c in args.construction
        if r <= n
    ]
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        print(bench_mod.BENCH_CSV_HEADER, file=out)
        for row in bench_mod.run_workload(cells, args.seed, reserved_space=args.reserved_space):
            print(bench_mod.row_to_csv(row), file=out)
            out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_audit(args) -> int:
    index = EncryptedIndex.load(Path(args.index))
    sk, meta = _load_keyfile(Path(args.key))
    path = Path(args.input)
    pairs = read_pairs_binary(path) if args.format == "binary" else read_pairs_text(path)
    # The auditor is omniscient: it reconstructs the plaintext tree the same
    # deterministic way the build made it.
    tree = build_tree(pairs, meta["b"], rng=random.Random(meta["seed"]))
    perm = prp_permutation(sk.tree_key, index.node_count)
    position_map = perm.__getitem__
    pm = lambda nid: int(position_map(nid))

    seed_rng = random.Random(args.seed)
    enclave = EnclaveSim(
        reserved_space=args.reserved_space,
        order_seed_source=lambda: seed_rng.getrandbits(64),
    )
    enclave.provision(DEFAULT_CLIENT, sk.tree_key, root_id=meta["root_id"])
    enclave.attach_container(index)
    if args.construction == 1:
        enclave.load_tree(index)
        from hsbt.codec import node_plain_size

        layout = PageLayout(record_size=node_plain_size(index.branching, index.integrity))

    keys = sorted(k for k, _ in pairs)
    rng = random.Random(args.seed)
    failures = 0
    for q in range(args.queries):
        a, b = sorted((rng.choice(keys), rng.choice(keys)))
        token = make_token(sk.tree_key, a, b)
        trace = AccessTrace()
        if args.construction == 1:
            search_resident(index, enclave, token, trace=trace)
            access, pattern = leak_hw_pages(tree, a, b, layout, position_map=pm)
        else:
            search_streamed(index, enclave, token, trace=trace)
            access, pattern = leak_hw_nodes(tree, a, b, position_map=pm)
        verdict = audit_query(trace, access, pattern)
        status = "PASS" if verdict.passed else f"FAIL ({verdict.detail})"
        print(f"query {q:4d} range [{a}, {b}]: {status}")
        failures += 0 if verdict.passed else 1
    print(f"audited {args.queries} queries, {failures} failures")
    return EXIT_OK if failures == 0 else EXIT_VERIFY


def cmd_tamper(args) -> int:
    rng = random.Random(args.seed)
    pairs = bench_mod.make_dataset(args.n, rng)
    tree = build_tree(pairs, args.b, rng=rng)
    sk = SecretKey.generate()
    index = encrypt_index(sk, tree, [v for _, v in pairs], integrity=True)
    enclave = EnclaveSim(reserved_space=args.reserved_space)
    enclave.provision(DEFAULT_CLIENT, sk.tree_key, root_id=tree.root_id)
    enclave.attach_container(index)
    sorted_keys = sorted(k for k, _ in pairs)

    kinds = list(KINDS) if args.script == "all" else [args.script]
    undetected = 0
    for kind in kinds:
        for t in range(args.targets):
            start = rng.randrange(0, len(sorted_keys) - 20)
            token = make_token(sk.tree_key, sorted_keys[start], sorted_keys[start + 15])
            report = run_with_tamper(index, enclave, sk, token, TamperScript(kind), rng)
            detected = report.outcome in (Outcome.ENCLAVE_ABORT, Outcome.CLIENT_REJECT)
            ok = detected if kind != "replay-token" else report.outcome == Outcome.ACCEPTED
            print(f"{kind} target {t}: {report.outcome.value} - {report.detail}")
            undetected += 0 if ok else 1
    print(f"{undetected} undetected deviations")
    return EXIT_OK if undetected == 0 else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsbt", description="encrypted range-search index with a simulated trusted boundary"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build and encrypt an index container")
    p.add_argument("--input", required=True, help="key-value input file")
    p.add_argument("--format", choices=("text", "binary"), default="text")
    p.add_argument("--b", type=int, default=10, help="branching factor")
    p.add_argument("--integrity", choices=("on", "off"), default="off")
    p.add_argument("--seed", type=int, default=None, help="reproducible-build seed")
    p.add_argument("--out", required=True, help="container output path")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="run one range query")
    p.add_argument("--index", required=True)
    p.add_argument("--key", required=True, help="key sidecar written by build")
    p.add_argument("--construction", type=int, choices=(1, 2), default=2)
    p.add_argument("--range", required=True, help="A:B (omit a side for open ranges)")
    p.add_argument("--reserved-space", type=int, default=64 * 1024)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="workload sweep, CSV of medians")
    p.add_argument("--n", type=int, nargs="+", default=[10**2, 10**3, 10**4, 10**5])
    p.add_argument("--b", type=int, nargs="+", default=[10])
    p.add_argument("--result-size", type=int, nargs="+", default=[1, 16, 256, 4096])
    p.add_argument("--construction", type=int, nargs="+", choices=(1, 2), default=[1, 2])
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--integrity", choices=("on", "off"), default="off")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reserved-space", type=int, default=64 * 1024)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("audit", help="trace random queries and audit against leakage")
    p.add_argument("--index", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--input", required=True, help="the pairs the container was built from")
    p.add_argument("--format", choices=("text", "binary"), default="text")
    p.add_argument("--construction", type=int, choices=(1, 2), default=2)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reserved-space", type=int, default=64 * 1024)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("tamper", help="scripted active-attacker runs")
    p.add_argument("--script", choices=KINDS + ("all",), default="all")
    p.add_argument("--targets", type=int, default=10)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--b", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reserved-space", type=int, default=64 * 1024)
    p.set_defaults(func=cmd_tamper)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (AuthenticationError, EnclaveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
