"""Command-line entry point: ``fsse <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
from pathlib import Path
from typing import List, Optional

from . import crypto, wire
from .bench import TraceSpec, dump_trace, gen_trace, load_trace, report, run_trace
from .common import FsseError, Op
from .leakage import audit
from .service import RemoteClient, SseServer, make_client, make_server
from .store import EncryptedStore

log = logging.getLogger("fsse")

DEFAULT_ALPHAS = "0.01,0.001,0.0001"
DEFAULT_ADDR = "127.0.0.1:7878"


def _store_for(scheme: str, path: Optional[str]) -> EncryptedStore:
    if path and os.path.exists(path):
        store = EncryptedStore.load(path)
        if store.scheme != scheme:
            raise FsseError(f"{path} holds a {store.scheme} index, not {scheme}")
        return store
    return EncryptedStore.for_fast() if scheme == "fast" else EncryptedStore.for_fastio()


def _state_path(args) -> Optional[str]:
    return os.environ.get("FSSE_STATE") or args.state


def _load_client(args):
    path = _state_path(args)
    if not path or not os.path.exists(path):
        raise FsseError("client state not found; run `fsse setup` first or pass --state")
    scheme, key, sigma = wire.load_client_state(path)
    if scheme != args.scheme:
        raise FsseError(f"{path} belongs to a {scheme} client, not {args.scheme}")
    return make_client(scheme, key=key, sigma=sigma), path


def _crypto_rng(args):
    if getattr(args, "insecure_crypto_seed", None) is None:
        return None
    crypto.enable_test_mode()
    return crypto.SeededRandom(args.insecure_crypto_seed)


def cmd_setup(args) -> int:
    path = _state_path(args)
    if not path:
        raise FsseError("--state is required")
    client = make_client(args.scheme)
    wire.save_client_state(path, args.scheme, client)
    print(f"client state written to {path}")
    if args.store:
        store = EncryptedStore.for_fast() if args.scheme == "fast" else EncryptedStore.for_fastio()
        store.persist(args.store)
        print(f"empty {args.scheme} index written to {args.store}")
    return 0


def cmd_serve(args) -> int:
    store = _store_for(args.scheme, args.store)
    server = SseServer(args.scheme, store, args.addr or DEFAULT_ADDR)
    print(f"serving {args.scheme} on {server.address}", flush=True)

    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server._tcp.server_close()
        if args.store:
            store.persist(args.store)
            print(f"index persisted to {args.store}", flush=True)
    return 0


def cmd_update(args) -> int:
    op = Op.parse(args.op)
    if args.mode == "wire":
        with RemoteClient(args.scheme, args.addr or DEFAULT_ADDR, state_path=_state_path(args)) as remote:
            if not remote.state_path:
                raise FsseError("--state is required")
            remote.update(args.id, args.keyword, op)
    else:
        client, path = _load_client(args)
        if not args.store:
            raise FsseError("--store is required in local mode")
        server = make_server(args.scheme, _store_for(args.scheme, args.store))
        server.apply(client.update(args.id, args.keyword, op))
        server.store.persist(args.store)
        wire.save_client_state(path, args.scheme, client)
    print("ok")
    return 0


def cmd_search(args) -> int:
    if args.mode == "wire":
        with RemoteClient(args.scheme, args.addr or DEFAULT_ADDR, state_path=_state_path(args)) as remote:
            ids = remote.search(args.keyword)
    else:
        client, path = _load_client(args)
        if not args.store:
            raise FsseError("--store is required in local mode")
        server = make_server(args.scheme, _store_for(args.scheme, args.store))
        token = client.search_token(args.keyword)
        ids = None if token is None else server.search(token)
        if token is not None:
            server.store.persist(args.store)
            wire.save_client_state(path, args.scheme, client)
    if not ids:
        print("no results")
    else:
        for ind in sorted(ids):
            print(ind)
    return 0


def _spec(args, alpha: float) -> TraceSpec:
    return TraceSpec(length=args.len, alpha=alpha, kw_universe=args.kw_universe,
                     id_universe=args.id_universe, del_frac=args.del_frac, seed=args.seed)


def _alphas(text: str) -> List[float]:
    try:
        return [float(a) for a in text.split(",") if a]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}") from None


def _out_for(out: str, alpha: float, many: bool) -> str:
    if not many:
        return out
    p = Path(out)
    return str(p.with_name(f"{p.stem}-alpha{alpha:g}{p.suffix}"))


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_trace_gen(args) -> int:
    alphas = _alphas(args.alpha)
    for alpha in alphas:
        text = dump_trace(gen_trace(_spec(args, alpha)))
        _emit(text, _out_for(args.out, alpha, len(alphas) > 1) if args.out else None)
    return 0


def cmd_bench(args) -> int:
    if args.trace:
        traces = [(None, load_trace(Path(args.trace).read_text()))]
    else:
        alphas = _alphas(args.alpha)
        traces = [(a, gen_trace(_spec(args, a))) for a in alphas]
    many = len(traces) > 1
    status = 0
    for alpha, trace in traces:
        result = run_trace(args.scheme, trace, args.mode, rng=_crypto_rng(args),
                           addr=args.addr if args.mode == "wire" else None)
        out = _out_for(args.out, alpha, many)
        written = report(result.metrics, args.format, out)
        verdict = "PASS" if result.passed else f"FAIL at query {result.mismatches[0]}"
        print(f"{args.scheme} alpha={alpha if alpha is not None else 'trace'}: "
              f"{len(result.metrics)} queries, correctness {verdict}; wrote {', '.join(written)}")
        if not result.passed:
            status = 1
    return status


def cmd_audit(args) -> int:
    if args.trace:
        trace = load_trace(Path(args.trace).read_text())
    else:
        alpha = _alphas(args.alpha)[0]
        trace = gen_trace(_spec(args, alpha))
    rng = _crypto_rng(args)
    result = audit(args.scheme, trace, rng=rng, sim_rng=rng)
    _emit(result.text(), args.out)
    if args.out:
        print(f"audit {'PASS' if result.passed else 'FAIL'}; report in {args.out}")
    return 0 if result.passed else 1


def cmd_persist_check(args) -> int:
    ok = True
    if args.store:
        raw = Path(args.store).read_bytes()
        store = EncryptedStore.from_bytes(raw)
        same = store.to_bytes() == raw
        ok &= same
        print(f"store {args.store}: {store.scheme}, "
              f"{sum(len(t) for t in store.tables.values())} entries, "
              f"{store.metrics.bytes_stored} payload bytes, round-trip {'OK' if same else 'MISMATCH'}")
    path = _state_path(args)
    if path:
        raw = Path(path).read_bytes()
        scheme, key, sigma = wire.decode_client_state(raw)
        same = wire.encode_client_state(scheme, key, sigma) == raw
        ok &= same
        print(f"state {path}: {scheme}, {len(sigma)} keywords, round-trip {'OK' if same else 'MISMATCH'}")
    if not args.store and not path:
        raise FsseError("nothing to check; pass --store and/or --state")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsse", description="Forward-private searchable encryption (FAST / FASTIO).")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scheme=True):
        if scheme:
            p.add_argument("--scheme", choices=("fast", "fastio"), default="fastio")
        p.add_argument("--store", help="index file")
        p.add_argument("--state", help="client state file (FSSE_STATE overrides)")
        p.add_argument("--addr", help=f"server endpoint HOST:PORT (default {DEFAULT_ADDR}; "
                                      "bench starts its own server when omitted)")
        p.add_argument("--mode", choices=("local", "wire"), default="local")

    def workload(p):
        p.add_argument("--alpha", default=DEFAULT_ALPHAS, help="search probability, or a comma-separated sweep")
        p.add_argument("--len", type=int, default=100_000)
        p.add_argument("--kw-universe", type=int, default=1)
        p.add_argument("--id-universe", type=int, default=1_000_000)
        p.add_argument("--del-frac", type=float, default=0.0)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("setup", help="create a client state file (and an empty index)")
    common(p)
    p.set_defaults(func=cmd_setup)

    p = sub.add_parser("serve", help="serve an index over TCP")
    common(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("update", help="add or delete a (keyword, id) pair")
    common(p)
    p.add_argument("keyword")
    p.add_argument("id", type=int)
    p.add_argument("--op", choices=("add", "del"), default="add")
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("search", help="search a keyword")
    common(p)
    p.add_argument("keyword")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("trace-gen", help="write a seeded workload trace (CSV)")
    workload(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_trace_gen)

    p = sub.add_parser("bench", help="replay a trace and report per-query access metrics")
    common(p)
    workload(p)
    p.add_argument("--trace", help="replay this trace file instead of generating one")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", required=True)
    p.add_argument("--insecure-crypto-seed", type=int, help="seed the crypto RNG (test mode only)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("audit", help="compare real and simulated transcripts of a trace")
    p.add_argument("--scheme", choices=("fast", "fastio"), default="fastio")
    workload(p)
    p.set_defaults(len=200, kw_universe=10, id_universe=50, del_frac=0.3, alpha="0.2")
    p.add_argument("--trace")
    p.add_argument("--out")
    p.add_argument("--insecure-crypto-seed", type=int, help="seed the crypto RNG (test mode only)")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("persist-check", help="verify index / client-state files round-trip byte-exactly")
    p.add_argument("--store")
    p.add_argument("--state")
    p.set_defaults(func=cmd_persist_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FsseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
