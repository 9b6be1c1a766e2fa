"""Trace generation, replay with per-query access metrics, and CSV/JSON reports."""

from __future__ import annotations

import csv
import io
import json
import random
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from . import crypto
from .common import InvalidArgument, Op, Query
from .oracle import PlaintextIndex
from .service import RemoteClient, SseServer, make_client, make_server


@dataclass(frozen=True)
class TraceSpec:
    length: int
    alpha: float
    kw_universe: int = 1
    id_universe: int = 1_000_000
    del_frac: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.length < 0:
            raise InvalidArgument("trace length must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgument("alpha must lie in [0, 1]")
        if not 0.0 <= self.del_frac <= 1.0:
            raise InvalidArgument("delete fraction must lie in [0, 1]")
        if self.kw_universe < 1 or self.id_universe < 1:
            raise InvalidArgument("universes must be non-empty")


def keyword_name(n: int) -> str:
    return f"w{n}"


def gen_trace(spec: TraceSpec) -> List[Query]:
    """Seeded random workload.

    Each query is a search with probability ``alpha``.  Updates pick a keyword
    uniformly; if the keyword has live ids, a delete of one of them is chosen
    with probability ``del_frac``, otherwise an id not currently live for that
    keyword is added.  Histories are therefore always well formed: no add of
    a live pair and no delete of an absent one.
    """
    spec.validate()
    rng = random.Random(spec.seed)
    live: Dict[int, List[int]] = {}
    live_sets: Dict[int, set] = {}
    trace: List[Query] = []
    for _ in range(spec.length):
        kw = rng.randrange(spec.kw_universe)
        if rng.random() < spec.alpha:
            trace.append(Query.search(keyword_name(kw)))
            continue
        ids = live.setdefault(kw, [])
        present = live_sets.setdefault(kw, set())
        full = len(ids) >= spec.id_universe
        if ids and (full or rng.random() < spec.del_frac):
            pos = rng.randrange(len(ids))
            ind = ids[pos]
            ids[pos] = ids[-1]
            ids.pop()
            present.discard(ind)
            trace.append(Query.update(keyword_name(kw), ind, Op.DEL))
            continue
        ind = rng.randrange(spec.id_universe)
        while ind in present:
            ind = rng.randrange(spec.id_universe)
        ids.append(ind)
        present.add(ind)
        trace.append(Query.update(keyword_name(kw), ind, Op.ADD))
    return trace


TRACE_HEADER = ["kind", "keyword", "op", "ind"]


def dump_trace(trace: Sequence[Query]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for q in trace:
        if q.is_search:
            writer.writerow(["search", q.keyword, "", ""])
        else:
            writer.writerow(["update", q.keyword, q.op.name.lower(), q.ind])
    return buf.getvalue()


def load_trace(text: str) -> List[Query]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != TRACE_HEADER:
        raise InvalidArgument("trace file must start with header kind,keyword,op,ind")
    trace = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise InvalidArgument(f"trace line {lineno}: expected 4 fields")
        kind, kw, op, ind = row
        if kind == "search":
            trace.append(Query.search(kw))
        elif kind == "update":
            trace.append(Query.update(kw, int(ind), op))
        else:
            raise InvalidArgument(f"trace line {lineno}: unknown kind {kind!r}")
    return trace


# --- replay ------------------------------------------------------------------

@dataclass
class QueryMetrics:
    idx: int
    kind: str
    keyword_label: int
    op: str
    ind: str
    intervals: int
    cache_reads: int
    bytes_read: int
    bytes_stored: int  # change in resident payload bytes caused by this query
    prf: int
    prp: int
    prp_inv: int
    h1: int
    h2: int
    rand: int
    wall_us: int

    @property
    def index_reads(self) -> int:
        return self.intervals - self.cache_reads


CSV_COLUMNS = [f.name for f in fields(QueryMetrics)]


@dataclass
class RunResult:
    metrics: List[QueryMetrics]
    mismatches: List[int]
    final_bytes_stored: int

    @property
    def passed(self) -> bool:
        return not self.mismatches


class OracleMismatch(Exception):
    def __init__(self, index: int, got, expected):
        super().__init__(f"query {index}: got {sorted(got)}, oracle says {sorted(expected)}")
        self.index = index


@contextmanager
def _wire_endpoint(scheme: str, addr: Optional[str],
                   running: Optional[SseServer]) -> Iterator[Tuple[str, Optional[SseServer]]]:
    if running is not None:
        yield running.address, running
        return
    if addr is not None:
        yield addr, None
        return
    server = SseServer(scheme).start()
    try:
        yield server.address, server
    finally:
        server.shutdown()


def run_trace(scheme: str, trace: Sequence[Query], mode: str = "local", rng=None,
              addr: Optional[str] = None, stop_on_mismatch: bool = False,
              collect: bool = True, server: Optional[SseServer] = None) -> RunResult:
    """Replay ``trace`` and check every search against the plaintext oracle.

    In ``wire`` mode a server is started in-process unless one is passed in
    (``server``, which may be shared between runs) or ``addr`` points at an
    external one, whose store metrics are unavailable and read as 0.
    """
    if mode not in ("local", "wire"):
        raise InvalidArgument(f"unknown mode {mode!r}")
    oracle = PlaintextIndex()
    labels: Dict[str, int] = {}
    metrics: List[QueryMetrics] = []
    mismatches: List[int] = []

    with _wire_endpoint(scheme, addr, server) if mode == "wire" else _null() as (endpoint, wire_server):
        if mode == "wire":
            remote = RemoteClient(scheme, endpoint, rng=rng)
            store = wire_server.store if wire_server is not None else None
        else:
            client = make_client(scheme, rng=rng)
            local = make_server(scheme)
            store = local.store

        for idx, q in enumerate(trace, start=1):
            label = labels.setdefault(q.keyword, len(labels) + 1)
            if collect and store is not None:
                store.reset_metrics()
                before = store.metrics.bytes_stored
            t0 = time.perf_counter()
            if mode == "wire":
                if q.is_search:
                    got = remote.search(q.keyword)
                else:
                    remote.update(q.ind, q.keyword, q.op)
            else:
                if q.is_search:
                    token = client.search_token(q.keyword)
                    got = None if token is None else local.search(token)
                else:
                    local.apply(client.update(q.ind, q.keyword, q.op))
            wall = int((time.perf_counter() - t0) * 1e6)
            expected = oracle.apply(q)
            if q.is_search and (got or set()) != expected:
                mismatches.append(idx)
                if stop_on_mismatch:
                    raise OracleMismatch(idx, got or set(), expected)
            if not collect:
                continue
            if store is not None:
                snap = store.snapshot()
                io_ = (snap.non_contiguous_reads, snap.cache_reads, snap.bytes_read,
                       snap.bytes_stored - before)
                ops = snap.op_counts
            else:
                io_ = (0, 0, 0, 0)
                ops = crypto.ops_snapshot()
            metrics.append(QueryMetrics(
                idx, q.kind, label,
                "" if q.is_search else q.op.name.lower(),
                "" if q.is_search else str(q.ind),
                *io_, *(ops[name] for name in crypto.OP_NAMES), wall))
        if mode == "wire":
            remote.close()
        final = store.metrics.bytes_stored if store is not None else 0
    return RunResult(metrics, mismatches, final)


@contextmanager
def _null():
    yield None, None


# --- reports -----------------------------------------------------------------

AGGREGATE_BINS = 10


def aggregate(metrics: Sequence[QueryMetrics], bins: int = AGGREGATE_BINS) -> dict:
    """Totals plus mean intervals per search, bucketed by trace position."""
    searches = [m for m in metrics if m.kind == "search"]
    n = len(metrics)
    curve = []
    if n:
        for b in range(bins):
            lo, hi = b * n // bins, (b + 1) * n // bins
            inside = [m.intervals for m in searches if lo < m.idx <= hi]
            curve.append({
                "from_idx": lo + 1,
                "to_idx": hi,
                "searches": len(inside),
                "mean_intervals": round(sum(inside) / len(inside), 6) if inside else None,
            })
    return {
        "queries": n,
        "updates": n - len(searches),
        "searches": len(searches),
        "total_intervals": sum(m.intervals for m in searches),
        "mean_intervals_per_search": round(sum(m.intervals for m in searches) / len(searches), 6) if searches else None,
        "total_bytes_read": sum(m.bytes_read for m in metrics),
        "bytes_stored": sum(m.bytes_stored for m in metrics),
        "intervals_by_position": curve,
    }


def report_csv(metrics: Sequence[QueryMetrics]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for m in metrics:
        writer.writerow([getattr(m, c) for c in CSV_COLUMNS])
    return buf.getvalue()


def aggregate_csv(agg: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["key", "value"])
    for k, v in agg.items():
        if k != "intervals_by_position":
            writer.writerow([k, "" if v is None else v])
    writer.writerow([])
    writer.writerow(["from_idx", "to_idx", "searches", "mean_intervals"])
    for row in agg["intervals_by_position"]:
        writer.writerow(["" if row[k] is None else row[k]
                         for k in ("from_idx", "to_idx", "searches", "mean_intervals")])
    return buf.getvalue()


def report_json(metrics: Sequence[QueryMetrics]) -> str:
    doc = {"columns": CSV_COLUMNS,
           "rows": [asdict(m) for m in metrics],
           "aggregate": aggregate(metrics)}
    return json.dumps(doc, indent=1) + "\n"


def report(metrics: Sequence[QueryMetrics], fmt: str, path) -> List[str]:
    """Write the report; CSV puts the aggregate block in ``<path>.agg.csv``.  Returns written paths."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(report_csv(metrics))
        agg_path = f"{path}.agg.csv"
        with open(agg_path, "w", newline="") as fh:
            fh.write(aggregate_csv(aggregate(metrics)))
        return [str(path), agg_path]
    if fmt == "json":
        with open(path, "w") as fh:
            fh.write(report_json(metrics))
        return [str(path)]
    raise InvalidArgument(f"unknown report format {fmt!r}")
