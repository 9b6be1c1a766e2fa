"""End-to-end acceptance checks, one test per criterion.

Run ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per criterion is
printed in the ``acceptance criteria`` section of the terminal summary.
"""

import random
import statistics
import time

import pytest

from fsse import crypto, wire
from fsse.bench import TraceSpec, gen_trace, run_trace
from fsse.common import Op, Query
from fsse.fast import fast_setup
from fsse.fastio import io_setup
from fsse.leakage import audit, compare_profiles, real_transcript, rename_keywords
from fsse.oracle import PlaintextIndex
from fsse.service import RemoteClient, SseServer
from fsse.store import EncryptedStore

SCHEMES = ("fast", "fastio")
SETUPS = {"fast": fast_setup, "fastio": io_setup}


def detail(request, text):
    request.node.user_properties.append(("detail", text))
    print(text)


def expected_intervals(scheme, trace):
    """Locality each search should have, derived from the trace alone."""
    lifetime, since, cached = {}, {}, set()
    out = []
    for q in trace:
        w = q.keyword
        if not q.is_search:
            lifetime[w] = lifetime.get(w, 0) + 1
            since[w] = since.get(w, 0) + 1
            continue
        if scheme == "fast":
            out.append(lifetime.get(w, 0))
        elif lifetime.get(w, 0) == 0:
            out.append(0)  # nothing is sent
        else:
            out.append(since.get(w, 0) + (1 if w in cached else 0))
            cached.add(w)
            since[w] = 0
    return out


# --- criteria 1-3 share one sweep --------------------------------------------

C1_TRACES = 1000


@pytest.fixture(scope="module")
def sweep():
    stats = {"runs": 0, "searches": 0, "mismatches": [], "law": {s: [] for s in SCHEMES},
             "checked": {s: 0 for s in SCHEMES}, "repeat_cache_only": 0}
    servers = {s: SseServer(s).start() for s in SCHEMES}
    t0 = time.perf_counter()
    try:
        for seed in range(C1_TRACES):
            trace = gen_trace(TraceSpec(200, 0.2, kw_universe=10, id_universe=50, del_frac=0.3, seed=seed))
            for scheme in SCHEMES:
                want = expected_intervals(scheme, trace)
                for mode in ("local", "wire"):
                    res = run_trace(scheme, trace, mode, server=servers[scheme])
                    stats["runs"] += 1
                    if res.mismatches:
                        stats["mismatches"].append((scheme, mode, seed, res.mismatches[0]))
                    searches = [m for m in res.metrics if m.kind == "search"]
                    stats["searches"] += len(searches)
                    got = [m.intervals for m in searches]
                    stats["checked"][scheme] += len(got)
                    if got != want:
                        bad = next(n for n, (a, b) in enumerate(zip(got, want)) if a != b)
                        stats["law"][scheme].append((mode, seed, searches[bad].idx, got[bad], want[bad]))
                    if scheme == "fastio":
                        stats["repeat_cache_only"] += sum(
                            1 for m, w in zip(searches, want)
                            if w == 1 and m.cache_reads == 1 and m.index_reads == 0)
    finally:
        for s in servers.values():
            s.shutdown()
    stats["elapsed"] = time.perf_counter() - t0
    return stats


@pytest.mark.slow
@pytest.mark.criterion(1, "oracle equivalence, 1000 traces x 2 schemes x 2 modes")
def test_c1_oracle_equivalence(sweep, request):
    detail(request, f"{sweep['runs']} runs, {sweep['searches']} searches, "
                    f"{len(sweep['mismatches'])} mismatching runs, {sweep['elapsed']:.1f}s")
    assert sweep["runs"] == 4 * C1_TRACES
    assert sweep["mismatches"] == []
    assert sweep["elapsed"] < 120, f"runtime {sweep['elapsed']:.1f}s exceeds 120s"


@pytest.mark.slow
@pytest.mark.criterion(2, "FAST intervals == lifetime update count c")
def test_c2_fast_locality(sweep, request):
    detail(request, f"{sweep['checked']['fast']} searches, {len(sweep['law']['fast'])} violations")
    assert sweep["checked"]["fast"] > 0
    assert sweep["law"]["fast"] == []


@pytest.mark.slow
@pytest.mark.criterion(3, "FASTIO intervals == fresh updates + cache hit")
def test_c3_fastio_locality(sweep, request):
    detail(request, f"{sweep['checked']['fastio']} searches, {len(sweep['law']['fastio'])} violations, "
                    f"{sweep['repeat_cache_only']} cache-only repeat searches")
    assert sweep["law"]["fastio"] == []
    assert sweep["repeat_cache_only"] > 0


# --- 4 -----------------------------------------------------------------------

@pytest.mark.criterion(4, "index size 25N / 9N / 8N bytes")
def test_c4_index_size(request):
    n = 10_000
    trace = gen_trace(TraceSpec(n, 0.0, kw_universe=50, id_universe=10**6, seed=4))
    assert len({(q.keyword, q.ind) for q in trace}) == n
    sizes = {}
    for scheme in SCHEMES:
        client, server = SETUPS[scheme]()
        for q in trace:
            server.apply(client.update(q.ind, q.keyword, q.op))
        sizes[scheme] = server.store.metrics.bytes_stored
        assert server.store.stored_bytes_recount() == sizes[scheme]
        if scheme == "fastio":
            for w in sorted({q.keyword for q in trace}):
                server.search(client.search_token(w))
            sizes["fastio_searched"] = server.store.metrics.bytes_stored
            assert len(server.store.table("T_e")) == 0
    detail(request, f"N={n}: fast {sizes['fast']}, fastio {sizes['fastio']}, "
                    f"fastio after searches {sizes['fastio_searched']}")
    assert sizes == {"fast": 25 * n, "fastio": 9 * n, "fastio_searched": 8 * n}


# --- 5 -----------------------------------------------------------------------

@pytest.mark.criterion(5, "constant frame sizes 62 / 45 bytes")
def test_c5_frame_sizes(request, monkeypatch):
    sizes = {}
    real_encode = wire.encode

    def recording(msg):
        frame = real_encode(msg)
        sizes.setdefault(frame[4], set()).add(len(frame))
        return frame

    monkeypatch.setattr(wire, "encode", recording)
    trace = gen_trace(TraceSpec(10_000, 0.05, kw_universe=20, id_universe=500, del_frac=0.3, seed=5))
    for scheme in SCHEMES:
        with SseServer(scheme) as server, RemoteClient(scheme, server.address) as remote:
            for q in trace:
                if q.is_search:
                    remote.search(q.keyword)
                else:
                    remote.update(q.ind, q.keyword, q.op)
    requests = (wire.UPDATE_FAST, wire.SEARCH_FAST, wire.UPDATE_IO, wire.SEARCH_IO)
    detail(request, ", ".join(f"tag {t:#04x}: {sorted(sizes[t])}" for t in requests))
    assert sizes[wire.UPDATE_FAST] == {62}
    assert sizes[wire.SEARCH_FAST] == {45}
    assert sizes[wire.UPDATE_IO] == {46}
    assert sizes[wire.SEARCH_IO] <= {30, 46}


# --- 6 -----------------------------------------------------------------------

@pytest.mark.criterion(6, "stale tokens return the pre-token result")
def test_c6_stale_tokens(request):
    ok = 0
    for seed in range(100):
        r = random.Random(seed)
        for scheme in SCHEMES:
            client, server = SETUPS[scheme]()
            oracle = PlaintextIndex()

            def update(kw, ind, op):
                server.apply(client.update(ind, kw, op))
                oracle.apply(Query.update(kw, ind, op))

            target = "target"
            update(target, r.randrange(30), Op.ADD)
            for _ in range(r.randrange(0, 40)):
                kw = r.choice([target, "other"])
                if r.random() < 0.15:
                    tok = client.search_token(kw)
                    if tok is not None:
                        server.search(tok)
                else:
                    # deletes only where re-adds cannot occur in the same history
                    op = r.choice([Op.ADD, Op.ADD, Op.DEL]) if scheme == "fastio" else Op.ADD
                    update(kw, r.randrange(30), op)
            token = client.search_token(target)
            before = oracle.search(target)
            for _ in range(r.randrange(1, 30)):  # k further updates
                update(target, r.randrange(30), Op.ADD)
            assert server.search(token) == before, f"{scheme} seed {seed}"
            ok += 1
    detail(request, f"{ok} scenarios")
    assert ok == 200


# --- 7 -----------------------------------------------------------------------

@pytest.mark.criterion(7, "real vs simulated transcripts indistinguishable")
def test_c7_simulator_soundness(request):
    failures, renamed = [], 0
    for scheme in SCHEMES:
        for seed in range(200):
            r = random.Random(seed)
            spec = TraceSpec(r.randint(1, 300), r.choice([0.05, 0.2, 0.5]),
                             kw_universe=r.randint(1, 12), id_universe=r.randint(5, 60),
                             del_frac=r.choice([0.0, 0.3]), seed=seed)
            trace = gen_trace(spec)
            report = audit(scheme, trace)
            if not report.passed:
                failures.append((scheme, seed, report.failed()))
            if seed % 4 == 0:
                kws = sorted({q.keyword for q in trace})
                other = rename_keywords(trace, {w: f"renamed-{w}" for w in kws})
                rep = compare_profiles(real_transcript(scheme, trace), real_transcript(scheme, other))
                renamed += 1
                if not rep.passed:
                    failures.append((scheme, seed, ["renamed"] + rep.failed()))
    detail(request, f"400 audits + {renamed} renamed pairs, {len(failures)} failures")
    assert failures == []


# --- 8 -----------------------------------------------------------------------

@pytest.mark.criterion(8, "per-update crypto op budgets")
def test_c8_op_budgets(request):
    trace = gen_trace(TraceSpec(10_000, 0.1, kw_universe=100, id_universe=1000, del_frac=0.3, seed=8))
    budgets = {
        "fast": {"prf": 1, "prp": 1, "prp_inv": 0, "h1": 1, "h2": 1, "rand": 1},
        "fastio": {"prf": 0, "prp": 0, "prp_inv": 0, "h1": 1, "h2": 1, "rand": 0},
    }
    checked = 0
    for scheme in SCHEMES:
        touched = set()
        res = run_trace(scheme, trace)
        for q, m in zip(trace, res.metrics):
            if q.is_search:
                continue
            want = dict(budgets[scheme])
            if q.keyword not in touched:
                want["rand"] += 1
                touched.add(q.keyword)
            got = {name: getattr(m, name) for name in crypto.OP_NAMES}
            assert got == want, f"{scheme} query {m.idx}: {got} != {want}"
            checked += 1
    detail(request, f"{checked} updates checked")


# --- 9 -----------------------------------------------------------------------

def slope_and_r2(xs, ys):
    fit = statistics.linear_regression(xs, ys)
    r = statistics.correlation(xs, ys) if len(set(ys)) > 1 else 0.0
    return fit.slope, r * r


@pytest.mark.criterion(9, "search cost grows for FAST, stays flat for FASTIO")
def test_c9_locality_trend(request):
    alpha = 0.01
    trace = gen_trace(TraceSpec(10_000, alpha, kw_universe=1, seed=9))
    fast = [m for m in run_trace("fast", trace).metrics if m.kind == "search"]
    io = [m for m in run_trace("fastio", trace).metrics if m.kind == "search"]
    f_x, f_y = [m.idx for m in fast], [m.intervals for m in fast]
    f_slope, f_r2 = slope_and_r2(f_x, f_y)
    io_x, io_y = [m.idx for m in io], [m.index_reads for m in io]
    io_slope, _ = slope_and_r2(io_x, io_y)
    io_mean = statistics.fmean(io_y)
    detail(request, f"{len(fast)} searches; FAST slope {f_slope:.3f} R^2 {f_r2:.4f}; "
                    f"FASTIO mean t_e reads {io_mean:.1f}, slope {io_slope:+.4f}")
    assert all(a <= b for a, b in zip(f_y, f_y[1:]))
    assert f_r2 > 0.99 and abs(f_slope - (1 - alpha)) < 0.05
    assert 75 <= io_mean <= 125
    assert abs(io_slope) < 0.01


# --- 10 ----------------------------------------------------------------------

@pytest.mark.criterion(10, "persistence round trip and restart")
def test_c10_persistence(request, tmp_path):
    notes = []
    for scheme in SCHEMES:
        trace = gen_trace(TraceSpec(16_000, 0.001, kw_universe=50, id_universe=1000, del_frac=0.3, seed=10))
        cut = 12_000
        oracle = PlaintextIndex()
        mismatches = 0

        def replay(remote, queries):
            nonlocal mismatches
            for q in queries:
                if q.is_search:
                    got = remote.search(q.keyword) or set()
                    mismatches += got != oracle.apply(q)
                else:
                    remote.update(q.ind, q.keyword, q.op)
                    oracle.apply(q)

        store_path, state_path = tmp_path / f"{scheme}.edb", tmp_path / f"{scheme}.state"
        with SseServer(scheme) as server, RemoteClient(scheme, server.address) as remote:
            replay(remote, trace[:cut])
            wire.save_client_state(state_path, scheme, remote.client)
            server.store.persist(store_path)
            entries = sum(len(t) for t in server.store.tables.values())
        assert entries >= 10_000

        raw = store_path.read_bytes()
        loaded = EncryptedStore.load(store_path)
        assert loaded.to_bytes() == raw
        state_raw = state_path.read_bytes()
        assert wire.encode_client_state(*wire.decode_client_state(state_raw)) == state_raw

        with SseServer(scheme, loaded) as server, RemoteClient(scheme, server.address,
                                                               state_path=state_path) as remote:
            replay(remote, trace[cut:])
            for k in range(50):
                replay(remote, [Query.search(f"w{k}")])
        notes.append(f"{scheme}: {entries} entries, {len(raw)} bytes, {mismatches} mismatches")
        assert mismatches == 0
    detail(request, "; ".join(notes))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
