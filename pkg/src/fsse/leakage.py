"""Leakage profiles, ideal-world simulators and a transcript distinguisher.

The simulators see only the leakage of a trace: for updates ``(i, op, ind)``,
for searches the access pattern and which earlier queries share the keyword.
They emit random update messages and, at search time, program the random
oracles H1/H2 so that the *real* server algorithm, run against the simulated
index, walks exactly the entries the leakage says it should.  Comparing the
server-visible transcripts of the real and simulated worlds with a fixed
battery of pattern checks is the desk-scale form of the security argument.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

from . import crypto
from .common import FsseError, Op, Query, encode_id
from .fast import PAYLOAD_LEN as FAST_PAYLOAD, FastServer, FastToken, FastUpdate
from .fastio import PAYLOAD_LEN as IO_PAYLOAD, IoServer, IoToken, IoUpdate, counter_bytes
from .oracle import PlaintextIndex
from .service import make_client, make_server


class MalformedProfile(FsseError):
    pass


@dataclass
class PatternProfile:
    """Leakage of a whole trace.  Query indices are 1-based; keyword classes are opaque labels."""

    kinds: List[str]
    labels: List[int]
    access_pattern: List[tuple]
    query_pattern: Dict[int, List[int]]
    search_pattern: Dict[int, List[int]]
    update_history: Dict[int, List[Tuple[int, Op, int]]]
    updates_after_last_search: Dict[int, int]

    def __len__(self) -> int:
        return len(self.kinds)

    def label(self, i: int) -> int:
        return self.labels[i - 1]

    def kind(self, i: int) -> str:
        return self.kinds[i - 1]


def extract_leakage(trace: Sequence[Query]) -> PatternProfile:
    oracle = PlaintextIndex()
    label_of: Dict[str, int] = {}
    kinds, labels, ap = [], [], []
    qp: Dict[int, List[int]] = {}
    sp: Dict[int, List[int]] = {}
    up: Dict[int, List[Tuple[int, Op, int]]] = {}
    suffix: Dict[int, int] = {}
    for i, q in enumerate(trace, start=1):
        lab = label_of.setdefault(q.keyword, len(label_of) + 1)
        kinds.append(q.kind)
        labels.append(lab)
        qp.setdefault(lab, []).append(i)
        sp.setdefault(lab, [])
        up.setdefault(lab, [])
        suffix.setdefault(lab, 0)
        result = oracle.apply(q)
        if q.is_search:
            ap.append((i, frozenset(result)))
            sp[lab].append(i)
            suffix[lab] = 0
        else:
            ap.append((i, q.op, q.ind))
            up[lab].append((i, q.op, q.ind))
            suffix[lab] += 1
    return PatternProfile(kinds, labels, ap, qp, sp, up, suffix)


# --- transcripts -------------------------------------------------------------

@dataclass(frozen=True)
class UpdateRecord:
    index: int
    u: bytes
    e: bytes


@dataclass(frozen=True)
class SearchRecord:
    index: int
    t_w: bytes
    state: Optional[bytes]
    c: int
    addresses: Tuple[bytes, ...]
    result: FrozenSet[int]


@dataclass(frozen=True)
class SilentSearch:
    """A search the client answered locally; nothing reached the server."""

    index: int


Record = Union[UpdateRecord, SearchRecord, SilentSearch]


def real_transcript(scheme: str, trace: Sequence[Query], rng=None) -> List[Record]:
    client = make_client(scheme, rng=rng)
    server = make_server(scheme)
    out: List[Record] = []
    for i, q in enumerate(trace, start=1):
        if not q.is_search:
            msg = client.update(q.ind, q.keyword, q.op)
            server.apply(msg)
            out.append(UpdateRecord(i, msg.u, msg.e))
            continue
        token = client.search_token(q.keyword)
        if token is None:
            out.append(SilentSearch(i))
            continue
        result = server.search(token)
        state = token.st if scheme == "fast" else token.k_w
        out.append(SearchRecord(i, token.t_w, state, token.c,
                                tuple(server.last_addresses), frozenset(result)))
    return out


# --- simulators --------------------------------------------------------------

def _random_bytes(rng, n: int) -> bytes:
    src = rng or crypto._default_source
    out = b""
    while len(out) < n:
        out += src.block()
    return out[:n]


class ProgrammedOracle:
    """A lazily sampled random oracle whose table the simulator may program."""

    def __init__(self, rng=None, width: int = 32):
        self.rng = rng
        self.width = width
        self.table: Dict[bytes, bytes] = {}

    def program(self, x: bytes, y: bytes) -> None:
        self.table[x] = y

    def __call__(self, x: bytes, out_len: Optional[int] = None) -> bytes:
        y = self.table.get(x)
        if y is None:
            y = self.table[x] = _random_bytes(self.rng, self.width)
        return y if out_len is None else y[:out_len]


class _Simulator:
    payload_len = 0

    def __init__(self, profile: PatternProfile, rng=None):
        self.profile = profile
        self.rng = rng
        self.L: Dict[int, bytes] = {}
        self.E: Dict[int, bytes] = {}
        self.v = 0
        self.v_of: Dict[int, int] = {}  # query index -> update counter
        self.tokens: Dict[int, bytes] = {}
        self.H1 = ProgrammedOracle(rng)
        self.H2 = ProgrammedOracle(rng)
        self.server = self._make_server()
        self.transcript: List[Record] = []

    def _make_server(self):
        raise NotImplementedError

    def _search(self, i: int) -> Record:
        raise NotImplementedError

    def run(self) -> List[Record]:
        for i in range(len(self.transcript) + 1, len(self.profile) + 1):
            self.step(i)
        return self.transcript

    def step(self, i: int) -> Record:
        if i != len(self.transcript) + 1:
            raise MalformedProfile(f"queries must be simulated in order; expected {len(self.transcript) + 1}, got {i}")
        if not 1 <= i <= len(self.profile):
            raise MalformedProfile(f"query index {i} outside profile")
        kind = self.profile.kind(i)
        if kind == "update":
            rec = self._update(i)
        elif kind == "search":
            rec = self._search(i)
        else:
            raise MalformedProfile(f"unknown query kind {kind!r} at {i}")
        self.transcript.append(rec)
        return rec

    def _update(self, i: int) -> Record:
        self.v += 1
        self.L[self.v] = _random_bytes(self.rng, crypto.ADDR_LEN)
        self.E[self.v] = _random_bytes(self.rng, self.payload_len)
        self.v_of[i] = self.v
        rec = UpdateRecord(i, self.L[self.v], self.E[self.v])
        self.server.apply(self._message(rec.u, rec.e))
        return rec

    def _leakage(self, i: int):
        """Search pattern up to ``i`` and update history before ``i`` for the class searched at ``i``."""
        lab = self.profile.label(i)
        sp = [j for j in self.profile.search_pattern.get(lab, []) if j <= i]
        uh = [h for h in self.profile.update_history.get(lab, []) if h[0] < i]
        if i not in sp:
            raise MalformedProfile(f"query {i} missing from its search pattern")
        return sp, uh

    def _token(self, first: int) -> bytes:
        if first not in self.tokens:
            self.tokens[first] = _random_bytes(self.rng, crypto.BLOCK_LEN)
        return self.tokens[first]

    def _finish(self, i: int, token, state) -> SearchRecord:
        result = self.server.search(token)
        return SearchRecord(i, token.t_w, state, token.c,
                            tuple(self.server.last_addresses), frozenset(result))


class FastSimulator(_Simulator):
    payload_len = FAST_PAYLOAD

    def __init__(self, profile: PatternProfile, rng=None):
        super().__init__(profile, rng)
        self.st0: Dict[int, bytes] = {}
        self.keys: Dict[Tuple[int, int], bytes] = {}

    def _make_server(self):
        return FastServer(h1=self.H1, h2=self.H2)

    def _message(self, u, e):
        return FastUpdate(u, e)

    def _search(self, i: int) -> Record:
        sp, uh = self._leakage(i)
        first = min(sp)
        t_w = self._token(first)
        if first not in self.st0:
            self.st0[first] = _random_bytes(self.rng, crypto.BLOCK_LEN)
        st = self.st0[first]
        c = len(uh)
        if c == 0:
            return SilentSearch(i)
        for n, (j, op, ind) in enumerate(uh, start=1):
            k = self.keys.get((first, n))
            if k is None:
                k = self.keys[(first, n)] = _random_bytes(self.rng, crypto.BLOCK_LEN)
            st = crypto.prp_forward(k, st)
            v = self.v_of[j]
            self.H1.program(t_w + st, self.L[v])
            self.H2.program(t_w + st, crypto.xor(self.E[v], encode_id(ind) + bytes([op]) + k))
        return self._finish(i, FastToken(t_w, st, c), st)


class FastioSimulator(_Simulator):
    payload_len = IO_PAYLOAD

    def _make_server(self):
        return IoServer(h1=self.H1, h2=self.H2)

    def _message(self, u, e):
        return IoUpdate(u, e)

    def _search(self, i: int) -> Record:
        sp, uh = self._leakage(i)
        if not uh:
            return SilentSearch(i)
        first = min(sp)
        previous = [j for j in sp if j < i]
        last = max(previous) if previous else 0
        t_w = self._token(first)
        fresh = [h for h in uh if h[0] > last]
        if not fresh:
            return self._finish(i, IoToken(t_w, None, 0), None)
        k_w = _random_bytes(self.rng, crypto.BLOCK_LEN)
        for n, (j, op, ind) in enumerate(fresh, start=1):
            v = self.v_of[j]
            sub = k_w + counter_bytes(n)
            self.H1.program(sub, self.L[v])
            self.H2.program(sub, crypto.xor(self.E[v], encode_id(ind) + bytes([op])))
        return self._finish(i, IoToken(t_w, k_w, len(fresh)), k_w)


def simulate_fast(profile: PatternProfile, rng=None) -> List[Record]:
    return FastSimulator(profile, rng).run()


def simulate_fastio(profile: PatternProfile, rng=None) -> List[Record]:
    return FastioSimulator(profile, rng).run()


SIMULATORS = {"fast": simulate_fast, "fastio": simulate_fastio}


# --- distinguisher -----------------------------------------------------------

@dataclass
class CriterionResult:
    name: str
    passed: bool
    first_divergence: Optional[int] = None
    detail: str = ""


@dataclass
class AuditReport:
    results: List[CriterionResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failed(self) -> List[str]:
        return [r.name for r in self.results if not r.passed]

    def lines(self) -> List[str]:
        out = ["criterion,status,first_divergence"]
        for r in self.results:
            where = "" if r.first_divergence is None else str(r.first_divergence)
            out.append(f"{r.name},{'PASS' if r.passed else 'FAIL'},{where}")
        out.append(f"overall,{'PASS' if self.passed else 'FAIL'},")
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def _shape(rec: Record):
    if isinstance(rec, UpdateRecord):
        return ("update", len(rec.u), len(rec.e))
    if isinstance(rec, SearchRecord):
        return ("search", len(rec.t_w), None if rec.state is None else len(rec.state), rec.c)
    return ("silent",)


def _repetition(transcript: Sequence[Record]) -> List[tuple]:
    first_token: Dict[bytes, int] = {}
    first_state: Dict[bytes, int] = {}
    out = []
    for pos, rec in enumerate(transcript):
        if isinstance(rec, SearchRecord):
            tok = first_token.setdefault(rec.t_w, pos)
            st = None if rec.state is None else first_state.setdefault(rec.state, pos)
            out.append((tok, st))
        else:
            out.append(None)
    return out


def _linkage(transcript: Sequence[Record]) -> List[Optional[tuple]]:
    where = {rec.u: pos for pos, rec in enumerate(transcript) if isinstance(rec, UpdateRecord)}
    return [tuple(where.get(a, -1) for a in rec.addresses) if isinstance(rec, SearchRecord) else None
            for rec in transcript]


def _results(transcript: Sequence[Record]) -> List[Optional[FrozenSet[int]]]:
    return [rec.result if isinstance(rec, SearchRecord) else None for rec in transcript]


def _first_duplicate_update(transcript: Sequence[Record]) -> Optional[int]:
    seen = set()
    for rec in transcript:
        if isinstance(rec, UpdateRecord):
            if rec.u in seen:
                return rec.index
            seen.add(rec.u)
    return None


def _first_mismatch(a: Sequence, b: Sequence, transcript: Sequence[Record]) -> Optional[int]:
    for pos, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return transcript[pos].index
    return None


def compare_profiles(real: Sequence[Record], ideal: Sequence[Record]) -> AuditReport:
    """Run the fixed distinguisher battery; PASS iff every check agrees."""
    report = AuditReport()
    if len(real) != len(ideal):
        n = min(len(real), len(ideal))
        report.results.append(CriterionResult("structure", False, n + 1,
                                              f"{len(real)} vs {len(ideal)} records"))
        return report
    checks = [
        ("lengths", _first_mismatch([_shape(r) for r in real], [_shape(r) for r in ideal], real)),
        ("token_repetition", _first_mismatch(_repetition(real), _repetition(ideal), real)),
        ("address_linkage", _first_mismatch(_linkage(real), _linkage(ideal), real)),
        ("results", _first_mismatch(_results(real), _results(ideal), real)),
    ]
    for name, where in checks:
        report.results.append(CriterionResult(name, where is None, where))
    dup = [d for d in (_first_duplicate_update(real), _first_duplicate_update(ideal)) if d is not None]
    report.results.append(CriterionResult("distinct_update_addresses", not dup, min(dup) if dup else None))
    return report


def audit(scheme: str, trace: Sequence[Query], rng=None, sim_rng=None) -> AuditReport:
    real = real_transcript(scheme, trace, rng)
    ideal = SIMULATORS[scheme](extract_leakage(trace), sim_rng)
    return compare_profiles(real, ideal)


def rename_keywords(trace: Sequence[Query], mapping: Dict[str, str]) -> List[Query]:
    return [Query(q.kind, mapping.get(q.keyword, q.keyword), q.op, q.ind) for q in trace]
