"""FASTIO: FAST with a server-side result cache and counter sub-states.

Between two searches a keyword keeps one random state ``st``; the n-th
update since the last search is stored at ``H1(st || n)``.  A search reveals
``st`` (only if there were updates), after which the server folds those
entries into the cached result, drops them from ``T_e`` and the client
switches to a fresh state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Set, Tuple

from . import crypto
from .common import (ID_LEN, MAX_COUNTER, CounterOverflow, InvalidArgument, Op,
                     ProtocolCorruption, as_keyword, encode_id)
from .store import EncryptedStore

PAYLOAD_LEN = ID_LEN + 1  # ind || op


def counter_bytes(c: int) -> bytes:
    return c.to_bytes(8, "big")


@dataclass(frozen=True)
class IoUpdate:
    u: bytes
    e: bytes


@dataclass(frozen=True)
class IoToken:
    t_w: bytes
    k_w: Optional[bytes]
    c: int

    def __post_init__(self):
        if (self.k_w is None) != (self.c == 0):
            raise InvalidArgument("k_w must be absent exactly when c = 0")


class IoClient:
    def __init__(self, key: Optional[bytes] = None, sigma=None, rng=None):
        self.rng = rng
        self.key = key if key is not None else crypto.random_block(rng)
        if len(self.key) != crypto.BLOCK_LEN:
            raise InvalidArgument("secret key must be 16 bytes")
        # keyword -> (st, updates since last search)
        self.sigma: Dict[bytes, Tuple[bytes, int]] = dict(sigma or {})

    def prepare_update(self, ind: int, w, op) -> Tuple[IoUpdate, Tuple[bytes, int]]:
        w = as_keyword(w)
        op = Op.parse(op)
        ind_bytes = encode_id(ind)
        entry = self.sigma.get(w)
        if entry is None:
            st, c = crypto.random_block(self.rng), 0
        else:
            st, c = entry
        if c >= MAX_COUNTER:
            raise CounterOverflow(f"update counter exhausted for keyword {w!r}")
        sub = st + counter_bytes(c + 1)
        u = crypto.h1(sub)
        e = crypto.xor(ind_bytes + bytes([op]), crypto.h2(sub, PAYLOAD_LEN))
        return IoUpdate(u, e), (st, c + 1)

    def commit(self, w, entry: Tuple[bytes, int]) -> None:
        self.sigma[as_keyword(w)] = entry

    def update(self, ind: int, w, op=Op.ADD) -> IoUpdate:
        msg, entry = self.prepare_update(ind, w, op)
        self.commit(w, entry)
        return msg

    def prepare_search(self, w) -> Optional[Tuple[IoToken, Tuple[bytes, int]]]:
        """Token plus the state to commit once the server has answered."""
        w = as_keyword(w)
        entry = self.sigma.get(w)
        if entry is None:
            return None
        st, c = entry
        t_w = crypto.prf(self.key, crypto.keyword_hash(w))
        if c == 0:
            return IoToken(t_w, None, 0), entry
        return IoToken(t_w, st, c), (crypto.random_block(self.rng), 0)

    def search_token(self, w) -> Optional[IoToken]:
        prepared = self.prepare_search(w)
        if prepared is None:
            return None
        token, entry = prepared
        self.commit(w, entry)
        return token


class IoServer:
    def __init__(self, store: Optional[EncryptedStore] = None,
                 h1: Callable = crypto.h1, h2: Callable = crypto.h2):
        self.store = store if store is not None else EncryptedStore.for_fastio()
        self.h1 = h1
        self.h2 = h2
        self.last_addresses: List[bytes] = []

    def apply(self, msg: IoUpdate) -> None:
        if len(msg.u) != crypto.ADDR_LEN or len(msg.e) != PAYLOAD_LEN:
            raise InvalidArgument("malformed FASTIO update")
        self.store.put("T_e", msg.u, msg.e)

    def search(self, token: IoToken) -> Set[int]:
        store = self.store
        cached = store.cache_read(token.t_w)
        ids: Set[int] = set(cached or ())
        self.last_addresses = []
        if token.k_w is None:
            return ids
        t_e = store.table("T_e")
        # resolve every entry before touching the tables so a corrupt token leaves them intact
        plains = []
        for i in range(1, token.c + 1):
            sub = token.k_w + counter_bytes(i)
            u = self.h1(sub)
            self.last_addresses.append(u)
            e = t_e.get(u)
            if e is None:
                raise ProtocolCorruption(f"missing T_e entry for sub-state {i} of {token.c}")
            plain = crypto.xor(e, self.h2(sub, PAYLOAD_LEN))
            if plain[ID_LEN] not in (Op.ADD, Op.DEL):
                raise ProtocolCorruption(f"invalid op byte {plain[ID_LEN]:#x} in sub-state {i}")
            plains.append((u, int.from_bytes(plain[:ID_LEN], "big"), plain[ID_LEN]))
        for u, ind, op in plains:
            if op == Op.DEL:
                ids.discard(ind)
            else:
                ids.add(ind)
            t_e.delete(u)
        store.cache_write(token.t_w, ids)
        return ids


def io_setup(rng=None) -> Tuple[IoClient, IoServer]:
    return IoClient(rng=rng), IoServer()
