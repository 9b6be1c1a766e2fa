"""FAST: forward privacy from a per-keyword state chain evolved under ephemeral keys.

Each update picks a fresh key ``k``, advances the keyword state
``st' = P(k, st)`` and stores ``k`` on the server masked under ``st'``.  A
search token releases only the newest state; the server unwinds the chain
backwards with ``P^-1`` and cancels adds against later deletes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Set, Tuple

from . import crypto
from .common import (ID_LEN, MAX_COUNTER, CounterOverflow, InvalidArgument, Op,
                     ProtocolCorruption, as_keyword, encode_id)
from .store import EncryptedStore

PAYLOAD_LEN = ID_LEN + 1 + crypto.BLOCK_LEN  # ind || op || k


@dataclass(frozen=True)
class FastUpdate:
    u: bytes
    e: bytes


@dataclass(frozen=True)
class FastToken:
    t_w: bytes
    st: bytes
    c: int


class FastClient:
    def __init__(self, key: Optional[bytes] = None, sigma=None, rng=None):
        self.rng = rng
        self.key = key if key is not None else crypto.random_block(rng)
        if len(self.key) != crypto.BLOCK_LEN:
            raise InvalidArgument("secret key must be 16 bytes")
        # keyword -> (st_c, c)
        self.sigma: Dict[bytes, Tuple[bytes, int]] = dict(sigma or {})

    def token(self, w: bytes) -> bytes:
        return crypto.prf(self.key, crypto.keyword_hash(w))

    def prepare_update(self, ind: int, w, op) -> Tuple[FastUpdate, Tuple[bytes, int]]:
        """Build the update message and the successor state without committing it."""
        w = as_keyword(w)
        op = Op.parse(op)
        ind_bytes = encode_id(ind)
        t_w = self.token(w)
        entry = self.sigma.get(w)
        if entry is None:
            st, c = crypto.random_block(self.rng), 0
        else:
            st, c = entry
        if c >= MAX_COUNTER:
            raise CounterOverflow(f"update counter exhausted for keyword {w!r}")
        k = crypto.random_block(self.rng)
        st_next = crypto.prp_forward(k, st)
        e = crypto.xor(ind_bytes + bytes([op]) + k, crypto.h2(t_w + st_next, PAYLOAD_LEN))
        u = crypto.h1(t_w + st_next)
        return FastUpdate(u, e), (st_next, c + 1)

    def commit(self, w, entry: Tuple[bytes, int]) -> None:
        self.sigma[as_keyword(w)] = entry

    def update(self, ind: int, w, op=Op.ADD) -> FastUpdate:
        msg, entry = self.prepare_update(ind, w, op)
        self.commit(w, entry)
        return msg

    def search_token(self, w) -> Optional[FastToken]:
        w = as_keyword(w)
        entry = self.sigma.get(w)
        if entry is None:
            return None
        st, c = entry
        return FastToken(self.token(w), st, c)


class FastServer:
    """Holds table ``T``.  ``h1``/``h2`` are injectable so a simulator can program them."""

    def __init__(self, store: Optional[EncryptedStore] = None,
                 h1: Callable = crypto.h1, h2: Callable = crypto.h2):
        self.store = store if store is not None else EncryptedStore.for_fast()
        self.h1 = h1
        self.h2 = h2
        self.last_addresses: List[bytes] = []

    @property
    def table(self):
        return self.store.table("T")

    def apply(self, msg: FastUpdate) -> None:
        if len(msg.u) != crypto.ADDR_LEN or len(msg.e) != PAYLOAD_LEN:
            raise InvalidArgument("malformed FAST update")
        self.table.put(msg.u, msg.e)

    def search(self, token: FastToken) -> Set[int]:
        table = self.table
        ids: Set[int] = set()
        deleted: Set[int] = set()
        addresses = []
        st = token.st
        for i in range(token.c, 0, -1):
            u = self.h1(token.t_w + st)
            addresses.append(u)
            e = table.get(u)
            if e is None:
                raise ProtocolCorruption(f"missing index entry for update {i} of {token.c}")
            plain = crypto.xor(e, self.h2(token.t_w + st, PAYLOAD_LEN))
            ind = int.from_bytes(plain[:ID_LEN], "big")
            op = plain[ID_LEN]
            k = plain[ID_LEN + 1:]
            if op == Op.DEL:
                deleted.add(ind)
            elif op == Op.ADD:
                if ind in deleted:
                    deleted.discard(ind)
                else:
                    ids.add(ind)
            else:
                raise ProtocolCorruption(f"invalid op byte {op:#x} in update {i}")
            st = crypto.prp_inverse(k, st)
        self.last_addresses = addresses
        return ids


def fast_setup(rng=None) -> Tuple[FastClient, FastServer]:
    return FastClient(rng=rng), FastServer()
