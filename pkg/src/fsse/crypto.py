"""Symmetric primitives: keyword hash, PRF/PRP (AES-128), random oracles (SHA-256).

Every primitive bumps a counter in :data:`op_counts` so callers can assert
per-operation crypto budgets.  Keyword hashing is not counted.
"""

from __future__ import annotations

import hashlib
import os
import random
import threading
from collections import Counter
from functools import lru_cache

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .common import InvalidArgument

BLOCK_LEN = 16  # lambda = 128 bits
ADDR_LEN = 32   # full SHA-256 output

PREFIX_H = b"\x00"
PREFIX_H1 = b"\x01"
PREFIX_H2 = b"\x02"

OP_NAMES = ("prf", "prp", "prp_inv", "h1", "h2", "rand")

op_counts: Counter = Counter()

_TEST_MODE = os.environ.get("FSSE_TEST_MODE") == "1"


def enable_test_mode(enabled: bool = True) -> None:
    """Allow :class:`SeededRandom`.  Never call this in a deployment."""
    global _TEST_MODE
    _TEST_MODE = enabled


def ops_snapshot() -> dict:
    return {name: op_counts[name] for name in OP_NAMES}


def ops_reset() -> None:
    op_counts.clear()


def _check_block(name: str, value: bytes) -> None:
    if not isinstance(value, (bytes, bytearray)) or len(value) != BLOCK_LEN:
        raise InvalidArgument(f"{name} must be {BLOCK_LEN} bytes")


@lru_cache(maxsize=256)
def _cipher(key: bytes) -> Cipher:
    return Cipher(algorithms.AES(key), modes.ECB())


def _encrypt(key: bytes, block: bytes) -> bytes:
    return _cipher(bytes(key)).encryptor().update(bytes(block))


def _decrypt(key: bytes, block: bytes) -> bytes:
    return _cipher(bytes(key)).decryptor().update(bytes(block))


def keyword_hash(keyword: bytes) -> bytes:
    if not keyword:
        raise InvalidArgument("empty keyword")
    if len(keyword) > 0xFFFF:
        raise InvalidArgument("keyword longer than 65535 bytes")
    return hashlib.sha256(PREFIX_H + keyword).digest()[:BLOCK_LEN]


def prf(key: bytes, block: bytes) -> bytes:
    _check_block("key", key)
    _check_block("block", block)
    op_counts["prf"] += 1
    return _encrypt(key, block)


def prp_forward(key: bytes, st: bytes) -> bytes:
    _check_block("key", key)
    _check_block("state", st)
    op_counts["prp"] += 1
    return _encrypt(key, st)


def prp_inverse(key: bytes, st: bytes) -> bytes:
    _check_block("key", key)
    _check_block("state", st)
    op_counts["prp_inv"] += 1
    return _decrypt(key, st)


def h1(data: bytes) -> bytes:
    if not data:
        raise InvalidArgument("h1 input must be non-empty")
    op_counts["h1"] += 1
    return hashlib.sha256(PREFIX_H1 + data).digest()


def h2(data: bytes, out_len: int) -> bytes:
    if not 1 <= out_len <= 32:
        raise InvalidArgument(f"h2 output length {out_len} outside 1..32")
    op_counts["h2"] += 1
    return hashlib.sha256(PREFIX_H2 + data).digest()[:out_len]


def xor(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise InvalidArgument("xor operands differ in length")
    n = len(a)
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(n, "big")


class SystemRandom:
    """Blocks from the operating system CSPRNG."""

    def block(self) -> bytes:
        return os.urandom(BLOCK_LEN)


class SeededRandom:
    """Reproducible block source for tests and simulations.  Refused outside test mode."""

    def __init__(self, seed: int):
        if not _TEST_MODE:
            raise InvalidArgument("seeded randomness is only available in test mode")
        self._rng = random.Random(seed)
        self._lock = threading.Lock()

    def block(self) -> bytes:
        with self._lock:
            return self._rng.randbytes(BLOCK_LEN)


_default_source = SystemRandom()


def random_block(rng=None) -> bytes:
    op_counts["rand"] += 1
    out = (rng or _default_source).block()
    if len(out) != BLOCK_LEN:
        raise RuntimeError("randomness source returned a short block")
    return out
