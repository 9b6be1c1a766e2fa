"""Shared value types and exceptions used across the schemes, store and harness."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

ID_LEN = 8
MAX_COUNTER = 2**64 - 1
MAX_ID = 2**64 - 1


class FsseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(FsseError, ValueError):
    pass


class IntegrityError(FsseError):
    """A table invariant was violated (duplicate address with different payload)."""


class ProtocolCorruption(FsseError):
    """Client and server state diverged: a derived address has no index entry."""


class CounterOverflow(FsseError):
    pass


class Op(enum.IntEnum):
    ADD = 0
    DEL = 1

    @classmethod
    def parse(cls, value) -> "Op":
        if isinstance(value, Op):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise InvalidArgument(f"unknown op {value!r}") from None
        try:
            return cls(value)
        except ValueError:
            raise InvalidArgument(f"invalid op byte {value!r}") from None


def encode_id(ind: int) -> bytes:
    if not 0 <= ind <= MAX_ID:
        raise InvalidArgument(f"document id {ind} out of 64-bit range")
    return ind.to_bytes(ID_LEN, "big")


def as_keyword(w) -> bytes:
    if isinstance(w, str):
        w = w.encode("utf-8")
    if not isinstance(w, (bytes, bytearray)):
        raise InvalidArgument(f"keyword must be str or bytes, got {type(w).__name__}")
    if not w:
        raise InvalidArgument("empty keyword")
    if len(w) > 0xFFFF:
        raise InvalidArgument("keyword longer than 65535 bytes")
    return bytes(w)


@dataclass(frozen=True)
class Query:
    """One trace record: an update ``(keyword, op, ind)`` or a search of ``keyword``."""

    kind: str
    keyword: str
    op: Optional[Op] = None
    ind: Optional[int] = None

    @classmethod
    def update(cls, keyword: str, ind: int, op=Op.ADD) -> "Query":
        return cls("update", keyword, Op.parse(op), ind)

    @classmethod
    def search(cls, keyword: str) -> "Query":
        return cls("search", keyword)

    @property
    def is_search(self) -> bool:
        return self.kind == "search"
