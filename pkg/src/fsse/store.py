"""Server-side encrypted index tables with access instrumentation and file persistence.

A store holds either the single FAST table ``T`` or the FASTIO pair
``T_e`` (pending updates) and ``T_c`` (cached result lists).  Every keyed
lookup that hits counts as one non-contiguous read; a cached id list is one
contiguous read no matter how long it is.

File layout (all integers big-endian)::

    "EDB1" | version (1) | table count (1)
    per table: name length (1) | name | key length (1) | entry count (4)
               per entry: key | value length (4) | value
    CRC-32 of everything between the header and the checksum (4)
"""

from __future__ import annotations

import dataclasses
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

from . import crypto
from .common import ID_LEN, FsseError, IntegrityError, InvalidArgument

MAGIC = b"EDB1"
VERSION = 1

# name -> (key length, fixed value length or None for id lists)
SCHEMAS = {
    "T": (crypto.ADDR_LEN, 25),
    "T_e": (crypto.ADDR_LEN, 9),
    "T_c": (crypto.BLOCK_LEN, None),
}
FAST_TABLES = ("T",)
FASTIO_TABLES = ("T_e", "T_c")


class StoreFormatError(FsseError):
    pass


@dataclass
class IoMetrics:
    non_contiguous_reads: int = 0
    cache_reads: int = 0
    bytes_read: int = 0
    bytes_stored: int = 0
    op_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def index_reads(self) -> int:
        """Reads of T / T_e, i.e. intervals excluding the cache."""
        return self.non_contiguous_reads - self.cache_reads


class KvTable:
    def __init__(self, name: str, store: "EncryptedStore"):
        if name not in SCHEMAS:
            raise InvalidArgument(f"unknown table {name!r}")
        self.name = name
        self.key_len, self.value_len = SCHEMAS[name]
        self.entries: Dict[bytes, bytes] = {}
        self._store = store

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: bytes) -> bool:
        return key in self.entries

    def _check_key(self, key: bytes) -> None:
        if len(key) != self.key_len:
            raise InvalidArgument(f"{self.name}: key must be {self.key_len} bytes, got {len(key)}")

    def _check_value(self, value: bytes) -> None:
        if self.value_len is None:
            if len(value) % ID_LEN:
                raise InvalidArgument(f"{self.name}: value length must be a multiple of {ID_LEN}")
        elif len(value) != self.value_len:
            raise InvalidArgument(f"{self.name}: value must be {self.value_len} bytes, got {len(value)}")

    def get(self, key: bytes) -> Optional[bytes]:
        self._check_key(key)
        value = self.entries.get(key)
        if value is not None:
            m = self._store.metrics
            m.non_contiguous_reads += 1
            m.bytes_read += len(value)
        return value

    def put(self, key: bytes, value: bytes) -> None:
        self._check_key(key)
        self._check_value(value)
        old = self.entries.get(key)
        if old is not None and self.value_len is not None:
            # a byte-identical re-put is a retried update; accept it silently
            if old == value:
                return
            raise IntegrityError(f"{self.name}: duplicate address {key.hex()}")
        self.entries[key] = bytes(value)
        self._store.metrics.bytes_stored += len(value) - (len(old) if old is not None else 0)

    def delete(self, key: bytes) -> bool:
        self._check_key(key)
        old = self.entries.pop(key, None)
        if old is None:
            return False
        self._store.metrics.bytes_stored -= len(old)
        return True


class EncryptedStore:
    def __init__(self, tables: Iterable[str]):
        self.metrics = IoMetrics()
        self.tables: Dict[str, KvTable] = {name: KvTable(name, self) for name in tables}

    @classmethod
    def for_fast(cls) -> "EncryptedStore":
        return cls(FAST_TABLES)

    @classmethod
    def for_fastio(cls) -> "EncryptedStore":
        return cls(FASTIO_TABLES)

    @property
    def scheme(self) -> str:
        return "fast" if "T" in self.tables else "fastio"

    def table(self, name: str) -> KvTable:
        try:
            return self.tables[name]
        except KeyError:
            raise InvalidArgument(f"store has no table {name!r}") from None

    def get(self, name: str, key: bytes) -> Optional[bytes]:
        return self.table(name).get(key)

    def put(self, name: str, key: bytes, value: bytes) -> None:
        self.table(name).put(key, value)

    def delete(self, name: str, key: bytes) -> bool:
        return self.table(name).delete(key)

    def cache_read(self, token: bytes) -> Optional[List[int]]:
        raw = self.table("T_c").get(token)
        if raw is None:
            return None
        self.metrics.cache_reads += 1
        return list(struct.unpack(f">{len(raw) // ID_LEN}Q", raw))

    def cache_write(self, token: bytes, ids: Iterable[int]) -> None:
        ordered = sorted(ids)
        raw = struct.pack(f">{len(ordered)}Q", *ordered)
        self.table("T_c").put(token, raw)

    def snapshot(self) -> IoMetrics:
        snap = dataclasses.replace(self.metrics, op_counts=crypto.ops_snapshot())
        return snap

    def reset_metrics(self) -> None:
        """Zero the read counters and crypto-op counters.  bytes_stored reflects residency and is kept."""
        self.metrics.non_contiguous_reads = 0
        self.metrics.cache_reads = 0
        self.metrics.bytes_read = 0
        crypto.ops_reset()

    def stored_bytes_recount(self) -> int:
        return sum(len(v) for t in self.tables.values() for v in t.entries.values())

    def to_bytes(self) -> bytes:
        body = bytearray()
        for name, table in self.tables.items():
            raw_name = name.encode("ascii")
            body += struct.pack(">B", len(raw_name)) + raw_name
            body += struct.pack(">BI", table.key_len, len(table.entries))
            for key, value in table.entries.items():
                body += key + struct.pack(">I", len(value)) + value
        header = MAGIC + struct.pack(">BB", VERSION, len(self.tables))
        return header + bytes(body) + struct.pack(">I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedStore":
        if len(data) < 10 or data[:4] != MAGIC:
            raise StoreFormatError("not an encrypted store file")
        version, ntables = data[4], data[5]
        if version != VERSION:
            raise StoreFormatError(f"unsupported store version {version}")
        body = data[6:-4]
        (crc,) = struct.unpack(">I", data[-4:])
        if zlib.crc32(body) != crc:
            raise StoreFormatError("checksum mismatch (truncated or corrupt file)")

        parsed = []
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(body):
                raise StoreFormatError(f"truncated store at body offset {pos}")
            chunk = body[pos:pos + n]
            pos += n
            return chunk

        for _ in range(ntables):
            name = take(take(1)[0]).decode("ascii", "replace")
            if name not in SCHEMAS:
                raise StoreFormatError(f"unknown table {name!r}")
            key_len, count = struct.unpack(">BI", take(5))
            if key_len != SCHEMAS[name][0]:
                raise StoreFormatError(f"table {name}: bad key length {key_len}")
            entries = []
            for _ in range(count):
                key = take(key_len)
                (vlen,) = struct.unpack(">I", take(4))
                entries.append((key, take(vlen)))
            parsed.append((name, entries))
        if pos != len(body):
            raise StoreFormatError("trailing bytes after last table")
        names = tuple(name for name, _ in parsed)
        if names not in (FAST_TABLES, FASTIO_TABLES):
            raise StoreFormatError(f"unexpected table set {names}")

        store = cls(names)
        for name, entries in parsed:
            table = store.tables[name]
            for key, value in entries:
                try:
                    table._check_value(value)
                except InvalidArgument as exc:
                    raise StoreFormatError(str(exc)) from None
                if key in table.entries:
                    raise StoreFormatError(f"table {name}: duplicate key")
                table.entries[key] = value
        store.metrics.bytes_stored = store.stored_bytes_recount()
        return store

    def persist(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "EncryptedStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
