"""Binary framing for client/server messages and the client state file.

Frame: ``body length (4, BE) | tag (1) | body``.  The length covers the body
only, so an UPDATE_FAST frame is 4 + 1 + 32 + 25 = 62 bytes.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from typing import Dict, Tuple

from . import crypto
from .common import FsseError, ID_LEN, InvalidArgument
from .fast import PAYLOAD_LEN as FAST_PAYLOAD, FastToken, FastUpdate
from .fastio import PAYLOAD_LEN as IO_PAYLOAD, IoToken, IoUpdate

UPDATE_FAST = 0x01
UPDATE_IO = 0x02
SEARCH_FAST = 0x03
SEARCH_IO = 0x04
RESULT = 0x05
ACK = 0x06
ERROR = 0x07

HEADER = struct.Struct(">IB")
MAX_BODY = 1 << 28

# error codes carried in ERROR frames
ERR_SCHEME = 0x01
ERR_MALFORMED = 0x02
ERR_CORRUPTION = 0x03
ERR_INTEGRITY = 0x04
ERR_INTERNAL = 0x05


class WireError(FsseError):
    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Result:
    ids: Tuple[int, ...]

    @classmethod
    def of(cls, ids) -> "Result":
        return cls(tuple(sorted(ids)))


@dataclass(frozen=True)
class Ack:
    pass


@dataclass(frozen=True)
class Error:
    code: int
    message: str = ""


def _body(msg) -> Tuple[int, bytes]:
    if isinstance(msg, FastUpdate):
        return UPDATE_FAST, msg.u + msg.e
    if isinstance(msg, IoUpdate):
        return UPDATE_IO, msg.u + msg.e
    if isinstance(msg, FastToken):
        return SEARCH_FAST, msg.t_w + msg.st + struct.pack(">Q", msg.c)
    if isinstance(msg, IoToken):
        if msg.k_w is None:
            return SEARCH_IO, msg.t_w + b"\x00" + struct.pack(">Q", msg.c)
        return SEARCH_IO, msg.t_w + b"\x01" + msg.k_w + struct.pack(">Q", msg.c)
    if isinstance(msg, Result):
        return RESULT, struct.pack(">I", len(msg.ids)) + b"".join(
            struct.pack(">Q", i) for i in msg.ids)
    if isinstance(msg, Ack):
        return ACK, b""
    if isinstance(msg, Error):
        return ERROR, bytes([msg.code]) + msg.message.encode("utf-8")
    raise InvalidArgument(f"cannot encode {type(msg).__name__}")


def encode(msg) -> bytes:
    tag, body = _body(msg)
    return HEADER.pack(len(body), tag) + body


def _expect(tag: int, body: bytes, size: int) -> None:
    if len(body) != size:
        raise WireError(f"tag {tag:#04x}: body is {len(body)} bytes, expected {size}", HEADER.size)


def decode_body(tag: int, body: bytes):
    A, B = crypto.ADDR_LEN, crypto.BLOCK_LEN
    if tag == UPDATE_FAST:
        _expect(tag, body, A + FAST_PAYLOAD)
        return FastUpdate(body[:A], body[A:])
    if tag == UPDATE_IO:
        _expect(tag, body, A + IO_PAYLOAD)
        return IoUpdate(body[:A], body[A:])
    if tag == SEARCH_FAST:
        _expect(tag, body, 2 * B + 8)
        return FastToken(body[:B], body[B:2 * B], struct.unpack(">Q", body[2 * B:])[0])
    if tag == SEARCH_IO:
        if len(body) < B + 1:
            raise WireError("SEARCH_IO body too short", HEADER.size)
        flag = body[B]
        if flag == 0:
            _expect(tag, body, B + 1 + 8)
            c = struct.unpack(">Q", body[B + 1:])[0]
            k_w = None
        elif flag == 1:
            _expect(tag, body, 2 * B + 1 + 8)
            k_w = body[B + 1:2 * B + 1]
            c = struct.unpack(">Q", body[2 * B + 1:])[0]
        else:
            raise WireError(f"SEARCH_IO presence flag {flag} not in {{0, 1}}", HEADER.size + B)
        try:
            return IoToken(body[:B], k_w, c)
        except InvalidArgument as exc:
            raise WireError(str(exc), HEADER.size + B) from None
    if tag == RESULT:
        if len(body) < 4:
            raise WireError("RESULT body too short", HEADER.size)
        (count,) = struct.unpack(">I", body[:4])
        _expect(tag, body, 4 + ID_LEN * count)
        return Result(struct.unpack(f">{count}Q", body[4:]))
    if tag == ACK:
        _expect(tag, body, 0)
        return Ack()
    if tag == ERROR:
        if not body:
            raise WireError("ERROR body missing code", HEADER.size)
        return Error(body[0], body[1:].decode("utf-8", "replace"))
    raise WireError(f"unknown tag {tag:#04x}", 4)


def decode(data: bytes):
    """Decode exactly one frame; trailing bytes are an error."""
    if len(data) < HEADER.size:
        raise WireError("truncated frame header", len(data))
    length, tag = HEADER.unpack_from(data)
    end = HEADER.size + length
    if len(data) < end:
        raise WireError(f"truncated frame: need {end} bytes, have {len(data)}", len(data))
    if len(data) > end:
        raise WireError("trailing bytes after frame", end)
    return decode_body(tag, data[HEADER.size:end])


def _read_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise EOFError(f"connection closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def read_frame(sock) -> Tuple[int, bytes]:
    """Read one raw frame from a socket; returns ``(tag, body)``."""
    length, tag = HEADER.unpack(_read_exact(sock, HEADER.size))
    if length > MAX_BODY:
        raise WireError(f"frame body of {length} bytes exceeds limit", 0)
    return tag, _read_exact(sock, length)


# --- client state file -------------------------------------------------------

STATE_MAGIC = b"FSSE"
STATE_VERSION = 1
SCHEME_CODES = {"fast": 0, "fastio": 1}


class StateFileError(FsseError):
    pass


def encode_client_state(scheme: str, key: bytes, sigma: Dict[bytes, Tuple[bytes, int]]) -> bytes:
    out = bytearray(STATE_MAGIC)
    out += struct.pack(">BB", STATE_VERSION, SCHEME_CODES[scheme])
    out += key + struct.pack(">I", len(sigma))
    for w, (st, c) in sigma.items():
        out += struct.pack(">H", len(w)) + w + st + struct.pack(">Q", c)
    out += struct.pack(">I", zlib.crc32(out))
    return bytes(out)


def decode_client_state(data: bytes):
    """Inverse of :func:`encode_client_state`; returns ``(scheme, key, sigma)``."""
    if len(data) < 4 + 2 + 16 + 4 + 4 or data[:4] != STATE_MAGIC:
        raise StateFileError("not a client state file")
    (crc,) = struct.unpack(">I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise StateFileError("client state checksum mismatch")
    version, code = data[4], data[5]
    if version != STATE_VERSION:
        raise StateFileError(f"unsupported client state version {version}")
    schemes = {v: k for k, v in SCHEME_CODES.items()}
    if code not in schemes:
        raise StateFileError(f"unknown scheme code {code}")
    key = data[6:22]
    (count,) = struct.unpack(">I", data[22:26])
    pos, end = 26, len(data) - 4
    sigma = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack(">H", data[pos:pos + 2])
            pos += 2
            w = data[pos:pos + n]
            st = data[pos + n:pos + n + 16]
            (c,) = struct.unpack(">Q", data[pos + n + 16:pos + n + 24])
            pos += n + 24
            if pos > end:
                raise StateFileError("truncated client state")
            sigma[w] = (st, c)
    except struct.error:
        raise StateFileError("truncated client state") from None
    if pos != end:
        raise StateFileError("trailing bytes in client state")
    return schemes[code], key, sigma


def save_client_state(path, scheme: str, client) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_client_state(scheme, client.key, client.sigma))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_client_state(path):
    with open(path, "rb") as fh:
        return decode_client_state(fh.read())
