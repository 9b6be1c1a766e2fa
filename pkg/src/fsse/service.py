"""TCP server loop and the networked client.

Requests from all connections are executed one at a time under a single
lock.  The client advances its keyword state only after the server has
acknowledged an update (or answered a search), so its persisted state is
never ahead of the server's index.
"""

from __future__ import annotations

import logging
import os
import socket
import socketserver
import threading
from typing import Optional, Set

from . import wire
from .common import (FsseError, IntegrityError, InvalidArgument, Op, ProtocolCorruption,
                     as_keyword)
from .fast import FastClient, FastServer, FastUpdate
from .fastio import IoClient, IoServer, IoUpdate
from .store import EncryptedStore

log = logging.getLogger(__name__)

SCHEMES = ("fast", "fastio")
_ACCEPTS = {
    "fast": (wire.UPDATE_FAST, wire.SEARCH_FAST),
    "fastio": (wire.UPDATE_IO, wire.SEARCH_IO),
}


class TransportError(FsseError):
    """The request may not have reached the server; retrying is safe."""


class ServerError(FsseError):
    def __init__(self, code: int, message: str):
        super().__init__(f"server error {code:#04x}: {message}")
        self.code = code


def parse_addr(addr: str):
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise InvalidArgument(f"endpoint must be HOST:PORT, got {addr!r}")
    return host or "127.0.0.1", int(port)


def make_server(scheme: str, store: Optional[EncryptedStore] = None):
    if scheme == "fast":
        return FastServer(store)
    if scheme == "fastio":
        return IoServer(store)
    raise InvalidArgument(f"unknown scheme {scheme!r}")


def make_client(scheme: str, **kwargs):
    if scheme == "fast":
        return FastClient(**kwargs)
    if scheme == "fastio":
        return IoClient(**kwargs)
    raise InvalidArgument(f"unknown scheme {scheme!r}")


class Dispatcher:
    """Executes decoded requests against one scheme server, strictly sequentially."""

    def __init__(self, scheme: str, store: Optional[EncryptedStore] = None):
        if scheme not in SCHEMES:
            raise InvalidArgument(f"unknown scheme {scheme!r}")
        self.scheme = scheme
        self.server = make_server(scheme, store)
        self.lock = threading.Lock()

    @property
    def store(self) -> EncryptedStore:
        return self.server.store

    def handle(self, tag: int, body: bytes):
        """Returns ``(response, keep_open)``."""
        if tag not in _ACCEPTS[self.scheme]:
            if tag in (wire.UPDATE_FAST, wire.UPDATE_IO, wire.SEARCH_FAST, wire.SEARCH_IO):
                return wire.Error(wire.ERR_SCHEME, f"{self.scheme} server cannot handle tag {tag:#04x}"), False
            return wire.Error(wire.ERR_MALFORMED, f"unexpected request tag {tag:#04x}"), False
        try:
            msg = wire.decode_body(tag, body)
        except wire.WireError as exc:
            return wire.Error(wire.ERR_MALFORMED, str(exc)), False
        with self.lock:
            try:
                if isinstance(msg, (FastUpdate, IoUpdate)):
                    self.server.apply(msg)
                    return wire.Ack(), True
                return wire.Result.of(self.server.search(msg)), True
            except ProtocolCorruption as exc:
                return wire.Error(wire.ERR_CORRUPTION, str(exc)), False
            except IntegrityError as exc:
                return wire.Error(wire.ERR_INTEGRITY, str(exc)), False


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        dispatcher: Dispatcher = self.server.dispatcher
        while True:
            try:
                tag, body = wire.read_frame(sock)
            except (EOFError, ConnectionError):
                return
            except wire.WireError as exc:
                sock.sendall(wire.encode(wire.Error(wire.ERR_MALFORMED, str(exc))))
                return
            try:
                response, keep_open = dispatcher.handle(tag, body)
            except Exception as exc:  # keep the listener alive on unexpected bugs
                log.exception("request failed")
                response, keep_open = wire.Error(wire.ERR_INTERNAL, str(exc)), False
            try:
                sock.sendall(wire.encode(response))
            except OSError:
                return
            if not keep_open:
                return


class _TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class SseServer:
    """A listening server; use :meth:`serve_forever` or :meth:`start` (background thread)."""

    def __init__(self, scheme: str, store: Optional[EncryptedStore] = None, addr: str = "127.0.0.1:0"):
        self.dispatcher = Dispatcher(scheme, store)
        self._tcp = _TcpServer(parse_addr(addr), _Handler)
        self._tcp.dispatcher = self.dispatcher
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> str:
        host, port = self._tcp.server_address[:2]
        return f"{host}:{port}"

    @property
    def store(self) -> EncryptedStore:
        return self.dispatcher.store

    def serve_forever(self) -> None:
        self._tcp.serve_forever(poll_interval=0.05)

    def start(self) -> "SseServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()


def serve(scheme: str, store: Optional[EncryptedStore], addr: str) -> None:
    SseServer(scheme, store, addr).serve_forever()


class RemoteClient:
    """Scheme client whose server lives across a socket.

    ``FSSE_STATE`` in the environment overrides ``state_path``.  When a state
    path is set the client state is loaded from it (if present) and rewritten
    after every acknowledged mutation.
    """

    def __init__(self, scheme: str, addr: str, client=None, state_path=None,
                 rng=None, timeout: float = 10.0):
        if scheme not in SCHEMES:
            raise InvalidArgument(f"unknown scheme {scheme!r}")
        self.scheme = scheme
        self.addr = addr
        self.timeout = timeout
        self.state_path = os.environ.get("FSSE_STATE") or state_path
        if client is None and self.state_path and os.path.exists(self.state_path):
            stored_scheme, key, sigma = wire.load_client_state(self.state_path)
            if stored_scheme != scheme:
                raise InvalidArgument(f"state file is for {stored_scheme}, not {scheme}")
            client = make_client(scheme, key=key, sigma=sigma, rng=rng)
        self.client = client if client is not None else make_client(scheme, rng=rng)
        self._sock: Optional[socket.socket] = None
        self._pending = None  # (keyword, message, successor entry) awaiting ACK

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                sock = socket.create_connection(parse_addr(self.addr), timeout=self.timeout)
            except OSError as exc:
                raise TransportError(f"cannot reach {self.addr}: {exc}") from exc
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._sock = sock
        return self._sock

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _roundtrip(self, msg):
        sock = self._connect()
        try:
            sock.sendall(wire.encode(msg))
            tag, body = wire.read_frame(sock)
        except (OSError, EOFError) as exc:
            self.close()
            raise TransportError(f"request to {self.addr} failed: {exc}") from exc
        reply = wire.decode_body(tag, body)
        if isinstance(reply, wire.Error):
            self.close()
            raise ServerError(reply.code, reply.message)
        return reply

    def _persist(self) -> None:
        if self.state_path:
            wire.save_client_state(self.state_path, self.scheme, self.client)

    def flush_pending(self) -> None:
        """Resend an update whose acknowledgement was never received (same bytes)."""
        if self._pending is None:
            return
        w, msg, entry = self._pending
        try:
            reply = self._roundtrip(msg)
        except ServerError:
            # the server refused the message; resending it cannot succeed
            self._pending = None
            raise
        if not isinstance(reply, wire.Ack):
            raise ServerError(wire.ERR_MALFORMED, f"expected ACK, got {type(reply).__name__}")
        self.client.commit(w, entry)
        self._pending = None
        self._persist()

    def update(self, ind: int, w, op=Op.ADD) -> None:
        self.flush_pending()
        msg, entry = self.client.prepare_update(ind, w, op)
        self._pending = (w, msg, entry)
        self.flush_pending()

    def search(self, w) -> Optional[Set[int]]:
        """Result ids, or ``None`` when the keyword was never updated (no traffic)."""
        self.flush_pending()
        if self.scheme == "fast":
            token = self.client.search_token(w)
            if token is None:
                return None
            reply = self._roundtrip(token)
            entry = None
        else:
            prepared = self.client.prepare_search(w)
            if prepared is None:
                return None
            token, entry = prepared
            reply = self._roundtrip(token)
        if not isinstance(reply, wire.Result):
            raise ServerError(wire.ERR_MALFORMED, f"expected RESULT, got {type(reply).__name__}")
        if entry is not None and entry != self.client.sigma.get(as_keyword(w)):
            self.client.commit(w, entry)
            self._persist()
        return set(reply.ids)
