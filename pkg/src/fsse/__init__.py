"""Forward-private searchable symmetric encryption: FAST and FASTIO."""

from .common import Op, Query
from .fast import FastClient, FastServer, FastToken, FastUpdate, fast_setup
from .fastio import IoClient, IoServer, IoToken, IoUpdate, io_setup
from .oracle import PlaintextIndex
from .store import EncryptedStore, IoMetrics

__all__ = [
    "Op", "Query",
    "FastClient", "FastServer", "FastToken", "FastUpdate", "fast_setup",
    "IoClient", "IoServer", "IoToken", "IoUpdate", "io_setup",
    "PlaintextIndex", "EncryptedStore", "IoMetrics",
]
