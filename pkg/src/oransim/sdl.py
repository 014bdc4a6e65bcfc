"""RIC database and the shared data layer (SDL) handles xApps use to reach it.

The store is an in-memory map from key to a short history of versioned byte
values. Puts on a key are serialized by a lock, so versions per key are
gap-free and strictly increasing no matter how many writers race.

Arrays are stored as bytes via :func:`pack_array` so the value a reader sees is
always exactly one writer's value.
"""

from __future__ import annotations

import itertools
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NotFound, SdlPermissionError

HISTORY_DEPTH = 16


@dataclass(frozen=True)
class RicDbEntry:
    key: str
    version: int
    timestamp_ms: float
    value: bytes


@dataclass(frozen=True, eq=False)
class SdlHandle:
    client: str
    can_read: bool = True
    can_write: bool = False
    _db: "RicDatabase" = field(default=None, repr=False)
    _token: int = field(default=-1, repr=False)


def _wall_ms() -> float:
    return time.perf_counter() * 1000.0


class RicDatabase:
    """Versioned key-value store with per-key history of ``history_depth`` entries."""

    def __init__(self, clock: Optional[Callable[[], float]] = None, history_depth: int = HISTORY_DEPTH):
        if history_depth < 1:
            raise ValueError("history_depth must be >= 1")
        self.clock = clock or _wall_ms
        self.history_depth = history_depth
        self._lock = threading.Lock()
        self._entries: dict[str, deque] = {}
        self._versions: dict[str, int] = {}
        self._issued: dict[int, SdlHandle] = {}
        self._tokens = itertools.count(1)

    def handle(self, client: str, read: bool = True, write: bool = False) -> SdlHandle:
        """Issue a capability handle. Only handles issued here are accepted."""
        with self._lock:
            token = next(self._tokens)
            h = SdlHandle(client, read, write, self, token)
            self._issued[token] = h
        return h

    def _check(self, h: SdlHandle, write: bool) -> None:
        if self._issued.get(h._token) is not h:
            raise SdlPermissionError(f"handle for {h.client!r} was not issued by this database")
        if write and not h.can_write:
            raise SdlPermissionError(f"{h.client!r} has no write capability")
        if not write and not h.can_read:
            raise SdlPermissionError(f"{h.client!r} has no read capability")

    def put(self, h: SdlHandle, key: str, value: bytes, expect_version: Optional[int] = None) -> Optional[int]:
        """Append a new version of ``key`` and return it.

        With ``expect_version`` the put only happens if the key's current
        version still equals it (compare-and-set); otherwise returns None.
        """
        self._check(h, write=True)
        value = bytes(value)
        with self._lock:
            current = self._versions.get(key, 0)
            if expect_version is not None and current != expect_version:
                return None
            version = current + 1
            self._versions[key] = version
            hist = self._entries.setdefault(key, deque(maxlen=self.history_depth))
            hist.append(RicDbEntry(key, version, self.clock(), value))
        return version

    def get_latest(self, h: SdlHandle, key: str) -> RicDbEntry:
        self._check(h, write=False)
        with self._lock:
            hist = self._entries.get(key)
            if not hist:
                raise NotFound(key)
            return hist[-1]

    def history(self, h: SdlHandle, key: str) -> list[RicDbEntry]:
        self._check(h, write=False)
        with self._lock:
            if key not in self._entries:
                raise NotFound(key)
            return list(self._entries[key])

    def latest_version(self, key: str) -> int:
        """Current version of ``key`` (0 if never written); scheduler bookkeeping."""
        with self._lock:
            return self._versions.get(key, 0)


def sdl_put(handle: SdlHandle, key: str, value: bytes, expect_version: Optional[int] = None) -> Optional[int]:
    return handle._db.put(handle, key, value, expect_version)


def sdl_get_latest(handle: SdlHandle, key: str) -> RicDbEntry:
    return handle._db.get_latest(handle, key)


# -- array values ------------------------------------------------------------------

def pack_array(arr: np.ndarray) -> bytes:
    """``ndim u8 | shape u32 x ndim | float64 LE data``."""
    a = np.asarray(arr, dtype="<f8")  # tobytes() is C-order; keeps 0-d arrays 0-d
    return struct.pack(f"<B{a.ndim}I", a.ndim, *a.shape) + a.tobytes()


def unpack_array(data: bytes) -> np.ndarray:
    ndim = data[0]
    shape = struct.unpack_from(f"<{ndim}I", data, 1)
    off = 1 + 4 * ndim
    n = int(np.prod(shape)) if ndim else 1
    if len(data) != off + 8 * n:
        raise ValueError("array payload size does not match its header")
    return np.frombuffer(data, dtype="<f8", offset=off).reshape(shape).astype(np.float64)
