"""Short-term RAM cache of decoded tiles fed by a prioritized worker pool.

Downstream threads never wait on a load: ``request_tiles`` enqueues work and
returns, ``fetch`` answers from the cache or not at all, and workers announce
completions through a payload-free change signal. High-priority requests
(enlarged-layer tiles) always start decoding before low-priority ones.

Retention follows the current buffer region: entries outside it become
eviction candidates, queued loads for departed addresses are dropped at
decode start, and the cache trims to its byte budget by evicting the
least-recently-retained entry first.
"""

from __future__ import annotations

import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from tilestream.container import TILE_BYTES
from tilestream.pyramid import TileAddress

PRIORITY_HIGH = 0   # enlarged (LR) layer: needed to show anything at all
PRIORITY_LOW = 1    # shrunk (HR) layer: detail refinement

DEFAULT_BUDGET = 512 << 20


@dataclass(frozen=True)
class CacheEntry:
    addr: TileAddress
    pixels: bytes
    loaded_at: float


@dataclass(frozen=True)
class LoadRequest:
    addr: TileAddress
    priority: int
    requested_at: float = field(default_factory=time.perf_counter)


class TileCache:
    """Decoded-tile cache plus its loader worker pool.

    ``read_fn(addr) -> bytes`` performs the blocking read+decode;
    ``valid_fn(addr) -> bool`` guards against out-of-grid requests.
    ``on_change()`` is invoked (outside all locks) after each completed load.
    """

    def __init__(
        self,
        read_fn,
        valid_fn,
        budget_bytes: int = DEFAULT_BUDGET,
        workers: int | None = None,
        on_change=None,
        on_decode_start=None,
    ):
        self._read_fn = read_fn
        self._valid_fn = valid_fn
        self.budget_bytes = budget_bytes
        self._on_change = on_change
        self._on_decode_start = on_decode_start

        self._lock = threading.Lock()
        self._work = threading.Condition(self._lock)
        self._queues = {PRIORITY_HIGH: deque(), PRIORITY_LOW: deque()}
        self._inflight: set[TileAddress] = set()
        self._entries: dict[TileAddress, CacheEntry] = {}
        self._stamps: dict[TileAddress, int] = {}
        self._stamp_counter = 0
        self._region: frozenset[TileAddress] | None = None
        self._stopping = False

        self.loads = 0
        self.cancels = 0
        self.evictions = 0
        self.dropped_invalid = 0
        self.decode_errors = 0

        if workers is None:
            workers = max(2, (os.cpu_count() or 2) - 2)
        self._threads = [
            threading.Thread(target=self._worker, name=f"tile-loader-{i}", daemon=True)
            for i in range(max(1, workers))
        ]
        for t in self._threads:
            t.start()

    # -- request side ----------------------------------------------------

    def request_tiles(self, requests: list[LoadRequest]) -> None:
        """Enqueue loads, deduplicated against the cache and in-flight work.

        Never blocks on I/O; invalid addresses are dropped and counted.
        """
        with self._lock:
            queued = False
            for req in requests:
                if req.addr in self._entries or req.addr in self._inflight:
                    continue
                if not self._valid_fn(req.addr):
                    self.dropped_invalid += 1
                    continue
                self._inflight.add(req.addr)
                self._queues[req.priority].append(req)
                queued = True
            if queued:
                self._work.notify_all()

    def fetch(self, addr: TileAddress) -> CacheEntry | None:
        """The cached entry, or None; never waits."""
        with self._lock:
            return self._entries.get(addr)

    def contains(self, addr: TileAddress) -> bool:
        with self._lock:
            return addr in self._entries

    def cached_addresses(self) -> set[TileAddress]:
        """Snapshot of currently cached addresses (for model rebuilding)."""
        with self._lock:
            return set(self._entries)

    def retain_region(self, region) -> None:
        """Declare the set of addresses worth keeping.

        Entries outside become eviction candidates; queued loads for outside
        addresses are cancelled at decode start; the byte budget is enforced
        evicting least-recently-retained first.
        """
        with self._lock:
            self._region = frozenset(region)
            self._stamp_counter += 1
            stamp = self._stamp_counter
            for addr in self._region:
                if addr in self._entries:
                    self._stamps[addr] = stamp
            self._trim_locked()

    # -- internals ---------------------------------------------------------

    def _trim_locked(self) -> None:
        while len(self._entries) * TILE_BYTES > self.budget_bytes:
            victim = min(self._entries, key=lambda a: self._stamps[a])
            del self._entries[victim]
            del self._stamps[victim]
            self.evictions += 1

    def _worker(self) -> None:
        while True:
            with self._work:
                while not self._stopping and not (
                    self._queues[PRIORITY_HIGH] or self._queues[PRIORITY_LOW]
                ):
                    self._work.wait()
                if self._stopping:
                    return
                if self._queues[PRIORITY_HIGH]:
                    req = self._queues[PRIORITY_HIGH].popleft()
                else:
                    req = self._queues[PRIORITY_LOW].popleft()
                # stale-drop: the region moved on before this decode started
                if self._region is not None and req.addr not in self._region:
                    self._inflight.discard(req.addr)
                    self.cancels += 1
                    continue
                if self._on_decode_start is not None:
                    self._on_decode_start(req)
            try:
                pixels = self._read_fn(req.addr)
                entry = CacheEntry(req.addr, pixels, time.perf_counter())
            except Exception:
                with self._lock:
                    self._inflight.discard(req.addr)
                    self.decode_errors += 1
                continue
            with self._lock:
                self._inflight.discard(req.addr)
                # publish-once: the entry is immutable after this point
                self._entries[req.addr] = entry
                self._stamps[req.addr] = self._stamp_counter
                self.loads += 1
                self._trim_locked()
            if self._on_change is not None:
                self._on_change()

    # -- lifecycle / observation --------------------------------------------

    def stop(self) -> None:
        with self._work:
            self._stopping = True
            self._work.notify_all()
        for t in self._threads:
            t.join(timeout=5.0)

    def wait_idle(self, timeout: float = 5.0) -> bool:
        """Test helper: block until no queued or in-flight work remains."""
        deadline = time.perf_counter() + timeout
        while time.perf_counter() < deadline:
            with self._lock:
                if not self._inflight and not any(self._queues.values()):
                    return True
            time.sleep(0.001)
        return False

    def stats(self) -> dict:
        with self._lock:
            return {
                "entries": len(self._entries),
                "bytes": len(self._entries) * TILE_BYTES,
                "loads": self.loads,
                "cancels": self.cancels,
                "evictions": self.evictions,
                "dropped_invalid": self.dropped_invalid,
                "decode_errors": self.decode_errors,
            }
