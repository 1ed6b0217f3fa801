"""Rapid tile buffering: stateless work models, prioritized micro-transactions,
and the pull-style scheduler loop that binds cache, slot pool, and
reduction-enhancement together.

Each pass the scheduler rebuilds its model of pending work from shared state
(it is never told what to do by upstream threads), forwards uncached tiles to
the loader, then drains bounded micro-transactions of immediately available
tiles: enlarged-layer (LR) tiles first in FIFO order, then shrunk-layer (HR)
tiles in LIFO order so the most recently modeled detail wins during rapid
movement. Completion raises a payload-free change signal; waiters re-derive
their own work, so a stale signal is harmless and a latched one is never lost.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from tilestream.cache_loader import PRIORITY_HIGH, PRIORITY_LOW, LoadRequest, TileCache
from tilestream.container import TILE_BYTES
from tilestream.device import SlotPool
from tilestream.metrics import (
    LAYER_CLASS_HR,
    LAYER_CLASS_LR,
    MetricsRecorder,
    TransactionRecord,
)
from tilestream.pyramid import (
    LayerInfo,
    TileAddress,
    Viewport,
    buffer_region,
    select_layers,
    visible_tiles,
)

DEFAULT_TXN_TILES = 16


class ChangeSignal:
    """Latched wake-up: a notification raised while the consumer is running
    is remembered, so re-checking work after a wait can never lose an event."""

    def __init__(self):
        self._cond = threading.Condition()
        self._raised = False

    def notify(self) -> None:
        with self._cond:
            self._raised = True
            self._cond.notify_all()

    def wait(self, timeout: float | None = None) -> bool:
        with self._cond:
            if not self._raised:
                self._cond.wait(timeout)
            raised = self._raised
            self._raised = False
            return raised


@dataclass
class BufferModel:
    """One pass's statelessly derived picture of pending buffering work."""

    epoch: int
    view: Viewport
    lr_layer: int | None
    hr_layer: int | None
    lr_field: set = field(default_factory=set)
    hr_field: set = field(default_factory=set)
    lr_region: set = field(default_factory=set)
    hr_region: set = field(default_factory=set)
    lr_pending: list = field(default_factory=list)   # cached, unmapped (FIFO)
    hr_pending: list = field(default_factory=list)   # cached, unmapped (LIFO)
    lr_missing: list = field(default_factory=list)   # not cached -> loader
    hr_missing: list = field(default_factory=list)
    purge: set = field(default_factory=set)          # mapped outside regions

    @property
    def quiescent(self) -> bool:
        return not (self.lr_pending or self.hr_pending
                    or self.lr_missing or self.hr_missing or self.purge)


@dataclass(frozen=True)
class TxnTile:
    addr: TileAddress
    slot_index: int
    generation: int
    layer_class: str


@dataclass
class MicroTransaction:
    tiles: list[TxnTile]
    submitted_at: float
    completed_at: float = 0.0
    bytes: int = 0


def rebuild_model(
    view: Viewport,
    layers: list[LayerInfo],
    pool: SlotPool,
    cache: TileCache,
    radius: int,
    epoch: int,
) -> BufferModel:
    """Derive pending/missing/purge sets for the current view from scratch.

    In-field tiles are listed so both drain disciplines serve them before
    perimeter tiles: the LR queue is [field..., perimeter...] (FIFO pops the
    front), the HR stack is [perimeter..., field...] (LIFO pops the back).
    """
    pair = select_layers(view.zoom, layers)
    model = BufferModel(epoch=epoch, view=view, lr_layer=pair.lr, hr_layer=pair.hr)
    mapped = pool.mapped_addresses()
    cached = cache.cached_addresses()

    def classify(layer_idx, field_first: bool):
        layer = layers[layer_idx]
        field_tiles = visible_tiles(view, layer)
        region = buffer_region(field_tiles, radius, layer)
        perimeter = sorted(region - field_tiles)
        ordered = (sorted(field_tiles) + perimeter if field_first
                   else perimeter + sorted(field_tiles))
        pending = [a for a in ordered if a not in mapped and a in cached]
        missing = [a for a in ordered if a not in mapped and a not in cached]
        return field_tiles, region, pending, missing

    if pair.lr is not None:
        model.lr_field, model.lr_region, model.lr_pending, model.lr_missing = \
            classify(pair.lr, field_first=True)
    if pair.hr is not None:
        model.hr_field, model.hr_region, model.hr_pending, model.hr_missing = \
            classify(pair.hr, field_first=False)
    model.purge = mapped - model.lr_region - model.hr_region
    return model


def drain_microtransaction(
    model: BufferModel,
    pool: SlotPool,
    cache: TileCache,
    limit: int = DEFAULT_TXN_TILES,
    clock=time.perf_counter,
) -> MicroTransaction | None:
    """Claim up to ``limit`` immediately available tiles from the model.

    LR entries drain first (FIFO) and precede all HR entries in the
    transaction; HR entries drain LIFO. HR work is withheld entirely while
    any LR tile is still missing or pending, so the first tile published
    into a fresh field is always an LR tile when one was unbuffered. Returns
    None when nothing is claimable right now; never waits for loads.
    """
    tiles: list[TxnTile] = []
    exhausted = False

    def claim_from(pending: list, lifo: bool, layer_class: str) -> None:
        nonlocal exhausted
        while pending and len(tiles) < limit and not exhausted:
            addr = pending[-1] if lifo else pending[0]
            if not cache.contains(addr):
                # evicted since the model was built; reclassified next pass
                pending.pop(-1 if lifo else 0)
                continue
            claim = pool.claim_free_slot(addr)
            if claim is None:
                exhausted = True  # retried after purges free slots
                break
            pending.pop(-1 if lifo else 0)
            tiles.append(TxnTile(addr, claim.slot_index, claim.generation, layer_class))

    claim_from(model.lr_pending, lifo=False, layer_class=LAYER_CLASS_LR)
    lr_unsatisfied = bool(model.lr_pending or model.lr_missing)
    if not lr_unsatisfied and not exhausted:
        claim_from(model.hr_pending, lifo=True, layer_class=LAYER_CLASS_HR)
    if not tiles:
        return None
    return MicroTransaction(tiles=tiles, submitted_at=clock())


def execute(
    txn: MicroTransaction,
    pool: SlotPool,
    cache: TileCache,
    pipeline,
    recorder: MetricsRecorder | None = None,
    on_publish=None,
    signal: ChangeSignal | None = None,
    clock=time.perf_counter,
) -> int:
    """Copy, enhance, and publish every tile of one micro-transaction.

    A tile evicted between claim and copy returns its slot to FREE and
    re-enters the missing set on the next rebuild; the rest of the
    transaction proceeds. Returns the number of tiles published.
    """
    live: list[tuple[TxnTile, bytes]] = []
    for t in txn.tiles:
        entry = cache.fetch(t.addr)
        if entry is None:
            pool.abort_claim(t.slot_index, t.addr)
            continue
        live.append((t, entry.pixels))
    if live:
        refs = np.stack([
            np.frombuffer(pixels, np.uint8).reshape(256, 256, 4)
            for _, pixels in live
        ])
        mip_batches = pipeline.enhance_batch(refs)
        for i, (t, _) in enumerate(live):
            pool.base[t.slot_index][:] = refs[i]
            for lvl, batch in enumerate(mip_batches):
                pool.mips[lvl][t.slot_index][:] = batch[i]
            pool.publish(t.slot_index, t.addr)
            if on_publish is not None:
                on_publish(t.addr, t.layer_class, clock())
    txn.bytes = len(live) * TILE_BYTES
    txn.completed_at = clock()
    if recorder is not None:
        recorder.record_transaction(
            TransactionRecord(txn.submitted_at, txn.completed_at, len(live), txn.bytes)
        )
    if signal is not None:
        signal.notify()
    return len(live)


class Scheduler(threading.Thread):
    """The buffering thread: cycles rebuild -> request -> drain -> purge and
    parks on the change signal when a pass finds nothing to do."""

    def __init__(
        self,
        *,
        view_source,
        layers: list[LayerInfo],
        pool: SlotPool,
        cache: TileCache,
        pipeline,
        recorder: MetricsRecorder,
        signal: ChangeSignal,
        radius: int,
        txn_limit: int = DEFAULT_TXN_TILES,
        on_view_applied=None,
        on_publish=None,
        clock=time.perf_counter,
    ):
        super().__init__(name="tile-scheduler", daemon=True)
        self._view_source = view_source
        self._layers = layers
        self._pool = pool
        self._cache = cache
        self._pipeline = pipeline
        self._recorder = recorder
        self._signal = signal
        self._radius = radius
        self._txn_limit = txn_limit
        self._on_view_applied = on_view_applied
        self._on_publish = on_publish
        self._clock = clock
        self._stop_event = threading.Event()
        self.quiescent = threading.Event()
        self.quiescent_epoch = -1  # view epoch the last quiescent pass saw
        self.iterations = 0
        self.transactions = 0

    def stop(self) -> None:
        self._stop_event.set()
        self._signal.notify()
        self.join(timeout=10.0)

    def run(self) -> None:
        last_epoch = -1
        prev_view: Viewport | None = None
        while not self._stop_event.is_set():
            view, epoch = self._view_source()
            if view is None:
                # nothing to buffer until a view exists: vacuously quiescent
                self.quiescent_epoch = epoch
                self.quiescent.set()
                self._signal.wait(0.5)
                continue
            if epoch != last_epoch:
                self.quiescent.clear()
                if self._on_view_applied is not None:
                    self._on_view_applied(prev_view, view, self._clock())
                prev_view = view
                last_epoch = epoch

            model = rebuild_model(view, self._layers, self._pool, self._cache,
                                  self._radius, epoch)
            self._cache.retain_region(model.lr_region | model.hr_region)
            requests = [LoadRequest(a, PRIORITY_HIGH) for a in model.lr_missing]
            requests += [LoadRequest(a, PRIORITY_LOW) for a in model.hr_missing]
            if requests:
                self._cache.request_tiles(requests)

            while not self._stop_event.is_set():
                if self._view_source()[1] != epoch:
                    break  # view moved on; model is stale, rebuild
                txn = drain_microtransaction(model, self._pool, self._cache,
                                             self._txn_limit, self._clock)
                if txn is None:
                    break
                execute(txn, self._pool, self._cache, self._pipeline,
                        self._recorder, self._on_publish, self._signal, self._clock)
                self.transactions += 1

            if model.purge:
                self._pool.purge(model.purge)
                self._signal.notify()  # freed slots may unblock draining
            self.iterations += 1

            if self._view_source()[1] != epoch:
                continue  # fresh work already known; skip the park
            if model.quiescent:
                # nothing pending anywhere: park until something changes
                # (the timeout is a liveness backstop, not a polling cadence)
                self.quiescent_epoch = epoch
                self.quiescent.set()
                self._signal.wait(timeout=5.0)
            else:
                # loads in flight or pool pressure; the change signal wakes
                # us as soon as a tile lands or slots free up
                self._signal.wait(timeout=0.05)
