"""The assembled streaming engine: slide container, loader cache, slot pool,
reduction-enhancement pipeline, buffering scheduler, and frame renderer.

External threads interact through a coalescing view cell (latest command
wins per pass) and non-blocking queries; the scheduler and loader workers
coordinate through the change signal and the slot pool's guarded transitions.
"""

from __future__ import annotations

import math
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from tilestream import compositor
from tilestream.cache_loader import TileCache
from tilestream.container import Slide
from tilestream.device import SlotPool
from tilestream.metrics import (
    LAYER_CLASS_HR,
    LAYER_CLASS_LR,
    FovEvent,
    FrameSample,
    MetricsRecorder,
)
from tilestream.pyramid import (
    TILE_EDGE,
    LayerInfo,
    TileAddress,
    Viewport,
    buffer_region,
    fov_overlap,
    select_layers,
    visible_tiles,
)
from tilestream.rtbs import ChangeSignal, Scheduler
from tilestream.spd import EnhanceParams, ReductionPipeline


@dataclass(frozen=True)
class EngineConfig:
    perimeter_radius: int = 2
    txn_tiles: int = 16
    pool_size: int | None = None          # None: sized from the window
    cache_budget_bytes: int = 512 << 20
    sigma_base: float = 1.0
    beta: float = 2.0
    mip_levels: int = 3
    target_hz: int = 120
    loader_workers: int | None = None
    enhance_dtype: str = "float32"        # engine hot path; float64 available
    background: tuple[int, int, int, int] = (128, 128, 128, 255)
    # skip enlarged-layer sampling under covered detail cells; proven
    # byte-identical to the reference draw order by the compositor tests
    lr_skip: bool = True


def auto_pool_size(layers: list[LayerInfo], window: tuple[int, int], radius: int) -> int:
    """Slot count covering both layer fields plus perimeter, tripled for
    recycling slack, rounded up to a power of two."""
    w, h = window
    zoom = 1.0
    pair = select_layers(zoom, layers)
    total = 0
    for idx in (pair.hr, pair.lr):
        if idx is None:
            continue
        d = layers[idx].downsample
        cols = math.ceil(w / (TILE_EDGE * d / zoom)) + 1 + 2 * radius
        rows = math.ceil(h / (TILE_EDGE * d / zoom)) + 1 + 2 * radius
        total += cols * rows
    total = max(64, total * 3)
    return 1 << (total - 1).bit_length()


class ViewCell:
    """Latest-wins viewport command cell.

    Commands carry a client sequence number; between two scheduler passes at
    most one (the newest) is applied, regardless of how many arrived.
    """

    def __init__(self, initial: Viewport | None = None):
        self._lock = threading.Lock()
        self._view = initial
        self._epoch = 0 if initial is None else 1
        self._seq = -1

    def submit(self, view: Viewport, client_seq: int | None = None) -> bool:
        with self._lock:
            if client_seq is not None:
                if client_seq <= self._seq:
                    return False
                self._seq = client_seq
            self._view = view
            self._epoch += 1
            return True

    def current(self) -> tuple[Viewport | None, int]:
        with self._lock:
            return self._view, self._epoch

    def epoch(self) -> int:
        with self._lock:
            return self._epoch


@dataclass
class _PendingEvent:
    layer_class: str
    move_field_at: float
    fov_tiles: int
    overlap: bool
    remaining: set


@dataclass
class FieldRecord:
    """Per view-change bookkeeping used by priority audits."""

    move_field_at: float
    overlap: bool
    lr_unbuffered: int
    hr_unbuffered: int
    first_publish_class: str | None = None
    first_publish_at: float | None = None
    publishes: list = field(default_factory=list)


class FieldEventTracker:
    """Turns view applications plus publish notifications into FovEvents.

    Runs entirely on the scheduler thread: view application and publishes are
    serialized there, so no locking beyond the recorder's is needed.
    """

    def __init__(self, layers, radius, pool, recorder, keep_publishes=False):
        self._layers = layers
        self._radius = radius
        self._pool = pool
        self._recorder = recorder
        self._pending: list[_PendingEvent] = []
        self._keep_publishes = keep_publishes
        self.field_records: list[FieldRecord] = []

    def on_view_applied(self, prev: Viewport | None, view: Viewport, t: float) -> None:
        for ev in self._pending:  # abandoned by the newer view
            self._recorder.record_event(FovEvent(
                ev.layer_class, ev.move_field_at, t, ev.fov_tiles,
                ev.overlap, pre_buffered=False, abandoned=True,
            ))
        self._pending = []
        overlap = prev is not None and fov_overlap(prev, view)
        mapped = self._pool.mapped_addresses()
        pair = select_layers(view.zoom, self._layers)
        record = FieldRecord(move_field_at=t, overlap=overlap,
                             lr_unbuffered=0, hr_unbuffered=0)
        for layer_class, idx in ((LAYER_CLASS_LR, pair.lr), (LAYER_CLASS_HR, pair.hr)):
            if idx is None:
                continue
            layer = self._layers[idx]
            field_tiles = visible_tiles(view, layer)
            if not field_tiles:
                continue
            region = buffer_region(field_tiles, self._radius, layer)
            remaining = {a for a in field_tiles if a not in mapped}
            if layer_class == LAYER_CLASS_LR:
                record.lr_unbuffered = len(remaining)
            else:
                record.hr_unbuffered = len(remaining)
            if not remaining:
                self._recorder.record_event(FovEvent(
                    layer_class, t, t, len(region), overlap, pre_buffered=True,
                ))
            else:
                self._pending.append(_PendingEvent(
                    layer_class, t, len(region), overlap, remaining,
                ))
        self.field_records.append(record)

    def on_publish(self, addr: TileAddress, layer_class: str, t: float) -> None:
        if self.field_records:
            rec = self.field_records[-1]
            if rec.first_publish_class is None:
                rec.first_publish_class = layer_class
                rec.first_publish_at = t
            if self._keep_publishes:
                rec.publishes.append((addr, layer_class, t))
        done = []
        for ev in self._pending:
            if ev.layer_class == layer_class:
                ev.remaining.discard(addr)
                if not ev.remaining:
                    done.append(ev)
        for ev in done:
            self._pending.remove(ev)
            self._recorder.record_event(FovEvent(
                ev.layer_class, ev.move_field_at, t, ev.fov_tiles,
                ev.overlap, pre_buffered=False,
            ))


class Engine:
    """One open slide plus the full streaming thread set."""

    def __init__(
        self,
        slide: Slide | str | os.PathLike,
        config: EngineConfig = EngineConfig(),
        window: tuple[int, int] = (1280, 800),
        keep_publishes: bool = False,
    ):
        self.slide = slide if isinstance(slide, Slide) else Slide(slide)
        self.config = config
        self.window = window
        self.layers = self.slide.layers
        self.recorder = MetricsRecorder()
        self.signal = ChangeSignal()

        params = EnhanceParams(levels=config.mip_levels,
                               sigma_base=config.sigma_base, beta=config.beta)
        self.pipeline = ReductionPipeline(params, dtype=np.dtype(config.enhance_dtype))

        pool_size = config.pool_size or auto_pool_size(
            self.layers, window, config.perimeter_radius)
        self.pool = SlotPool(pool_size, self.pipeline.level_edges)

        self.tracker = FieldEventTracker(
            self.layers, config.perimeter_radius, self.pool, self.recorder,
            keep_publishes=keep_publishes)

        # no initial view: the first submitted command establishes the first
        # field (its move-field event then has no previous field to overlap)
        self.view_cell = ViewCell(None)

        self.cache = TileCache(
            read_fn=self.slide.read_tile,
            valid_fn=self._valid_addr,
            budget_bytes=config.cache_budget_bytes,
            workers=config.loader_workers,
            on_change=self.signal.notify,
        )
        self.scheduler = Scheduler(
            view_source=self.view_cell.current,
            layers=self.layers,
            pool=self.pool,
            cache=self.cache,
            pipeline=self.pipeline,
            recorder=self.recorder,
            signal=self.signal,
            radius=config.perimeter_radius,
            txn_limit=config.txn_tiles,
            on_view_applied=self.tracker.on_view_applied,
            on_publish=self.tracker.on_publish,
        )
        self._frame_counter = 0
        self._started = False

    # -- lifecycle -------------------------------------------------------

    def start(self) -> None:
        if not self._started:
            self.scheduler.start()
            self._started = True

    def stop(self) -> None:
        if self._started:
            self.scheduler.stop()
            self._started = False
        self.cache.stop()
        self.slide.close()

    def __enter__(self) -> "Engine":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- control ----------------------------------------------------------

    def submit_viewport(self, x: float, y: float, zoom: float,
                        client_seq: int | None = None) -> bool:
        """Queue a view change (latest sequence wins); wakes the scheduler."""
        view = Viewport(x, y, self.window[0], self.window[1], zoom)
        accepted = self.view_cell.submit(view, client_seq)
        if accepted:
            self.scheduler.quiescent.clear()
            self.signal.notify()
        return accepted

    def current_viewport(self) -> Viewport:
        view, _ = self.view_cell.current()
        return view

    def wait_quiescent(self, timeout: float = 10.0) -> bool:
        """Block until the scheduler has drained the *current* view: a stale
        quiescent flag from before the latest submit does not count."""
        deadline = time.perf_counter() + timeout
        while time.perf_counter() < deadline:
            if self.scheduler.quiescent_epoch == self.view_cell.epoch():
                return True
            self.scheduler.quiescent.wait(timeout=0.05)
        return False

    def _valid_addr(self, addr: TileAddress) -> bool:
        if not 0 <= addr.layer < len(self.layers):
            return False
        layer = self.layers[addr.layer]
        return 0 <= addr.col < layer.tiles_x and 0 <= addr.row < layer.tiles_y

    # -- rendering ---------------------------------------------------------

    def render_frame(self, view: Viewport | None = None) -> compositor.Framebuffer:
        if view is None:
            view = self.current_viewport()
        if view is None:
            raise ValueError("no viewport has been submitted yet")
        self._frame_counter += 1
        return compositor.render_frame(
            view, self.layers, self.pool,
            background=self.config.background,
            lr_skip=self.config.lr_skip,
            frame_index=self._frame_counter - 1,
        )

    def pool_occupancy(self) -> dict:
        return self.pool.occupancy()


class PacedRenderer(threading.Thread):
    """Render thread: draws the latest view at the paced cadence and records
    one FrameSample per frame. ``on_frame`` (if given) receives each
    framebuffer; ``gate`` (if given) pauses rendering while unset."""

    def __init__(self, engine: Engine, target_hz: int | None = None,
                 on_frame=None, gate: threading.Event | None = None):
        super().__init__(name="frame-renderer", daemon=True)
        self.engine = engine
        self.pacer = compositor.FramePacer(target_hz or engine.config.target_hz)
        self.on_frame = on_frame
        self.gate = gate
        self._stop_event = threading.Event()
        self.frames = 0

    def stop(self) -> None:
        self._stop_event.set()
        if self.gate is not None:
            self.gate.set()
        self.join(timeout=10.0)

    def run(self) -> None:
        while not self._stop_event.is_set():
            if self.gate is not None and not self.gate.wait(timeout=0.1):
                continue
            if self._stop_event.is_set():
                break
            if self.engine.current_viewport() is None:
                time.sleep(0.01)
                continue
            self.pacer.wait_for_tick()
            start = time.perf_counter()
            fb = self.engine.render_frame()
            end = time.perf_counter()
            self.engine.recorder.record_frame(FrameSample(
                frame_index=fb.frame_index, start=start, end=end,
                shader_time=end - start,
            ))
            self.frames += 1
            if self.on_frame is not None:
                self.on_frame(fb)
