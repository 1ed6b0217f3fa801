"""Performance metrics: frame-rate, buffer-rate, TeFOV, and TPT.

Definitions implemented here:

* frame-rate: inverse of the time between drawn frame starts.
* buffer-rate: bytes buffered-and-enhanced inside a frame window divided by
  that frame's duration, reported in GB/s (GB = 1e9 bytes).
* TeFOV (time to entirely-new field of view): time from a move-field command
  to the publication of every in-field tile, counted only for fields sharing
  zero pixels with the previous field and not already buffered.
* TPT (time per tile): TeFOV divided by the tile count of the field plus its
  buffering perimeter.

All timestamps are monotonic-clock seconds (``time.perf_counter``); wall
clock time never enters a metric. Summaries are median and 25th-75th
percentiles via the nearest-rank method.
"""

from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass, field

LAYER_CLASS_LR = "LR"
LAYER_CLASS_HR = "HR"

GB = 1e9


class InsufficientDataError(ValueError):
    """Raised when a metric has no samples to summarize."""


@dataclass
class FrameSample:
    frame_index: int
    start: float
    end: float
    shader_time: float
    bytes_completed: int = 0

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise ValueError("frame must end after it starts")
        if self.bytes_completed < 0:
            raise ValueError("bytes_completed must be >= 0")


@dataclass
class FovEvent:
    layer_class: str
    move_field_at: float
    completed_at: float
    fov_tiles: int
    overlap: bool
    pre_buffered: bool
    abandoned: bool = False

    @property
    def included(self) -> bool:
        return not (self.overlap or self.pre_buffered or self.abandoned)

    @property
    def tefov(self) -> float:
        return self.completed_at - self.move_field_at


@dataclass
class TransactionRecord:
    submitted_at: float
    completed_at: float
    tiles: int
    bytes: int


# ---------------------------------------------------------------------------
# summaries


def nearest_rank(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile on pre-sorted data (q in (0, 100])."""
    n = len(sorted_values)
    if n == 0:
        raise InsufficientDataError("no samples")
    rank = max(1, math.ceil(q / 100.0 * n))
    return sorted_values[rank - 1]


def summarize(values) -> dict:
    """{median, p25, p75, n} via nearest-rank percentiles."""
    vals = sorted(values)
    if not vals:
        raise InsufficientDataError("no samples")
    return {
        "median": nearest_rank(vals, 50),
        "p25": nearest_rank(vals, 25),
        "p75": nearest_rank(vals, 75),
        "n": len(vals),
    }


# ---------------------------------------------------------------------------
# metric computations


def frame_rate(samples: list[FrameSample]) -> tuple[list[float], dict]:
    """Per-frame FPS series (1 / start-to-start spacing) and its summary."""
    if len(samples) < 2:
        raise InsufficientDataError("frame-rate needs at least two samples")
    fps = [
        1.0 / (b.start - a.start)
        for a, b in zip(samples, samples[1:])
        if b.start > a.start
    ]
    if not fps:
        raise InsufficientDataError("no positive frame spacings")
    return fps, summarize(fps)


def buffer_rate(samples: list[FrameSample]) -> tuple[list[float], dict, int]:
    """Per-frame GB/s series, summary, and the count of skipped zero-duration
    frames. Rate_i = bytes completed in frame i's window / frame duration."""
    rates = []
    skipped = 0
    for s in samples:
        duration = s.end - s.start
        if duration <= 0:
            skipped += 1
            continue
        rates.append(s.bytes_completed / duration / GB)
    if not rates:
        raise InsufficientDataError("no frames with positive duration")
    return rates, summarize(rates), skipped


def tefov(events: list[FovEvent]) -> dict:
    """Per-layer-class TeFOV summary over included events only."""
    out = {}
    for cls in (LAYER_CLASS_LR, LAYER_CLASS_HR):
        durations = [e.tefov for e in events if e.layer_class == cls and e.included]
        if durations:
            out[cls] = summarize(durations)
    if not out:
        raise InsufficientDataError("no included move-field events")
    return out


def tpt(event: FovEvent) -> float | None:
    """Seconds per tile for one event; None when the tile count is zero
    (undefined, event dropped)."""
    if event.fov_tiles <= 0:
        return None
    return event.tefov / event.fov_tiles


def tpt_summary(events: list[FovEvent]) -> dict:
    out = {}
    for cls in (LAYER_CLASS_LR, LAYER_CLASS_HR):
        values = [
            t for e in events if e.layer_class == cls and e.included
            if (t := tpt(e)) is not None
        ]
        if values:
            out[cls] = summarize(values)
    if not out:
        raise InsufficientDataError("no included move-field events")
    return out


def bitrate_from_tpt(tpt_seconds: float, bytes_per_tile: int) -> float:
    """Bytes per second implied by a per-tile duration."""
    if tpt_seconds <= 0:
        raise ValueError("time per tile must be positive")
    return bytes_per_tile / tpt_seconds


def attribute_bytes(samples: list[FrameSample], txns: list[TransactionRecord]) -> None:
    """Assign each transaction's bytes to the frame window it completed in.

    Window i is (start_{i-1}, start_i]; completions before the first frame go
    to the first window and ones after the last frame start to the last, so
    the total is conserved exactly.
    """
    if not samples:
        return
    for s in samples:
        s.bytes_completed = 0
    starts = [s.start for s in samples]
    for txn in txns:
        idx = _bisect_left(starts, txn.completed_at)
        if idx >= len(samples):
            idx = len(samples) - 1
        samples[idx].bytes_completed += txn.bytes


def _bisect_left(values: list[float], x: float) -> int:
    lo, hi = 0, len(values)
    while lo < hi:
        mid = (lo + hi) // 2
        if values[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# recording


class MetricsRecorder:
    """Non-blocking append sink for engine threads; aggregate offline."""

    def __init__(self):
        self._lock = threading.Lock()
        self.frames: list[FrameSample] = []
        self.events: list[FovEvent] = []
        self.transactions: list[TransactionRecord] = []

    def record_frame(self, sample: FrameSample) -> None:
        with self._lock:
            self.frames.append(sample)

    def record_event(self, event: FovEvent) -> None:
        with self._lock:
            self.events.append(event)

    def record_transaction(self, txn: TransactionRecord) -> None:
        with self._lock:
            self.transactions.append(txn)

    def snapshot(self) -> tuple[list[FrameSample], list[FovEvent], list[TransactionRecord]]:
        with self._lock:
            return list(self.frames), list(self.events), list(self.transactions)


# ---------------------------------------------------------------------------
# persistence

FRAME_COLUMNS = ["frame_index", "start", "end", "shader_time", "bytes_completed"]
EVENT_COLUMNS = [
    "layer_class", "move_field_at", "completed_at", "fov_tiles",
    "overlap", "pre_buffered", "abandoned", "tefov_ms", "tpt_us",
]


def write_frames_csv(path, samples: list[FrameSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FRAME_COLUMNS)
        for s in samples:
            w.writerow([s.frame_index, f"{s.start:.9f}", f"{s.end:.9f}",
                        f"{s.shader_time:.9f}", s.bytes_completed])


def read_frames_csv(path) -> list[FrameSample]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FRAME_COLUMNS:
            raise ValueError(f"unexpected frame CSV schema: {reader.fieldnames}")
        for row in reader:
            out.append(FrameSample(
                frame_index=int(row["frame_index"]),
                start=float(row["start"]),
                end=float(row["end"]),
                shader_time=float(row["shader_time"]),
                bytes_completed=int(row["bytes_completed"]),
            ))
    return out


def write_events_csv(path, events: list[FovEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVENT_COLUMNS)
        for e in events:
            per_tile = tpt(e)
            w.writerow([
                e.layer_class, f"{e.move_field_at:.9f}", f"{e.completed_at:.9f}",
                e.fov_tiles, int(e.overlap), int(e.pre_buffered), int(e.abandoned),
                f"{e.tefov * 1e3:.6f}",
                "" if per_tile is None else f"{per_tile * 1e6:.6f}",
            ])


def read_events_csv(path) -> list[FovEvent]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != EVENT_COLUMNS:
            raise ValueError(f"unexpected event CSV schema: {reader.fieldnames}")
        for row in reader:
            out.append(FovEvent(
                layer_class=row["layer_class"],
                move_field_at=float(row["move_field_at"]),
                completed_at=float(row["completed_at"]),
                fov_tiles=int(row["fov_tiles"]),
                overlap=bool(int(row["overlap"])),
                pre_buffered=bool(int(row["pre_buffered"])),
                abandoned=bool(int(row["abandoned"])),
            ))
    return out


def build_summary(samples: list[FrameSample], events: list[FovEvent]) -> dict:
    """Machine-readable summary: {metric: {median, p25, p75, n}}."""
    out: dict = {}
    try:
        _, out["fps"] = frame_rate(samples)
    except InsufficientDataError:
        out["fps"] = None
    try:
        _, out["buffer_rate_gbps"], _ = buffer_rate(samples)
    except InsufficientDataError:
        out["buffer_rate_gbps"] = None
    try:
        out["tefov_s"] = tefov(events)
    except InsufficientDataError:
        out["tefov_s"] = None
    try:
        out["tpt_s"] = tpt_summary(events)
    except InsufficientDataError:
        out["tpt_s"] = None
    return out


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
