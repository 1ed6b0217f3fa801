"""Software frame renderer: an enlarged low-resolution pass beneath a shrunk
high-resolution pass, with unbuffered high-resolution tiles left transparent
so the low-resolution image shows through while detail streams in.

Tiles are sampled through render leases: pixels are sampled first and the
lease validated afterwards, so a slot recycled mid-frame contributes nothing
(the tile is simply unbuffered for this frame). Magnified tiles use bilinear
sampling on the base image; minified tiles blend the two mip levels bounding
the reduction factor, linearly in log2 scale.

Rendering is deterministic: the same view state and the same set of validated
leases produce a byte-identical framebuffer.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from tilestream.device import SlotPool
from tilestream.pyramid import (
    TILE_EDGE,
    LayerInfo,
    TileAddress,
    Viewport,
    select_layers,
)

DEFAULT_BACKGROUND = (128, 128, 128, 255)


@dataclass
class Framebuffer:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 4) uint8
    frame_index: int
    started_at: float
    finished_at: float


def _bilinear(img: np.ndarray, ty: np.ndarray, tx: np.ndarray) -> np.ndarray:
    """Bilinear sample of (M, M, 4) uint8 at texel coords (clamped to edge).

    ``ty``/``tx`` are column vectors broadcast into a block: the result is
    (len(ty), len(tx), 4) float64. Integral coordinates (the 1:1 navigation
    case) short-circuit to a plain gather - the blend weights are all zero,
    so the result is bit-identical to the full formula.
    """
    edge = img.shape[0]
    cy = np.clip(ty, 0.0, float(edge - 1))
    cx = np.clip(tx, 0.0, float(edge - 1))
    iy0 = np.floor(cy).astype(np.int64)
    ix0 = np.floor(cx).astype(np.int64)
    flat = img.reshape(-1, 4)
    idx0 = iy0[:, None] * edge + ix0[None, :]
    fy_line = cy - iy0
    fx_line = cx - ix0
    if not fy_line.any() and not fx_line.any():
        return flat[idx0].astype(np.float64)
    fy = fy_line[:, None, None]
    fx = fx_line[None, :, None]
    iy1 = np.minimum(iy0 + 1, edge - 1)
    ix1 = np.minimum(ix0 + 1, edge - 1)
    dx = (ix1 - ix0)[None, :]
    drow = (iy1 - iy0)[:, None] * edge
    p00 = flat[idx0].astype(np.float64)
    p01 = flat[idx0 + dx].astype(np.float64)
    p10 = flat[idx0 + drow].astype(np.float64)
    p11 = flat[idx0 + drow + dx].astype(np.float64)
    a = p00 + fx * (p01 - p00)
    b = p10 + fx * (p11 - p10)
    return a + fy * (b - a)


def _sample_block(
    base: np.ndarray,
    mips: list[np.ndarray],
    ty: np.ndarray,
    tx: np.ndarray,
    scale: float,
) -> np.ndarray:
    """Sample a tile at base-texel coords for an on-screen scale factor.

    scale >= 1 (magnification): bilinear on the base image. scale < 1
    (minification): blend the mip levels k and k+1 bounding 1/scale by the
    log2 fraction; below the last mip the last level is used alone. Level-k
    texel m sits at base coordinate m * 2**k, so level coords are t / 2**k.
    """
    if scale >= 1.0:
        out = _bilinear(base, ty, tx)
    else:
        levels = [base] + list(mips)
        f = math.log2(1.0 / scale)
        k = min(int(math.floor(f)), len(levels) - 1)
        w = min(f - k, 1.0) if k < len(levels) - 1 else 0.0
        vk = _bilinear(levels[k], ty / float(2**k), tx / float(2**k))
        if w == 0.0:
            out = vk
        else:
            vk1 = _bilinear(levels[k + 1], ty / float(2 ** (k + 1)), tx / float(2 ** (k + 1)))
            out = vk + w * (vk1 - vk)
    return np.rint(out).astype(np.uint8)


def sample_tile(
    base: np.ndarray,
    mips: list[np.ndarray],
    local_x: float,
    local_y: float,
    scale: float,
) -> tuple[int, int, int, int]:
    """Sample one RGBA value from a tile's storage at local texel coords."""
    if not (0 <= local_x < TILE_EDGE and 0 <= local_y < TILE_EDGE):
        raise ValueError("local coordinates must lie within the tile")
    block = _sample_block(base, mips, np.array([local_y]), np.array([local_x]), scale)
    return tuple(int(v) for v in block[0, 0])


def _axis_mapping(origin: float, screen_px: int, zoom: float, downsample: float):
    """Per-destination-pixel layer coords, tile indices, and local texels."""
    centers = (origin + (np.arange(screen_px) + 0.5) / zoom) / downsample
    tiles = np.floor(centers / TILE_EDGE).astype(np.int64)
    local = centers - tiles * TILE_EDGE - 0.5
    return tiles, local


def _runs(tiles: np.ndarray):
    """Contiguous runs of equal tile index: yields (tile, start, stop)."""
    if tiles.size == 0:
        return
    boundaries = np.flatnonzero(np.diff(tiles)) + 1
    starts = np.concatenate(([0], boundaries))
    stops = np.concatenate((boundaries, [tiles.size]))
    for s, e in zip(starts, stops):
        yield int(tiles[s]), int(s), int(e)


def _draw_layer(
    fb: np.ndarray,
    view: Viewport,
    layer: LayerInfo,
    pool: SlotPool,
    mask: np.ndarray | None,
    record_mask: np.ndarray | None,
) -> None:
    """Draw every leased, validated tile of one layer into the framebuffer.

    ``mask`` marks pixels already owned by a higher pass (skipped);
    ``record_mask`` is set for pixels this pass writes.
    """
    scale = view.zoom * layer.downsample
    cols, lx = _axis_mapping(view.origin_x, view.width_scr, view.zoom, layer.downsample)
    rows, ly = _axis_mapping(view.origin_y, view.height_scr, view.zoom, layer.downsample)
    for row, ry0, ry1 in _runs(rows):
        if not 0 <= row < layer.tiles_y:
            continue
        for col, rx0, rx1 in _runs(cols):
            if not 0 <= col < layer.tiles_x:
                continue
            addr = TileAddress(layer.index, col, row)
            lease = pool.acquire_for_render(addr)
            if lease is None:
                continue
            block = _sample_block(
                pool.base[lease.slot_index],
                [m[lease.slot_index] for m in pool.mips],
                ly[ry0:ry1],
                lx[rx0:rx1],
                scale,
            )
            ok = pool.validate(lease)
            pool.release(lease)
            if not ok:
                continue  # recycled mid-frame: discard sampled pixels
            if mask is None:
                fb[ry0:ry1, rx0:rx1] = block
            else:
                hole = ~mask[ry0:ry1, rx0:rx1]
                fb[ry0:ry1, rx0:rx1][hole] = block[hole]
            if record_mask is not None:
                record_mask[ry0:ry1, rx0:rx1] = True


def render_frame(
    view: Viewport,
    layers: list[LayerInfo],
    pool: SlotPool,
    *,
    background: tuple[int, int, int, int] = DEFAULT_BACKGROUND,
    lr_skip: bool = False,
    frame_index: int = 0,
    clock=time.perf_counter,
) -> Framebuffer:
    """Render one frame: background, enlarged pass, then shrunk pass on top.

    With ``lr_skip`` the enlarged pass skips pixels already covered by a
    validated shrunk tile (byte-identical output, less sampling work).
    """
    started = clock()
    fb = np.empty((view.height_scr, view.width_scr, 4), np.uint8)
    fb[:] = background
    pair = select_layers(view.zoom, layers)
    if lr_skip:
        hr_mask = np.zeros(fb.shape[:2], dtype=bool)
        if pair.hr is not None:
            _draw_layer(fb, view, layers[pair.hr], pool, None, hr_mask)
        if pair.lr is not None:
            _draw_layer(fb, view, layers[pair.lr], pool, hr_mask, None)
    else:
        if pair.lr is not None:
            _draw_layer(fb, view, layers[pair.lr], pool, None, None)
        if pair.hr is not None:
            _draw_layer(fb, view, layers[pair.hr], pool, None, None)
    finished = clock()
    return Framebuffer(
        width=view.width_scr,
        height=view.height_scr,
        pixels=fb,
        frame_index=frame_index,
        started_at=started,
        finished_at=finished,
    )


class FramePacer:
    """Fixed-cadence frame scheduler with catch-up skipping.

    ``wait_for_tick`` blocks until the next slot and returns its scheduled
    time; when rendering overruns, missed slots are skipped (recorded in
    ``skipped``) rather than queued, so no tick ever produces two frames.
    """

    def __init__(self, target_hz: int, clock=time.perf_counter, sleep=time.sleep):
        if target_hz not in (30, 60, 120):
            raise ValueError("target_hz must be 30, 60, or 120")
        self.target_hz = target_hz
        self.period = 1.0 / target_hz
        self.skipped = 0
        self.ticks = 0
        self._clock = clock
        self._sleep = sleep
        self._next: float | None = None

    def wait_for_tick(self) -> float:
        now = self._clock()
        if self._next is None:
            self._next = now
        while now < self._next:
            self._sleep(min(self._next - now, 0.002))
            now = self._clock()
        tick = self._next
        self._next += self.period
        if now >= self._next:
            missed = math.ceil((now - self._next) / self.period + 1e-9)
            missed = max(1, missed)
            self._next += missed * self.period
            self.skipped += missed
        self.ticks += 1
        return tick
