"""Deterministic tiled-pyramid container and synthetic slide generation.

File layout (all integers little-endian):

    magic            8 bytes  b"TILESTRM"
    version          u16      currently 1
    layer_count      u8
    tile_edge        u16      always 256
    layer records    layer_count x { downsample f64, width_px u32,
                                     height_px u32, tile_table_offset u64 }
    tile tables      per layer, row-major: { offset u64, length u32, codec u8 }
    tile payloads    raw RGBA8 (codec 0) or raw-deflate RGBA8 (codec 1, RFC 1951)

Every decoded tile payload is exactly 256*256*4 = 262,144 bytes; edge tiles
are padded to the full square with opaque white. Lower layers of a synthetic
slide are exact area averages (box filter) of layer 0, which gives an analytic
oracle for cross-layer checks.
"""

from __future__ import annotations

import math
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from tilestream.pyramid import TILE_EDGE, LayerInfo, TileAddress, build_layers

MAGIC = b"TILESTRM"
VERSION = 1
TILE_BYTES = TILE_EDGE * TILE_EDGE * 4

CODEC_RAW = 0
CODEC_DEFLATE = 1

_HEADER_FMT = "<8sHBH"
_LAYER_FMT = "<dIIQ"
_RECORD_FMT = "<QIB"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)
_LAYER_SIZE = struct.calcsize(_LAYER_FMT)
_RECORD_SIZE = struct.calcsize(_RECORD_FMT)

PATTERNS = ("checker", "disks", "gradient-text", "mixed", "constant")


class ContainerFormatError(ValueError):
    """Malformed container structure (magic, version, layer table)."""


class TileDecodeError(RuntimeError):
    """A tile payload failed to decode; identifies the offending tile."""

    def __init__(self, addr: TileAddress, reason: str):
        super().__init__(f"tile {addr}: {reason}")
        self.addr = addr


@dataclass(frozen=True)
class TileRecord:
    offset: int
    length: int
    codec: int


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic synthetic slide."""

    seed: int
    width_px: int
    height_px: int
    layer_downsamples: tuple[float, ...]
    pattern: str = "mixed"

    def __post_init__(self) -> None:
        if self.width_px < TILE_EDGE or self.height_px < TILE_EDGE:
            raise ValueError("slide extent must be at least one tile")
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        for d in self.layer_downsamples:
            if d != int(d) or d < 1:
                raise ValueError("synthetic downsamples must be integers >= 1")
        build_layers(self.width_px, self.height_px, list(self.layer_downsamples))


def _encode(pixels: bytes, codec: int) -> bytes:
    if len(pixels) != TILE_BYTES:
        raise ValueError(f"tile payload must be {TILE_BYTES} bytes, got {len(pixels)}")
    if codec == CODEC_RAW:
        return pixels
    if codec == CODEC_DEFLATE:
        z = zlib.compressobj(6, zlib.DEFLATED, -15)
        return z.compress(pixels) + z.flush()
    raise ValueError(f"unknown codec {codec}")


def _decode(payload: bytes, codec: int, addr: TileAddress) -> bytes:
    if codec == CODEC_RAW:
        if len(payload) != TILE_BYTES:
            raise TileDecodeError(addr, f"raw payload is {len(payload)} bytes")
        return payload
    if codec == CODEC_DEFLATE:
        try:
            out = zlib.decompressobj(-15).decompress(payload, TILE_BYTES + 1)
        except zlib.error as exc:
            raise TileDecodeError(addr, f"inflate failed: {exc}") from exc
        if len(out) != TILE_BYTES:
            raise TileDecodeError(addr, f"inflated to {len(out)} bytes")
        return out
    raise TileDecodeError(addr, f"unknown codec {codec}")


class SlideWriter:
    """Single-writer builder for a container file.

    Tiles may be written in any order; unwritten tiles are rejected on read.
    """

    def __init__(self, path: str | os.PathLike, layers: list[LayerInfo]):
        self._layers = list(layers)
        self._fh = open(path, "wb")
        self._tables: list[list[TileRecord | None]] = [
            [None] * (l.tiles_x * l.tiles_y) for l in layers
        ]
        self._table_offsets: list[int] = []
        pos = _HEADER_SIZE + len(layers) * _LAYER_SIZE
        for table in self._tables:
            self._table_offsets.append(pos)
            pos += len(table) * _RECORD_SIZE
        self._payload_pos = pos
        self._fh.seek(pos)
        self._closed = False

    def write_tile(self, addr: TileAddress, pixels: bytes, codec: int = CODEC_RAW) -> TileRecord:
        layer = self._layers[addr.layer]
        if not (0 <= addr.col < layer.tiles_x and 0 <= addr.row < layer.tiles_y):
            raise IndexError(f"tile address out of range: {addr}")
        payload = _encode(bytes(pixels), codec)
        rec = TileRecord(self._payload_pos, len(payload), codec)
        self._fh.write(payload)
        self._payload_pos += len(payload)
        self._tables[addr.layer][addr.row * layer.tiles_x + addr.col] = rec
        return rec

    def close(self) -> None:
        if self._closed:
            return
        self._fh.seek(0)
        self._fh.write(
            struct.pack(_HEADER_FMT, MAGIC, VERSION, len(self._layers), TILE_EDGE)
        )
        for layer, toff in zip(self._layers, self._table_offsets):
            self._fh.write(
                struct.pack(_LAYER_FMT, layer.downsample, layer.width_px,
                            layer.height_px, toff)
            )
        for table in self._tables:
            for rec in table:
                if rec is None:
                    rec = TileRecord(0, 0, CODEC_RAW)  # marks a hole
                self._fh.write(struct.pack(_RECORD_FMT, rec.offset, rec.length, rec.codec))
        self._fh.close()
        self._closed = True

    def __enter__(self) -> "SlideWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class Slide:
    """Read handle for a container file.

    The header is immutable after open; concurrent ``read_tile`` calls are
    safe (positionless pread on a shared descriptor).
    """

    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        try:
            header = os.pread(self._fd, _HEADER_SIZE, 0)
            if len(header) < _HEADER_SIZE:
                raise ContainerFormatError("truncated header")
            magic, version, layer_count, tile_edge = struct.unpack(_HEADER_FMT, header)
            if magic != MAGIC:
                raise ContainerFormatError(f"bad magic {magic!r}")
            if version != VERSION:
                raise ContainerFormatError(f"unsupported version {version}")
            if tile_edge != TILE_EDGE:
                raise ContainerFormatError(f"unsupported tile edge {tile_edge}")
            if layer_count == 0:
                raise ContainerFormatError("no layers")
            raw = os.pread(self._fd, layer_count * _LAYER_SIZE, _HEADER_SIZE)
            self.layers: list[LayerInfo] = []
            self._table_offsets: list[int] = []
            prev_d = 0.0
            for i in range(layer_count):
                d, w, h, toff = struct.unpack_from(_LAYER_FMT, raw, i * _LAYER_SIZE)
                if d <= prev_d:
                    raise ContainerFormatError("layer downsamples not increasing")
                if i == 0 and d != 1.0:
                    raise ContainerFormatError("layer 0 downsample must be 1")
                prev_d = d
                self.layers.append(LayerInfo(i, d, w, h))
                self._table_offsets.append(toff)
            self._tables = [
                os.pread(self._fd, l.tiles_x * l.tiles_y * _RECORD_SIZE, toff)
                for l, toff in zip(self.layers, self._table_offsets)
            ]
        except Exception:
            os.close(self._fd)
            raise

    def tile_record(self, addr: TileAddress) -> TileRecord:
        if not 0 <= addr.layer < len(self.layers):
            raise IndexError(f"tile address out of range: {addr}")
        layer = self.layers[addr.layer]
        if not (0 <= addr.col < layer.tiles_x and 0 <= addr.row < layer.tiles_y):
            raise IndexError(f"tile address out of range: {addr}")
        idx = addr.row * layer.tiles_x + addr.col
        off, length, codec = struct.unpack_from(_RECORD_FMT, self._tables[addr.layer],
                                                idx * _RECORD_SIZE)
        return TileRecord(off, length, codec)

    def read_tile(self, addr: TileAddress) -> bytes:
        """Decoded, full-size (262,144 byte) RGBA payload for one tile."""
        rec = self.tile_record(addr)
        if rec.length == 0:
            raise TileDecodeError(addr, "tile was never written")
        payload = os.pread(self._fd, rec.length, rec.offset)
        if len(payload) != rec.length:
            raise TileDecodeError(addr, "short read")
        return _decode(payload, rec.codec, addr)

    def read_tile_array(self, addr: TileAddress) -> np.ndarray:
        """Tile pixels as a (256, 256, 4) uint8 array."""
        flat = np.frombuffer(self.read_tile(addr), dtype=np.uint8)
        return flat.reshape(TILE_EDGE, TILE_EDGE, 4)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self) -> "Slide":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# synthetic slide patterns
#
# All patterns are pure functions of (seed, layer-0 pixel coordinate) built on
# an integer mixer, so output never depends on platform RNG state.


_U64 = 0xFFFFFFFFFFFFFFFF


def _mix64(v: np.ndarray) -> np.ndarray:
    v = v ^ (v >> np.uint64(30))
    v = v * np.uint64(0xBF58476D1CE4E5B9)
    v = v ^ (v >> np.uint64(27))
    v = v * np.uint64(0x94D049BB133111EB)
    return v ^ (v >> np.uint64(31))


def _mix64_int(v: int) -> int:
    v &= _U64
    v = (v ^ (v >> 30)) * 0xBF58476D1CE4E5B9 & _U64
    v = (v ^ (v >> 27)) * 0x94D049BB133111EB & _U64
    return v ^ (v >> 31)


def _hash_cells(seed: int, cx: np.ndarray, cy: np.ndarray, salt: int) -> np.ndarray:
    base = np.uint64((seed ^ (salt * 0xD6E8FEB86659FD93)) & _U64)
    v = cx.astype(np.uint64) * np.uint64(0x2545F4914F6CDD1D)
    v = v ^ (cy.astype(np.uint64) * np.uint64(0x9E6C63D0876A9A0F))
    return _mix64(v ^ base)


def _pattern_rgba(pattern: str, seed: int, x0: int, y0: int, w: int, h: int) -> np.ndarray:
    """Render a (h, w, 4) uint8 region of layer 0 at global offset (x0, y0)."""
    ys = (y0 + np.arange(h))[:, None]
    xs = (x0 + np.arange(w))[None, :]
    out = np.empty((h, w, 4), dtype=np.uint8)
    out[..., 3] = 255

    if pattern == "constant":
        base = _mix64_int(seed ^ 0x7)
        for c in range(3):
            out[..., c] = (base >> (8 * c)) & 0xFF
        return out

    if pattern == "mixed":
        choice = _hash_cells(seed, xs // 512, ys // 512, 99) % np.uint64(3)
        choice = np.broadcast_to(choice, (h, w))
        for i, sub in enumerate(("checker", "disks", "gradient-text")):
            mask = choice == i
            if mask.any():
                out[mask] = _pattern_rgba(sub, seed, x0, y0, w, h)[mask]
        return out

    if pattern == "checker":
        cell = _hash_cells(seed, xs // 32, ys // 32, 1)
        parity = ((xs // 32) ^ (ys // 32)) & 1
        fine = (((xs // 4) ^ (ys // 4)) & 1).astype(np.float64)
        for c in range(3):
            a = 40.0 + ((_mix64_int(seed + c + 1) >> (c * 8)) & 0x7F)
            b = 255.0 - a * 0.5
            jitter = ((cell >> np.uint64(16 + 8 * c)) & np.uint64(0x1F)).astype(np.float64)
            val = np.where(parity == 0, a + jitter, b - jitter)
            val = val * (1.0 - 0.18 * fine)
            out[..., c] = np.clip(np.rint(val), 0, 255).astype(np.uint8)
        return out

    if pattern == "disks":
        cell_x, cell_y = xs // 64, ys // 64
        hcell = _hash_cells(seed, cell_x, cell_y, 2)
        present = (hcell & np.uint64(3)) != 0
        radius = 8.0 + ((hcell >> np.uint64(2)) & np.uint64(0x0F)).astype(np.float64) * 1.4
        offx = ((hcell >> np.uint64(8)) & np.uint64(0x1F)).astype(np.float64)
        offy = ((hcell >> np.uint64(13)) & np.uint64(0x1F)).astype(np.float64)
        cxp = cell_x * 64 + 16 + offx
        cyp = cell_y * 64 + 16 + offy
        dist2 = (xs - cxp) ** 2 + (ys - cyp) ** 2
        inside = present & (dist2 < radius**2)
        ring = present & (dist2 >= radius**2) & (dist2 < (radius + 2.0) ** 2)
        grad = ((xs * 3 + ys * 2) % 509).astype(np.float64) / 509.0
        for c in range(3):
            col = 60.0 + ((hcell >> np.uint64(18 + 8 * c)) & np.uint64(0xBF)).astype(np.float64)
            base = 200.0 + 40.0 * grad * (1 if c == 0 else -1 if c == 2 else 0.3)
            val = np.where(inside, col, np.clip(base, 0, 255))
            val = np.where(ring, 30.0, val)
            out[..., c] = np.clip(np.rint(val), 0, 255).astype(np.uint8)
        return out

    if pattern == "gradient-text":
        gx = (xs % 2048).astype(np.float64) / 2048.0
        gy = (ys % 2048).astype(np.float64) / 2048.0
        stripes = ((xs + ys) // 2) & 1
        scan = (ys // 3) & 1
        hue = _hash_cells(seed, xs // 256, ys // 256, 3)
        for c in range(3):
            tint = ((hue >> np.uint64(8 * c)) & np.uint64(0x3F)).astype(np.float64)
            val = 80.0 + 120.0 * (gx if c == 0 else gy if c == 1 else (gx + gy) / 2)
            val = val + tint - 24.0 * stripes - 12.0 * scan
            out[..., c] = np.clip(np.rint(val), 0, 255).astype(np.uint8)
        return out

    raise ValueError(f"unknown pattern {pattern!r}")


def _tile_from_canvas(canvas: np.ndarray, col: int, row: int) -> bytes:
    """Cut one 256^2 tile out of a layer canvas, padding with opaque white."""
    h, w = canvas.shape[:2]
    x0, y0 = col * TILE_EDGE, row * TILE_EDGE
    tile = np.full((TILE_EDGE, TILE_EDGE, 4), 255, dtype=np.uint8)
    xs = min(TILE_EDGE, w - x0)
    ys = min(TILE_EDGE, h - y0)
    tile[:ys, :xs] = canvas[y0 : y0 + ys, x0 : x0 + xs]
    return tile.tobytes()


def synth_slide(spec: SynthSpec, path: str | os.PathLike, codec: int = CODEC_RAW) -> Slide:
    """Generate a synthetic slide and write it as a container file.

    Layer 0 is the seeded procedural pattern; each lower layer is the exact
    box-filter average of layer 0 at its downsample (ragged edge cells average
    over their clipped footprint). Output bytes are identical for identical
    (spec, codec).
    """
    layers = build_layers(spec.width_px, spec.height_px, list(spec.layer_downsamples))
    w0, h0 = spec.width_px, spec.height_px

    # running box-filter sums for every non-base layer
    sums: dict[int, np.ndarray] = {}
    for layer in layers[1:]:
        sums[layer.index] = np.zeros((layer.height_px, layer.width_px, 4), np.float64)

    with SlideWriter(path, layers) as writer:
        for band_row in range(layers[0].tiles_y):
            y0 = band_row * TILE_EDGE
            bh = min(TILE_EDGE, h0 - y0)
            band = _pattern_rgba(spec.pattern, spec.seed, 0, y0, w0, bh)
            for col in range(layers[0].tiles_x):
                x0 = col * TILE_EDGE
                tile = np.full((TILE_EDGE, TILE_EDGE, 4), 255, dtype=np.uint8)
                xs = min(TILE_EDGE, w0 - x0)
                tile[:bh, :xs] = band[:, x0 : x0 + xs]
                writer.write_tile(TileAddress(0, col, band_row), tile.tobytes(), codec)
            for layer in layers[1:]:
                _accumulate_box(sums[layer.index], band.astype(np.float64), y0,
                                int(layer.downsample), w0)

        for layer in layers[1:]:
            d = int(layer.downsample)
            counts = _cell_counts(h0, layer.height_px, d)[:, None] * _cell_counts(
                w0, layer.width_px, d
            )[None, :]
            canvas = np.clip(
                np.rint(sums[layer.index] / counts[:, :, None]), 0, 255
            ).astype(np.uint8)
            for row in range(layer.tiles_y):
                for col in range(layer.tiles_x):
                    writer.write_tile(
                        TileAddress(layer.index, col, row),
                        _tile_from_canvas(canvas, col, row),
                        codec,
                    )
    return Slide(path)


def _cell_counts(extent: int, cells: int, d: int) -> np.ndarray:
    starts = np.arange(cells) * d
    return np.minimum(starts + d, extent) - starts


def _accumulate_box(acc: np.ndarray, band: np.ndarray, y0: int, d: int, w0: int) -> None:
    """Add a layer-0 row band into a lower layer's cell-sum accumulator."""
    bh = band.shape[0]
    # column reduction: ragged last cell handled by reduceat
    col_starts = np.arange(0, w0, d)
    col_sums = np.add.reduceat(band, col_starts, axis=1)
    # row groups: boundaries where the cell row changes within the band
    rows = y0 + np.arange(bh)
    starts = np.flatnonzero(rows % d == 0)
    if starts.size == 0 or starts[0] != 0:
        starts = np.concatenate(([0], starts))
    row_sums = np.add.reduceat(col_sums, starts, axis=0)
    target = rows[starts] // d
    acc[target[0] : target[-1] + 1, : col_sums.shape[1]] += row_sums
