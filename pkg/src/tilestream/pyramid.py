"""Pyramid geometry: layer selection, visible-tile enumeration, buffering perimeter.

Everything in this module is a pure function over immutable inputs and is safe
to call from any thread. Coordinates follow two conventions:

* slide coordinates are layer-0 pixels (floats),
* layer coordinates are the layer's native pixels (slide / downsample).

``zoom`` is screen pixels per layer-0 slide pixel, so a layer drawn at
``downsample * zoom <= 1`` is at or below its native size on screen (shrunk,
"high resolution" for the current view) and one at ``downsample * zoom > 1``
is enlarged ("low resolution").
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TILE_EDGE = 256


class InvalidPyramidError(ValueError):
    """Raised for an empty or mis-ordered layer list."""


@dataclass(frozen=True)
class LayerInfo:
    """One resolution layer of the pyramid.

    ``downsample`` is layer-0 pixels per layer pixel (1.0 for layer 0,
    strictly increasing with ``index``). ``width_px``/``height_px`` are the
    layer extent in layer-native pixels.
    """

    index: int
    downsample: float
    width_px: int
    height_px: int

    @property
    def tiles_x(self) -> int:
        return -(-self.width_px // TILE_EDGE)

    @property
    def tiles_y(self) -> int:
        return -(-self.height_px // TILE_EDGE)


@dataclass(frozen=True, order=True)
class TileAddress:
    """Grid coordinates of one 256x256 tile within a layer."""

    layer: int
    col: int
    row: int


@dataclass(frozen=True)
class Viewport:
    """An axis-aligned view window.

    ``origin_x``/``origin_y`` are the top-left corner in layer-0 slide pixels;
    ``width_scr``/``height_scr`` are the window size in screen pixels; ``zoom``
    is screen pixels per layer-0 slide pixel. The viewport therefore covers
    ``width_scr / zoom`` by ``height_scr / zoom`` slide pixels.
    """

    origin_x: float
    origin_y: float
    width_scr: int
    height_scr: int
    zoom: float

    def __post_init__(self) -> None:
        if self.width_scr <= 0 or self.height_scr <= 0:
            raise ValueError("viewport must have positive screen extent")
        if self.zoom <= 0:
            raise ValueError("zoom must be positive")

    def slide_rect(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) covered by this viewport in layer-0 pixels."""
        return (
            self.origin_x,
            self.origin_y,
            self.origin_x + self.width_scr / self.zoom,
            self.origin_y + self.height_scr / self.zoom,
        )


@dataclass(frozen=True)
class LayerPair:
    """Indices of the layers drawn shrunk (hr) and enlarged (lr).

    Either may be None at the zoom extremes: ``hr is None`` means even layer 0
    is enlarged; ``lr is None`` means even the most-downsampled layer is shrunk.
    """

    hr: int | None
    lr: int | None


def validate_layers(layers: list[LayerInfo]) -> None:
    if not layers:
        raise InvalidPyramidError("pyramid has no layers")
    if layers[0].downsample != 1:
        raise InvalidPyramidError("layer 0 must have downsample 1")
    for a, b in zip(layers, layers[1:]):
        if b.downsample <= a.downsample:
            raise InvalidPyramidError("downsample must be strictly increasing")


def build_layers(
    width_px: int, height_px: int, downsamples: list[float]
) -> list[LayerInfo]:
    """Construct LayerInfo records for a layer-0 extent and downsample list.

    Layer extents are ceil(extent0 / downsample) so every layer covers the
    full slide area.
    """
    layers = [
        LayerInfo(
            index=i,
            downsample=float(d),
            width_px=max(1, math.ceil(width_px / d)),
            height_px=max(1, math.ceil(height_px / d)),
        )
        for i, d in enumerate(downsamples)
    ]
    validate_layers(layers)
    return layers


def select_layers(zoom: float, layers: list[LayerInfo]) -> LayerPair:
    """Pick the shrunk (hr) and enlarged (lr) layers for a zoom factor.

    hr is the layer with the largest downsample d such that d * zoom <= 1
    (drawn at or below native size; the boundary d * zoom == 1 counts as hr).
    lr is the layer with the smallest downsample d such that d * zoom > 1.
    """
    validate_layers(layers)
    if zoom <= 0:
        raise ValueError("zoom must be positive")
    hr: int | None = None
    lr: int | None = None
    for layer in layers:
        if layer.downsample * zoom <= 1.0:
            if hr is None or layer.downsample > layers[hr].downsample:
                hr = layer.index
        else:
            if lr is None or layer.downsample < layers[lr].downsample:
                lr = layer.index
    return LayerPair(hr=hr, lr=lr)


def visible_tiles(vp: Viewport, layer: LayerInfo) -> set[TileAddress]:
    """Tiles of ``layer`` whose footprint shares area with the viewport.

    The viewport rectangle is converted to layer coordinates (divide by the
    downsample); a tile that only touches the rectangle edge (zero shared
    area) is not visible. The result is clipped to the tile grid.
    """
    x0, y0, x1, y1 = vp.slide_rect()
    d = layer.downsample
    lx0, ly0, lx1, ly1 = x0 / d, y0 / d, x1 / d, y1 / d

    c0 = max(0, math.floor(lx0 / TILE_EDGE))
    r0 = max(0, math.floor(ly0 / TILE_EDGE))
    # strict inequality: a tile starting exactly at lx1 shares no area
    c1 = min(layer.tiles_x - 1, _last_index_before(lx1))
    r1 = min(layer.tiles_y - 1, _last_index_before(ly1))
    if c1 < c0 or r1 < r0:
        return set()
    return {
        TileAddress(layer.index, c, r)
        for r in range(r0, r1 + 1)
        for c in range(c0, c1 + 1)
    }


def _last_index_before(coord: float) -> int:
    """Largest tile index whose footprint starts strictly before ``coord``."""
    idx = math.floor(coord / TILE_EDGE)
    if idx * TILE_EDGE == coord:
        idx -= 1
    return idx


def buffer_region(
    visible: set[TileAddress], radius: int, layer: LayerInfo
) -> set[TileAddress]:
    """Chebyshev-distance dilation of a visible set, clipped to the grid."""
    if not 0 <= radius <= 8:
        raise ValueError("perimeter radius must be in 0..8")
    if radius == 0 or not visible:
        return set(visible)
    out: set[TileAddress] = set()
    for t in visible:
        for dr in range(-radius, radius + 1):
            for dc in range(-radius, radius + 1):
                c, r = t.col + dc, t.row + dr
                if 0 <= c < layer.tiles_x and 0 <= r < layer.tiles_y:
                    out.add(TileAddress(t.layer, c, r))
    return out


def fov_overlap(prev: Viewport, next: Viewport) -> bool:
    """True iff the two viewport rectangles share any area in slide pixels."""
    ax0, ay0, ax1, ay1 = prev.slide_rect()
    bx0, by0, bx1, by1 = next.slide_rect()
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1
