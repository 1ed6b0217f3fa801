"""tilestream: a tile-streaming engine for gigapixel image pyramids.

The package is organized around the render loop of a deep-zoom viewer:

* :mod:`tilestream.pyramid` - layer/tile geometry,
* :mod:`tilestream.container` - synthetic slides and the on-disk tile container,
* :mod:`tilestream.cache_loader` - prioritized tile loading into a RAM cache,
* :mod:`tilestream.device` - the recycled slot pool with generation counters,
* :mod:`tilestream.spd` - single-pass reduction-enhancement (mip generation),
* :mod:`tilestream.rtbs` - the micro-transaction buffering scheduler,
* :mod:`tilestream.compositor` - the software frame renderer and pacer,
* :mod:`tilestream.metrics` - frame-rate / buffer-rate / TeFOV / TPT metrics,
* :mod:`tilestream.engine` - the assembled engine,
* :mod:`tilestream.gateway` - WebSocket/HTTP service for the live viewer,
* :mod:`tilestream.harness` - the command-line harness.
"""

from tilestream.container import Slide, SynthSpec, synth_slide
from tilestream.engine import Engine, EngineConfig
from tilestream.pyramid import (
    LayerInfo,
    LayerPair,
    TileAddress,
    Viewport,
    buffer_region,
    fov_overlap,
    select_layers,
    visible_tiles,
)
from tilestream.spd import EnhanceParams, build_kernel, generate_mips, ricker2d

__version__ = "0.1.0"

__all__ = [
    "Engine",
    "EngineConfig",
    "EnhanceParams",
    "LayerInfo",
    "LayerPair",
    "Slide",
    "SynthSpec",
    "TileAddress",
    "Viewport",
    "buffer_region",
    "build_kernel",
    "fov_overlap",
    "generate_mips",
    "ricker2d",
    "select_layers",
    "synth_slide",
    "visible_tiles",
    "__version__",
]
