"""Create a synthetic slide container and poke at its pyramid.

The container stands in for gigapixel scanner files: layer 0 is a seeded
procedural pattern with plenty of high-frequency detail, and every lower
layer is the exact box-filter average of layer 0, which makes cross-layer
arithmetic checkable by hand.
"""

from pathlib import Path

import numpy as np

from tilestream import png
from tilestream.container import CODEC_DEFLATE, SynthSpec, synth_slide
from tilestream.pyramid import TileAddress

out = Path("demo_output")
out.mkdir(exist_ok=True)
slide_path = out / "demo.tilestream"

spec = SynthSpec(
    seed=20260808,
    width_px=2048,
    height_px=1536,
    layer_downsamples=(1, 4),
    pattern="mixed",
)
slide = synth_slide(spec, slide_path, codec=CODEC_DEFLATE)

print(f"wrote {slide_path} ({slide_path.stat().st_size:,} bytes)")
for layer in slide.layers:
    print(
        f"  layer {layer.index}: downsample {layer.downsample:g}, "
        f"{layer.width_px}x{layer.height_px} px, "
        f"{layer.tiles_x}x{layer.tiles_y} tiles"
    )

# tiles decode to exactly 256*256*4 bytes, regardless of codec
tile = slide.read_tile_array(TileAddress(0, 3, 2))
print(f"tile (0,3,2): shape {tile.shape}, mean RGB "
      f"{tile[..., :3].mean(axis=(0, 1)).round(1)}")

# the measured box-filter identity: a layer-1 pixel is the mean of a 4x4
# block of layer-0 pixels
block = np.stack([
    slide.read_tile_array(TileAddress(0, c, 0)) for c in range(4)
], axis=0)
low = slide.read_tile_array(TileAddress(1, 0, 0))
full = np.concatenate(list(block), axis=1)[:, :1024].astype(np.float64)
expect = full.reshape(64, 4, 256, 4, 4).mean(axis=(1, 3))
print("layer 1 equals the exact layer-0 box average:",
      bool((low[:64, :256] == np.rint(expect[:, :256])).all()))

(out / "tile_preview.png").write_bytes(png.encode_rgba(tile))
print(f"wrote {out / 'tile_preview.png'}")
slide.close()
