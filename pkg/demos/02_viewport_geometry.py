"""Layer selection and tile enumeration for a moving viewport.

The zoom convention is screen pixels per layer-0 slide pixel: a layer drawn
at downsample * zoom <= 1 is shrunk on screen (the detail, "HR", layer) and
one above 1 is enlarged (the backdrop, "LR", layer).
"""

from tilestream.pyramid import (
    Viewport,
    buffer_region,
    build_layers,
    fov_overlap,
    select_layers,
    visible_tiles,
)

layers = build_layers(65536, 65536, [1, 4, 16, 64])

print("zoom sweep -> (hr layer, lr layer):")
for zoom in (4.0, 1.0, 0.5, 0.25, 0.2, 0.05, 0.01, 0.001):
    pair = select_layers(zoom, layers)
    print(f"  zoom {zoom:>6}: hr={pair.hr},  lr={pair.lr}")

# the reference 2774x1750 window covers 11x7 = 77 layer-0 tiles at zoom 1
vp = Viewport(origin_x=0, origin_y=0, width_scr=2774, height_scr=1750, zoom=1.0)
field = visible_tiles(vp, layers[0])
print(f"\n2774x1750 window at zoom 1: {len(field)} visible layer-0 tiles")

for radius in (0, 1, 2, 3):
    region = buffer_region(field, radius, layers[0])
    print(f"  perimeter radius {radius}: {len(region)} tiles to keep buffered")

# a saccade: the new field shares no pixels with the old one
jump = Viewport(2774.0, 1750.0, 2774, 1750, 1.0)
drag = Viewport(500.0, 200.0, 2774, 1750, 1.0)
print(f"\njump overlaps previous field: {fov_overlap(vp, jump)}")
print(f"drag overlaps previous field: {fov_overlap(vp, drag)}")
