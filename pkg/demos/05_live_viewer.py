"""Serve a slide to the browser viewer.

Builds a slide if needed, then starts the gateway: one WebSocket control
connection (viewport commands in, PNG frame packets and metric samples out)
plus static assets on the same port. Build the frontend first to get the
interactive client:

    cd frontend && npm install && npm run build

then open the printed URL, drag to pan, scroll to zoom, and watch the
buffer-rate trace burst on every jump.
"""

from pathlib import Path

from tilestream.container import SynthSpec, synth_slide
from tilestream.engine import EngineConfig
from tilestream.gateway import Gateway

out = Path("demo_output")
out.mkdir(exist_ok=True)
slide_path = out / "live.tilestream"

if not slide_path.exists():
    print("synthesizing 4096x2048 slide...")
    synth_slide(
        SynthSpec(seed=99, width_px=4096, height_px=2048,
                  layer_downsamples=(1, 4, 16), pattern="mixed"),
        slide_path,
    ).close()

assets = Path(__file__).resolve().parent.parent / "frontend" / "dist"
gateway = Gateway(
    slide_path,
    host="127.0.0.1",
    port=8765,
    stream_hz=30,
    window=(1024, 640),
    config=EngineConfig(perimeter_radius=2, target_hz=60, loader_workers=2),
    assets_dir=assets if assets.is_dir() else None,
)
if not assets.is_dir():
    print("note: frontend not built; serving a placeholder page")
print(f"serving http://127.0.0.1:{gateway.port}/  (Ctrl+C to stop)")
try:
    gateway.serve_forever()
except KeyboardInterrupt:
    pass
finally:
    gateway.shutdown()
