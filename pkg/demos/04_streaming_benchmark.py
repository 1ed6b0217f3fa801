"""End-to-end benchmark: synthesize a slide, generate a saccade trace, run
the engine headless, and summarize TeFOV / TPT / frame-rate / buffer-rate.

The same flow is available from the command line:

    tilestream synth --out slide.tilestream --width 4096 --height 4096
    tilestream trace-gen --slide slide.tilestream --out trace.json
    tilestream bench --slide slide.tilestream --trace trace.json --out-dir run/
    tilestream report run/
"""

from pathlib import Path

from tilestream import trace
from tilestream.container import SynthSpec, synth_slide
from tilestream.engine import EngineConfig
from tilestream.harness import bench, report

out = Path("demo_output")
out.mkdir(exist_ok=True)
slide_path = out / "bench.tilestream"

if not slide_path.exists():
    print("synthesizing 4096x2048 slide...")
    synth_slide(
        SynthSpec(seed=7, width_px=4096, height_px=2048,
                  layer_downsamples=(1, 4, 16), pattern="mixed"),
        slide_path,
    ).close()

window = (1024, 640)
commands = trace.trace_gen(slide_path, seed=5, duration_ms=3000,
                           style="saccade", window=window)
trace_path = out / "trace.json"
trace.save_trace(trace_path, commands, window, 5, "saccade")
jumps = sum(1 for c in commands if c.op == trace.OP_JUMP_NEW_FIELD)
print(f"trace: {len(commands)} commands, {jumps} disjoint field jumps")

print("running headless bench (3 s trace + quiescence)...")
result = bench(
    slide_path, trace_path, out / "run",
    config=EngineConfig(perimeter_radius=2, loader_workers=2, target_hz=60),
)
counts = result["summary"]["counts"]
print(f"frames: {counts['frames']}, transactions: {counts['transactions']}, "
      f"bytes buffered: {counts['bytes_buffered']:,}")
print(f"invariant violations: {result['violations'] or 'none'}\n")
print(report([out / "run"], out_dir=out / "plots"))
print(f"\nCSV rows in {result['frames_csv']} and {result['events_csv']}")
print(f"log-scaled plot series in {out / 'plots'}")
