"""Command-line harness: synthetic slides, trace generation, headless
benchmarking, report tables, and the live viewer service.

``bench`` runs the full engine with the frame pacer against a recorded
trace, writes per-frame and per-event CSV rows plus a JSON summary, and
exits nonzero if any runtime invariant was violated - the benchmark doubles
as a property test.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from tilestream import metrics, png, trace
from tilestream.compositor import render_frame
from tilestream.container import (
    CODEC_DEFLATE,
    CODEC_RAW,
    Slide,
    SynthSpec,
    synth_slide,
)
from tilestream.engine import Engine, EngineConfig, PacedRenderer
from tilestream.pyramid import TileAddress, Viewport
from tilestream.spd import EnhanceParams, ReductionPipeline, build_kernel


# ---------------------------------------------------------------------------
# bench


def bench(
    slide_path,
    trace_path,
    out_dir,
    config: EngineConfig = EngineConfig(),
    quiesce_timeout: float = 60.0,
) -> dict:
    """Play a trace headless, record metrics, write CSV/JSON, check invariants.

    Returns {"summary", "violations", "frames_csv", "events_csv",
    "summary_json", "counts"}.
    """
    commands, window = trace.load_trace(trace_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    engine = Engine(slide_path, config, window=window, keep_publishes=True)
    renderer = PacedRenderer(engine)
    start = time.perf_counter()
    with engine:
        renderer.start()
        for cmd in commands:
            target = start + cmd.t_ms / 1000.0
            delay = target - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            engine.submit_viewport(cmd.x, cmd.y, cmd.zoom)
        quiesced = engine.wait_quiescent(quiesce_timeout)
        # one more paced frame so trailing completions land inside a window
        time.sleep(2.0 / config.target_hz + 0.01)
        renderer.stop()

        frames, events, txns = engine.recorder.snapshot()
        violations = check_invariants(engine, frames, events, txns, quiesced)

    metrics.attribute_bytes(frames, txns)
    frames_csv = out / "frames.csv"
    events_csv = out / "events.csv"
    summary_json = out / "summary.json"
    metrics.write_frames_csv(frames_csv, frames)
    metrics.write_events_csv(events_csv, events)
    summary = metrics.build_summary(frames, events)
    summary["counts"] = {
        "frames": len(frames),
        "events": len(events),
        "included_events": sum(1 for e in events if e.included),
        "transactions": len(txns),
        "bytes_buffered": sum(t.bytes for t in txns),
        "frames_skipped": renderer.pacer.skipped,
        "pool": engine.pool.occupancy(),
        "cache": engine.cache.stats(),
        "quiesced": quiesced,
    }
    summary["violations"] = violations
    metrics.write_summary_json(summary_json, summary)
    return {
        "summary": summary,
        "violations": violations,
        "frames_csv": str(frames_csv),
        "events_csv": str(events_csv),
        "summary_json": str(summary_json),
    }


def check_invariants(engine, frames, events, txns, quiesced) -> list[str]:
    """Engine-health assertions whose names identify the failing check."""
    violations = []
    if not quiesced:
        violations.append("quiescence-timeout")
    if not engine.pool.refcounts_zero():
        violations.append("refcounts-nonzero")
    try:
        engine.pool.check_consistency()
    except AssertionError as exc:
        violations.append(f"slot-consistency: {exc}")
    for e in events:
        per_tile = metrics.tpt(e)
        # TPT must be the exact division of TeFOV, never a separate estimate
        if per_tile is not None and per_tile != e.tefov / e.fov_tiles:
            violations.append("tpt-identity")
            break
    test_frames = [metrics.FrameSample(f.frame_index, f.start, f.end, f.shader_time)
                   for f in frames]
    metrics.attribute_bytes(test_frames, txns)
    if frames and sum(f.bytes_completed for f in test_frames) != sum(t.bytes for t in txns):
        violations.append("byte-conservation")
    return violations


# ---------------------------------------------------------------------------
# report


def _fmt(value, unit=""):
    if value is None:
        return "insufficient data"
    return f"{value['median']:.3f} ({value['p25']:.3f}-{value['p75']:.3f}){unit} n={value['n']}"


def _per_run_rows(run_dir: Path) -> dict:
    frames = metrics.read_frames_csv(run_dir / "frames.csv")
    events = metrics.read_events_csv(run_dir / "events.csv")
    summary = metrics.build_summary(frames, events)
    rows = {
        "frame rate [FPS]": _fmt(summary["fps"]),
        "buffer rate [GB/s]": _fmt(summary["buffer_rate_gbps"]),
    }
    for cls in ("LR", "HR"):
        te = (summary["tefov_s"] or {}).get(cls)
        if te is not None:
            te = {k: (v * 1e3 if k != "n" else v) for k, v in te.items()}
        rows[f"TeFOV {cls} [ms]"] = _fmt(te)
        tp = (summary["tpt_s"] or {}).get(cls)
        if tp is not None:
            tp = {k: (v * 1e6 if k != "n" else v) for k, v in tp.items()}
        rows[f"TPT {cls} [us]"] = _fmt(tp)
    return rows, events


def report(run_dirs: list, out_dir=None) -> str:
    """Median/IQR table per run plus log-scaled plot series files."""
    tables = []
    all_events = []
    for d in run_dirs:
        rows, events = _per_run_rows(Path(d))
        tables.append((str(d), rows))
        all_events.append(events)
    metric_names = list(tables[0][1].keys())
    width = max(len(n) for n in metric_names) + 2
    col_w = max(max(len(r[1][n]) for n in metric_names) for r in tables) + 2
    lines = [" " * width + "".join(f"{name:<{col_w}}" for name, _ in tables)]
    for name in metric_names:
        lines.append(f"{name:<{width}}" + "".join(
            f"{rows[name]:<{col_w}}" for _, rows in tables))
    text = "\n".join(lines)

    if out_dir is not None:
        outp = Path(out_dir)
        outp.mkdir(parents=True, exist_ok=True)
        for (dname, _), events in zip(tables, all_events):
            stem = Path(dname).name or "run"
            plot_path = outp / f"{stem}_events_plot.csv"
            with open(plot_path, "w") as fh:
                fh.write("layer_class,tefov_ms,log10_tefov_ms,tpt_us,log10_tpt_us\n")
                for e in events:
                    if not e.included:
                        continue
                    per_tile = metrics.tpt(e)
                    if per_tile is None or e.tefov <= 0:
                        continue
                    fh.write(
                        f"{e.layer_class},{e.tefov * 1e3:.6f},"
                        f"{math.log10(e.tefov * 1e3):.6f},"
                        f"{per_tile * 1e6:.6f},{math.log10(per_tile * 1e6):.6f}\n"
                    )
    return text


# ---------------------------------------------------------------------------
# enhancement dump


def dump_enhancement(out_dir, slide_path=None, tile=None,
                     params: EnhanceParams = EnhanceParams()) -> list:
    """Write each level's kernel (CSV) and mip image (PNG) for inspection."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if slide_path is not None:
        with Slide(slide_path) as slide:
            addr = TileAddress(*(tile or (0, 0, 0)))
            reference = slide.read_tile_array(addr)
    else:
        grid = ((np.arange(256)[:, None] // 16) ^ (np.arange(256)[None, :] // 16)) & 1
        reference = np.empty((256, 256, 4), np.uint8)
        reference[..., 3] = 255
        for c in range(3):
            reference[..., c] = np.where(grid == 0, 40, 215)
    base_png = out / "reference.png"
    base_png.write_bytes(png.encode_rgba(reference))
    written.append(base_png)
    pipe = ReductionPipeline(params)
    chain = pipe.enhance(reference)
    for lvl in range(1, params.levels + 1):
        kern = build_kernel(lvl, params.sigma_base, params.beta)
        kpath = out / f"kernel_level{lvl}.csv"
        np.savetxt(kpath, kern.coeffs, delimiter=",")
        mpath = out / f"mip_level{lvl}.png"
        mpath.write_bytes(png.encode_rgba(chain.levels[lvl - 1]))
        written.extend([kpath, mpath])
    return written


# ---------------------------------------------------------------------------
# CLI


def _parse_window(text: str) -> tuple[int, int]:
    w, h = text.lower().split("x")
    return int(w), int(h)


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--radius", type=int, default=2,
                   help="buffering perimeter radius in tiles (0-8)")
    p.add_argument("--txn-tiles", type=int, default=16,
                   help="max tiles per micro-transaction")
    p.add_argument("--pool-size", type=int, default=None,
                   help="slot pool size (default: sized from the window)")
    p.add_argument("--cache-budget-mb", type=int, default=512,
                   help="decoded-tile cache budget in MiB")
    p.add_argument("--sigma-base", type=float, default=1.0,
                   help="level-1 kernel scale")
    p.add_argument("--beta", type=float, default=2.0,
                   help="sharpening strength (0 = pure Gaussian reduction)")
    p.add_argument("--mip-levels", type=int, default=3, help="mip levels (1-3)")
    p.add_argument("--hz", type=int, default=120, choices=(30, 60, 120),
                   help="frame pacer target rate")
    p.add_argument("--workers", type=int, default=None, help="loader threads")
    p.add_argument("--enhance-dtype", choices=("float32", "float64"),
                   default="float32", help="enhancement accumulation precision")
    p.add_argument("--no-lr-skip", action="store_true",
                   help="draw the enlarged layer everywhere instead of "
                        "skipping cells covered by detail tiles")


def _engine_config(args) -> EngineConfig:
    return EngineConfig(
        perimeter_radius=args.radius,
        txn_tiles=args.txn_tiles,
        pool_size=args.pool_size,
        cache_budget_bytes=args.cache_budget_mb << 20,
        sigma_base=args.sigma_base,
        beta=args.beta,
        mip_levels=args.mip_levels,
        target_hz=args.hz,
        loader_workers=args.workers,
        enhance_dtype=args.enhance_dtype,
        lr_skip=not args.no_lr_skip,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tilestream",
        description="Tile-streaming engine harness: synthesize slides, "
                    "generate traces, benchmark, report, and serve the viewer.",
    )
    sub = parser.add_subparsers(
        dest="command", required=True,
        parser_class=lambda **kw: argparse.ArgumentParser(
            formatter_class=argparse.ArgumentDefaultsHelpFormatter, **kw),
    )

    p = sub.add_parser("synth", help="generate a synthetic slide container")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=4096)
    p.add_argument("--height", type=int, default=4096)
    p.add_argument("--downsamples", default="1,4,16",
                   help="comma-separated integer downsamples, e.g. 1,4,16")
    p.add_argument("--pattern", default="mixed",
                   choices=("checker", "disks", "gradient-text", "mixed", "constant"))
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--codec", choices=("raw", "deflate"), default="raw")

    p = sub.add_parser("trace-gen", help="generate a navigation trace")
    p.add_argument("--slide", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--style", choices=trace.STYLES, default="saccade")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--duration-ms", type=float, default=12000.0)
    p.add_argument("--window", type=_parse_window, default=(1280, 800),
                   help="screen window WxH, e.g. 1280x800")
    p.add_argument("--zoom", type=float, default=1.0)

    p = sub.add_parser("bench", help="run the engine headless over a trace")
    p.add_argument("--slide", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--quiesce-timeout", type=float, default=60.0)
    _add_engine_flags(p)

    p = sub.add_parser("report", help="summarize bench CSV output")
    p.add_argument("run_dirs", nargs="+", help="bench output directories")
    p.add_argument("--out-dir", default=None, help="where to write plot series")

    p = sub.add_parser("serve", help="serve the live viewer gateway")
    p.add_argument("--slide", required=True)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--stream-hz", type=int, default=30)
    p.add_argument("--window", type=_parse_window, default=(1024, 640))
    p.add_argument("--assets", default=None,
                   help="static asset directory (defaults to the built viewer)")
    _add_engine_flags(p)

    p = sub.add_parser("enhance-dump",
                       help="write kernels and mip images for inspection")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--slide", default=None)
    p.add_argument("--tile", default=None, help="layer,col,row (default 0,0,0)")
    p.add_argument("--sigma-base", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--mip-levels", type=int, default=3)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "synth":
        downs = tuple(float(d) for d in args.downsamples.split(","))
        spec = SynthSpec(seed=args.seed, width_px=args.width, height_px=args.height,
                         layer_downsamples=downs, pattern=args.pattern)
        codec = CODEC_RAW if args.codec == "raw" else CODEC_DEFLATE
        slide = synth_slide(spec, args.out, codec=codec)
        sizes = ", ".join(f"{l.width_px}x{l.height_px}/{l.downsample:g}"
                          for l in slide.layers)
        slide.close()
        print(f"wrote {args.out}: layers [{sizes}]")
        return 0

    if args.command == "trace-gen":
        commands = trace.trace_gen(args.slide, args.seed, args.duration_ms,
                                   args.style, args.window, args.zoom)
        trace.save_trace(args.out, commands, args.window, args.seed, args.style)
        jumps = sum(1 for c in commands if c.op == trace.OP_JUMP_NEW_FIELD)
        print(f"wrote {args.out}: {len(commands)} commands, {jumps} field jumps")
        return 0

    if args.command == "bench":
        result = bench(args.slide, args.trace, args.out_dir,
                       config=_engine_config(args),
                       quiesce_timeout=args.quiesce_timeout)
        print(report([args.out_dir]))
        counts = result["summary"]["counts"]
        print(f"\nframes={counts['frames']} events={counts['events']} "
              f"transactions={counts['transactions']} "
              f"bytes={counts['bytes_buffered']}")
        if result["violations"]:
            print("INVARIANT VIOLATIONS: " + ", ".join(result["violations"]),
                  file=sys.stderr)
            return 1
        return 0

    if args.command == "report":
        print(report(args.run_dirs, out_dir=args.out_dir))
        return 0

    if args.command == "serve":
        from tilestream.gateway import Gateway

        gw = Gateway(
            slide_path=args.slide,
            host=args.host,
            port=args.port,
            stream_hz=args.stream_hz,
            window=args.window,
            config=_engine_config(args),
            assets_dir=args.assets,
        )
        print(f"serving http://{args.host}:{gw.port}/ (control socket at /ws)",
              flush=True)
        try:
            gw.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            gw.shutdown()
        return 0

    if args.command == "enhance-dump":
        tile = tuple(int(v) for v in args.tile.split(",")) if args.tile else None
        params = EnhanceParams(levels=args.mip_levels, sigma_base=args.sigma_base,
                               beta=args.beta)
        written = dump_enhancement(args.out_dir, args.slide, tile, params)
        for path in written:
            print(f"wrote {path}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
