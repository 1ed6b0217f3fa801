"""Navigation traces: reproducible command scripts for benchmark playback.

A trace is one JSON document (hand-editable) of timestamped commands; every
command carries the full (x, y, zoom) target so playback is stateless.
``saccade`` style emits discontinuous field jumps with zero pixel overlap
between consecutive fields - the glass-slide-driving navigation pattern the
benchmark metrics are defined around; ``pan`` drags continuously; ``mixed``
interleaves both plus zoom changes.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass

from tilestream.container import Slide
from tilestream.pyramid import Viewport, fov_overlap

TRACE_FORMAT = "tilestream-trace"
TRACE_VERSION = 1

OP_SET_VIEWPORT = "set_viewport"
OP_SET_ZOOM = "set_zoom"
OP_JUMP_NEW_FIELD = "jump_new_field"

STYLES = ("saccade", "pan", "mixed")


@dataclass(frozen=True)
class TraceCommand:
    t_ms: float
    op: str
    x: float
    y: float
    zoom: float


def save_trace(path, commands: list[TraceCommand], window: tuple[int, int],
               seed: int, style: str) -> None:
    doc = {
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "seed": seed,
        "style": style,
        "window": {"width": window[0], "height": window[1]},
        "commands": [asdict(c) for c in commands],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_trace(path) -> tuple[list[TraceCommand], tuple[int, int]]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != TRACE_FORMAT or doc.get("version") != TRACE_VERSION:
        raise ValueError("unrecognized trace file")
    window = (doc["window"]["width"], doc["window"]["height"])
    commands = [TraceCommand(**c) for c in doc["commands"]]
    if any(b.t_ms < a.t_ms for a, b in zip(commands, commands[1:])):
        raise ValueError("trace timestamps must be non-decreasing")
    return commands, window


class _FieldLattice:
    """Disjoint field positions: cells the size of one field, so any two
    distinct cells share zero pixels."""

    def __init__(self, slide_w: int, slide_h: int, window: tuple[int, int], zoom: float):
        self.fw = window[0] / zoom
        self.fh = window[1] / zoom
        self.cols = max(1, int(slide_w // self.fw))
        self.rows = max(1, int(slide_h // self.fh))

    def origin(self, cell: tuple[int, int]) -> tuple[float, float]:
        return cell[0] * self.fw, cell[1] * self.fh

    def random_cell(self, rng: random.Random, avoid: tuple[int, int] | None):
        while True:
            cell = (rng.randrange(self.cols), rng.randrange(self.rows))
            if cell != avoid:
                return cell


def trace_gen(
    slide: Slide | str,
    seed: int,
    duration_ms: float,
    style: str,
    window: tuple[int, int] = (1280, 800),
    zoom: float = 1.0,
) -> list[TraceCommand]:
    """Deterministic command list for a slide's geometry."""
    if style not in STYLES:
        raise ValueError(f"style must be one of {STYLES}")
    own = isinstance(slide, (str, bytes)) or hasattr(slide, "__fspath__")
    sl = Slide(slide) if own else slide
    try:
        w0, h0 = sl.layers[0].width_px, sl.layers[0].height_px
    finally:
        if own:
            sl.close()
    rng = random.Random(seed)
    lattice = _FieldLattice(w0, h0, window, zoom)
    if style in ("saccade", "mixed") and lattice.cols * lattice.rows < 2:
        raise ValueError("slide too small for disjoint field jumps at this zoom")

    commands: list[TraceCommand] = []
    cell = lattice.random_cell(rng, avoid=None)
    x, y = lattice.origin(cell)
    z = zoom
    commands.append(TraceCommand(0.0, OP_JUMP_NEW_FIELD, x, y, z))
    t = 0.0

    def jump():
        nonlocal cell, x, y, z, t
        t += rng.uniform(300.0, 800.0)
        current = Viewport(x, y, window[0], window[1], z)
        for _ in range(50):
            cand = lattice.random_cell(rng, avoid=cell)
            cx, cy = lattice.origin(cand)
            # jumps land at the base zoom; distinct lattice cells are then
            # disjoint, and we also avoid the panned-to current view
            if not fov_overlap(current, Viewport(cx, cy, window[0], window[1], zoom)):
                cell = cand
                break
        else:
            cell = lattice.random_cell(rng, avoid=cell)
        x, y = lattice.origin(cell)
        z = zoom
        commands.append(TraceCommand(t, OP_JUMP_NEW_FIELD, x, y, z))

    def pan_burst():
        nonlocal x, y, t
        vx = rng.uniform(-900.0, 900.0)
        vy = rng.uniform(-600.0, 600.0)
        for _ in range(rng.randint(8, 24)):
            t += 16.0
            if t > duration_ms:
                return
            x = min(max(x + vx * 0.016, 0.0), max(0.0, w0 - window[0] / z))
            y = min(max(y + vy * 0.016, 0.0), max(0.0, h0 - window[1] / z))
            commands.append(TraceCommand(t, OP_SET_VIEWPORT, x, y, z))

    def zoom_step():
        nonlocal z, t
        t += rng.uniform(80.0, 240.0)
        z = min(4.0, max(0.25, z * rng.choice((0.8, 1.25))))
        commands.append(TraceCommand(t, OP_SET_ZOOM, x, y, z))

    while t < duration_ms:
        if style == "saccade":
            jump()
        elif style == "pan":
            pan_burst()
        else:
            move = rng.random()
            if move < 0.45:
                jump()
            elif move < 0.85:
                pan_burst()
            else:
                zoom_step()
    return [c for c in commands if c.t_ms <= duration_ms]


def jumps_are_disjoint(commands: list[TraceCommand], window: tuple[int, int]) -> bool:
    """True iff every consecutive pair of jump targets shares no pixels."""
    prev: Viewport | None = None
    for c in commands:
        if c.op != OP_JUMP_NEW_FIELD:
            continue
        vp = Viewport(c.x, c.y, window[0], window[1], c.zoom)
        if prev is not None and fov_overlap(prev, vp):
            return False
        prev = vp
    return True
