"""Local viewer service: one control WebSocket carrying viewport commands in
and encoded frames plus metric samples out, with the viewer's static assets
served over plain HTTP from the same port.

Wire schema (documented for clients):

* client -> server, text frame: ``{"type": "viewport", "x": float,
  "y": float, "zoom": float, "client_seq": int}``. Commands coalesce -
  between two engine passes only the highest ``client_seq`` is applied.
* server -> client, binary frame (FramePacket): 16-byte little-endian header
  ``{frame_index: u64, width: u32, height: u32}`` followed by a PNG encoding
  of the framebuffer.
* server -> client, text frame (MetricsPacket, ~10 Hz): ``{"type":
  "metrics", "fps", "buffer_rate_gbps", "last_tefov_ms", "last_tpt_us",
  "pool_occupancy", "timestamp", "per_class": {"LR"|"HR": {"tefov_ms",
  "tpt_us"}}}`` - every value computed by the metrics module.
* malformed input: text frame ``{"type": "error", "message": str}``; the
  connection stays open.

Frames are encoded only while a client is connected, stream pacing is
decoupled from render pacing, and a stalled client drops frames (the newest
frame always wins) instead of queuing them.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from tilestream import metrics, png
from tilestream.engine import Engine, EngineConfig, PacedRenderer

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
    ".png": "image/png",
    ".ico": "image/x-icon",
    ".svg": "image/svg+xml",
}

_FALLBACK_PAGE = b"""<!doctype html>
<html><head><title>tilestream</title></head>
<body style="font-family: sans-serif">
<h1>tilestream gateway</h1>
<p>The control socket is at <code>/ws</code>. Build the viewer frontend and
point <code>--assets</code> at its <code>dist/</code> directory to get the
interactive client.</p>
</body></html>
"""


def _accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _encode_frame(opcode: int, payload: bytes) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([n])
    elif n < 1 << 16:
        head += bytes([126]) + struct.pack(">H", n)
    else:
        head += bytes([127]) + struct.pack(">Q", n)
    return head + payload


class _SocketClosed(Exception):
    pass


def _read_exact(rfile, n: int) -> bytes:
    data = rfile.read(n)
    if data is None or len(data) < n:
        raise _SocketClosed()
    return data


def _read_message(rfile) -> tuple[int, bytes]:
    """One complete message (fragments reassembled). Control frames are
    returned as-is (they may not fragment)."""
    opcode = None
    buffer = bytearray()
    while True:
        b0, b1 = _read_exact(rfile, 2)
        fin = b0 & 0x80
        op = b0 & 0x0F
        masked = b1 & 0x80
        n = b1 & 0x7F
        if n == 126:
            (n,) = struct.unpack(">H", _read_exact(rfile, 2))
        elif n == 127:
            (n,) = struct.unpack(">Q", _read_exact(rfile, 8))
        key = _read_exact(rfile, 4) if masked else b"\x00" * 4
        payload = bytearray(_read_exact(rfile, n))
        if masked:
            for i in range(n):
                payload[i] ^= key[i & 3]
        if op >= 0x8:  # control frame
            return op, bytes(payload)
        if op != 0:
            opcode = op
        buffer += payload
        if fin:
            return opcode or 0x1, bytes(buffer)


class _Mailbox:
    """Latest-wins slot: a slow consumer sees only the newest value."""

    def __init__(self):
        self._cond = threading.Condition()
        self._value = None
        self._stamp = 0

    def put(self, value) -> None:
        with self._cond:
            self._value = value
            self._stamp += 1
            self._cond.notify_all()

    def take_newer(self, last_stamp: int, timeout: float):
        with self._cond:
            if self._stamp == last_stamp:
                self._cond.wait(timeout)
            if self._stamp == last_stamp:
                return None, last_stamp
            return self._value, self._stamp


class Gateway:
    """Engine host plus the HTTP/WebSocket front door."""

    def __init__(
        self,
        slide_path,
        host: str = "127.0.0.1",
        port: int = 8765,
        stream_hz: int = 30,
        window: tuple[int, int] = (1024, 640),
        config: EngineConfig = EngineConfig(),
        assets_dir=None,
    ):
        self.engine = Engine(slide_path, config, window=window)
        self.stream_hz = stream_hz
        self.assets_dir = Path(assets_dir) if assets_dir else None
        self._clients_gate = threading.Event()
        self._frame_box = _Mailbox()
        self.renderer = PacedRenderer(
            self.engine, on_frame=self._frame_box.put, gate=self._clients_gate)
        self._client_lock = threading.Lock()
        self._client_connected = False
        self.frame_encodes = 0
        self.frames_seen = 0
        self._metrics_mark = 0.0
        self._metrics_txn_index = 0

        gateway = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # quiet
                pass

            def do_GET(self):
                if self.headers.get("Upgrade", "").lower() == "websocket":
                    gateway._websocket_session(self)
                else:
                    gateway._serve_static(self)

        self.httpd = ThreadingHTTPServer((host, port), Handler)
        self.httpd.daemon_threads = True
        self.port = self.httpd.server_address[1]
        self.engine.start()
        self.renderer.start()
        self._server_thread: threading.Thread | None = None

    @property
    def frames_dropped(self) -> int:
        """Frames superseded in the latest-wins mailbox without being sent
        (stream-rate downsampling and client stalls both land here)."""
        return max(0, self.frames_seen - self.frame_encodes)

    # -- lifecycle ----------------------------------------------------------

    def serve_forever(self) -> None:
        self.httpd.serve_forever(poll_interval=0.1)

    def start_background(self) -> None:
        self._server_thread = threading.Thread(
            target=self.serve_forever, name="gateway-http", daemon=True)
        self._server_thread.start()

    def shutdown(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._server_thread is not None:
            self._server_thread.join(timeout=5.0)
        self.renderer.stop()
        self.engine.stop()

    # -- static assets -------------------------------------------------------

    def _serve_static(self, handler: BaseHTTPRequestHandler) -> None:
        path = handler.path.split("?", 1)[0]
        if path in ("", "/"):
            path = "/index.html"
        body, ctype, status = None, "text/html; charset=utf-8", 200
        if self.assets_dir is not None:
            target = (self.assets_dir / path.lstrip("/")).resolve()
            try:
                target.relative_to(self.assets_dir.resolve())
            except ValueError:
                target = None  # path escape attempt
            if target is not None and target.is_file():
                body = target.read_bytes()
                ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        if body is None:
            if path == "/index.html":
                body = _FALLBACK_PAGE
            else:
                body, status = b"not found\n", 404
                ctype = "text/plain; charset=utf-8"
        handler.send_response(status)
        handler.send_header("Content-Type", ctype)
        handler.send_header("Content-Length", str(len(body)))
        handler.send_header("Cache-Control", "no-store")
        handler.end_headers()
        handler.wfile.write(body)

    # -- websocket session ----------------------------------------------------

    def _websocket_session(self, handler: BaseHTTPRequestHandler) -> None:
        key = handler.headers.get("Sec-WebSocket-Key")
        if not key:
            handler.send_error(400, "missing Sec-WebSocket-Key")
            return
        with self._client_lock:
            if self._client_connected:
                busy = True
            else:
                self._client_connected = True
                busy = False
        handler.send_response(101)
        handler.send_header("Upgrade", "websocket")
        handler.send_header("Connection", "Upgrade")
        handler.send_header("Sec-WebSocket-Accept", _accept_key(key))
        handler.end_headers()
        handler.wfile.flush()
        send_lock = threading.Lock()

        def send(opcode: int, payload: bytes) -> None:
            with send_lock:
                handler.wfile.write(_encode_frame(opcode, payload))
                handler.wfile.flush()

        handler.close_connection = True  # the socket dies with the session
        if busy:
            # single control connection: turn extras away politely
            try:
                send(0x1, json.dumps({
                    "type": "error",
                    "message": "a control client is already connected",
                }).encode())
                send(0x8, struct.pack(">H", 1013))
            except OSError:
                pass
            return

        stop = threading.Event()
        sender = threading.Thread(
            target=self._sender_loop, args=(send, stop),
            name="gateway-sender", daemon=True)
        try:
            self._clients_gate.set()
            sender.start()
            while not stop.is_set():
                try:
                    opcode, payload = _read_message(handler.rfile)
                except (_SocketClosed, OSError):
                    break
                if opcode == 0x8:  # close
                    try:
                        send(0x8, payload[:2])
                    except OSError:
                        pass
                    break
                if opcode == 0x9:  # ping
                    send(0xA, payload)
                    continue
                if opcode == 0x1:
                    self._handle_command(payload, send)
        finally:
            stop.set()
            self._clients_gate.clear()
            sender.join(timeout=2.0)
            with self._client_lock:
                self._client_connected = False

    def _handle_command(self, payload: bytes, send) -> None:
        try:
            msg = json.loads(payload.decode("utf-8"))
            if msg.get("type") != "viewport":
                raise ValueError(f"unknown message type {msg.get('type')!r}")
            self.engine.submit_viewport(
                float(msg["x"]), float(msg["y"]), float(msg["zoom"]),
                client_seq=int(msg["client_seq"]),
            )
        except Exception as exc:
            try:
                send(0x1, json.dumps({"type": "error", "message": str(exc)}).encode())
            except OSError:
                pass

    def _sender_loop(self, send, stop: threading.Event) -> None:
        interval = 1.0 / self.stream_hz
        next_frame = 0.0
        next_metrics = 0.0
        stamp = 0
        while not stop.is_set():
            fb, new_stamp = self._frame_box.take_newer(stamp, timeout=0.05)
            now = time.perf_counter()
            try:
                if fb is not None:
                    self.frames_seen += new_stamp - stamp
                    stamp = new_stamp
                    if now >= next_frame:
                        next_frame = now + interval
                        header = struct.pack("<QII", fb.frame_index, fb.width, fb.height)
                        body = png.encode_rgba(fb.pixels)
                        self.frame_encodes += 1
                        send(0x2, header + body)
                if now >= next_metrics:
                    next_metrics = now + 0.1
                    send(0x1, json.dumps(self._metrics_packet(now)).encode())
            except OSError:
                stop.set()
                return

    # -- metrics -------------------------------------------------------------

    def _metrics_packet(self, now: float) -> dict:
        frames, events, txns = self.engine.recorder.snapshot()
        fps = None
        tail = frames[-121:]
        if len(tail) >= 2:
            try:
                _, summary = metrics.frame_rate(tail)
                fps = summary["median"]
            except metrics.InsufficientDataError:
                pass
        # buffer rate over the interval since the previous packet: one
        # window, the metrics-module definition applied to this tick
        window_bytes = 0
        for txn in txns[self._metrics_txn_index:]:
            if txn.completed_at <= now:
                window_bytes += txn.bytes
        rate = None
        if self._metrics_mark > 0 and now > self._metrics_mark:
            sample = metrics.FrameSample(0, self._metrics_mark, now, 0.0,
                                         bytes_completed=window_bytes)
            series, _, _ = metrics.buffer_rate([sample])
            rate = series[0]
        self._metrics_mark = now
        self._metrics_txn_index = len(txns)

        last_tefov_ms = None
        last_tpt_us = None
        per_class = {}
        for e in events:
            if not e.included:
                continue
            per_tile = metrics.tpt(e)
            entry = {
                "tefov_ms": e.tefov * 1e3,
                "tpt_us": None if per_tile is None else per_tile * 1e6,
            }
            per_class[e.layer_class] = entry
            last_tefov_ms = entry["tefov_ms"]
            last_tpt_us = entry["tpt_us"]
        occ = self.engine.pool.occupancy()
        return {
            "type": "metrics",
            "fps": fps,
            "buffer_rate_gbps": rate,
            "last_tefov_ms": last_tefov_ms,
            "last_tpt_us": last_tpt_us,
            "pool_occupancy": (occ["active"] + occ["pending"]) / occ["pool_size"],
            "timestamp": now,
            "per_class": per_class,
        }
