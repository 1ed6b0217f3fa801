"""Minimal PNG write/read for RGBA8 framebuffers.

Encodes 8-bit RGBA, non-interlaced, filter 0 on every scanline - the simplest
stream every standard decoder accepts - with a fixed zlib level so identical
pixels always produce identical bytes. The reader handles all five scanline
filters, so it can also verify third-party output in tests.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def encode_rgba(pixels: np.ndarray, compress_level: int = 3) -> bytes:
    """PNG bytes for an (h, w, 4) uint8 array."""
    if pixels.ndim != 3 or pixels.shape[2] != 4 or pixels.dtype != np.uint8:
        raise ValueError("expected (h, w, 4) uint8 pixels")
    h, w = pixels.shape[:2]
    raw = np.empty((h, w * 4 + 1), np.uint8)
    raw[:, 0] = 0  # filter type 0 per scanline
    raw[:, 1:] = pixels.reshape(h, w * 4)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 6, 0, 0, 0)
    idat = zlib.compress(raw.tobytes(), compress_level)
    return (
        _SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", idat)
        + _chunk(b"IEND", b"")
    )


def decode_rgba(data: bytes) -> np.ndarray:
    """(h, w, 4) uint8 array from an 8-bit RGBA non-interlaced PNG."""
    if data[:8] != _SIGNATURE:
        raise ValueError("not a PNG stream")
    pos = 8
    width = height = None
    idat = bytearray()
    while pos < len(data):
        (length,) = struct.unpack_from(">I", data, pos)
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, depth, color, _, _, interlace = struct.unpack(
                ">IIBBBBB", payload
            )
            if depth != 8 or color != 6 or interlace != 0:
                raise ValueError("only 8-bit RGBA non-interlaced supported")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if width is None:
        raise ValueError("missing IHDR")
    raw = zlib.decompress(bytes(idat))
    stride = width * 4 + 1
    if len(raw) != stride * height:
        raise ValueError("scanline data size mismatch")
    out = np.empty((height, width * 4), np.uint8)
    prev = np.zeros(width * 4, np.uint8)
    for y in range(height):
        line = raw[y * stride : (y + 1) * stride]
        ftype = line[0]
        cur = np.frombuffer(line, np.uint8, count=width * 4, offset=1).copy()
        if ftype == 0:
            pass
        elif ftype == 1:  # sub
            for i in range(4, cur.size):
                cur[i] = (cur[i] + cur[i - 4]) & 0xFF
        elif ftype == 2:  # up
            cur = (cur.astype(np.int32) + prev).astype(np.uint8)
        elif ftype == 3:  # average
            for i in range(cur.size):
                left = int(cur[i - 4]) if i >= 4 else 0
                cur[i] = (int(cur[i]) + (left + int(prev[i])) // 2) & 0xFF
        elif ftype == 4:  # paeth
            for i in range(cur.size):
                a = int(cur[i - 4]) if i >= 4 else 0
                b = int(prev[i])
                c = int(prev[i - 4]) if i >= 4 else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                cur[i] = (int(cur[i]) + pred) & 0xFF
        else:
            raise ValueError(f"unknown filter {ftype}")
        out[y] = cur
        prev = out[y]
    return out.reshape(height, width, 4)
