"""Minimal 8-bit grayscale PNG codec with pinned encoder settings.

Writing always emits: color type 0 (grayscale), bit depth 8, no interlace,
scanline filter 0, one IDAT chunk, zlib level 6. The byte stream is a pure
function of the pixel data, so re-exports are byte-identical. The reader
accepts any 8-bit grayscale PNG (all five scanline filters).
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_ZLIB_LEVEL = 6


def _chunk(tag: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", zlib.crc32(tag + body))


def encode_gray8(img: np.ndarray) -> bytes:
    """Encode a 2D uint8 array (rows x cols) as PNG bytes."""
    if img.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {img.dtype}")
    h, w = img.shape
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    raw = b"".join(b"\x00" + img[r].tobytes() for r in range(h))
    idat = zlib.compress(raw, _ZLIB_LEVEL)
    return _SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat) + _chunk(b"IEND", b"")


def write_gray8(path: str | Path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_gray8(img))


def _unfilter(raw: bytes, h: int, w: int) -> np.ndarray:
    out = np.zeros((h, w), dtype=np.uint8)
    stride = w + 1
    prev = np.zeros(w, dtype=np.int32)
    for r in range(h):
        ftype = raw[r * stride]
        line = np.frombuffer(raw, dtype=np.uint8, count=w, offset=r * stride + 1).astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 1:  # sub
            cur = line.copy()
            for c in range(1, w):
                cur[c] = (cur[c] + cur[c - 1]) & 0xFF
        elif ftype == 2:  # up
            cur = (line + prev) & 0xFF
        elif ftype == 3:  # average
            cur = line.copy()
            cur[0] = (cur[0] + prev[0] // 2) & 0xFF
            for c in range(1, w):
                cur[c] = (cur[c] + (cur[c - 1] + prev[c]) // 2) & 0xFF
        elif ftype == 4:  # paeth
            cur = line.copy()
            for c in range(w):
                a = cur[c - 1] if c else 0
                b = prev[c]
                cc = prev[c - 1] if c else 0
                p = a + b - cc
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - cc)
                pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else cc)
                cur[c] = (cur[c] + pred) & 0xFF
        else:
            raise ValueError(f"unsupported PNG scanline filter {ftype}")
        out[r] = cur.astype(np.uint8)
        prev = cur
    return out


def decode_gray8(data: bytes) -> np.ndarray:
    if data[:8] != _SIGNATURE:
        raise ValueError("not a PNG file")
    pos = 8
    w = h = None
    idat = b""
    while pos < len(data):
        (length,) = struct.unpack_from(">I", data, pos)
        tag = data[pos + 4 : pos + 8]
        body = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            w, h, depth, ctype, _, _, interlace = struct.unpack(">IIBBBBB", body)
            if depth != 8 or ctype != 0:
                raise ValueError(f"unsupported PNG (bit depth {depth}, color type {ctype})")
            if interlace:
                raise ValueError("interlaced PNG not supported")
        elif tag == b"IDAT":
            idat += body
        elif tag == b"IEND":
            break
    if w is None:
        raise ValueError("PNG missing IHDR")
    raw = zlib.decompress(idat)
    if len(raw) != h * (w + 1):
        raise ValueError("PNG payload size mismatch")
    return _unfilter(raw, h, w)


def read_gray8(path: str | Path) -> np.ndarray:
    return decode_gray8(Path(path).read_bytes())
