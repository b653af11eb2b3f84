import struct
import zlib

import numpy as np
import pytest

from rm3d import pngio


def test_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (33, 47), dtype=np.uint8)
    p = tmp_path / "a.png"
    pngio.write_gray8(p, img)
    assert np.array_equal(pngio.read_gray8(p), img)


def test_encoding_is_deterministic():
    img = np.random.default_rng(1).integers(0, 256, (16, 16), dtype=np.uint8)
    assert pngio.encode_gray8(img) == pngio.encode_gray8(img.copy())


def test_rejects_non_gray_input():
    with pytest.raises(ValueError):
        pngio.encode_gray8(np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        pngio.encode_gray8(np.zeros((4, 4), dtype=np.float32))


def _encode_with_filter(img: np.ndarray, ftype: int) -> bytes:
    """Hand-build a PNG using one non-trivial scanline filter everywhere."""
    h, w = img.shape
    rows = []
    prev = np.zeros(w, dtype=np.int32)
    for r in range(h):
        cur = img[r].astype(np.int32)
        if ftype == 1:
            enc = cur.copy()
            enc[1:] = (cur[1:] - cur[:-1]) % 256
        elif ftype == 2:
            enc = (cur - prev) % 256
        else:
            raise NotImplementedError
        rows.append(bytes([ftype]) + enc.astype(np.uint8).tobytes())
        prev = cur

    def chunk(tag, body):
        return struct.pack(">I", len(body)) + tag + body + \
            struct.pack(">I", zlib.crc32(tag + body))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(b"".join(rows))) + chunk(b"IEND", b""))


@pytest.mark.parametrize("ftype", [1, 2])
def test_decodes_filtered_scanlines(ftype):
    img = np.random.default_rng(ftype).integers(0, 256, (9, 13), dtype=np.uint8)
    assert np.array_equal(pngio.decode_gray8(_encode_with_filter(img, ftype)), img)


def test_rejects_non_png():
    with pytest.raises(ValueError):
        pngio.decode_gray8(b"not a png at all")
