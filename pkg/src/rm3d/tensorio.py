"""Bit-exact binary tensor I/O (the "RM3D" format).

A single tensor is stored as::

    magic    4 bytes   b"RM3D"
    version  u8        1
    rank     u32 LE
    dims     rank x u32 LE
    dtype    u8        1=uint8, 2=float32, 3=float64, 4=int64
    payload  row-major (C order) little-endian element bytes

The format is deliberately trivial to parse from any language. A *record
file* is a sequence of named tensors, each record being::

    name_len  u16 LE
    name      utf-8 bytes
    tensor    one RM3D blob as above

Record files carry denoiser weights, scene fields and observation sets.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RM3D"
VERSION = 1

_DTYPE_CODES: dict[int, np.dtype] = {
    1: np.dtype("<u1"),
    2: np.dtype("<f4"),
    3: np.dtype("<f8"),
    4: np.dtype("<i8"),
}
_CODE_FOR_KIND = {
    ("u", 1): 1,
    ("f", 4): 2,
    ("f", 8): 3,
    ("i", 8): 4,
}


def _dtype_code(arr: np.ndarray) -> int:
    key = (arr.dtype.kind, arr.dtype.itemsize)
    if key not in _CODE_FOR_KIND:
        raise ValueError(f"unsupported tensor dtype {arr.dtype}")
    return _CODE_FOR_KIND[key]


def tensor_bytes(arr: np.ndarray) -> bytes:
    """Serialize one array to an RM3D blob."""
    arr = np.ascontiguousarray(arr)
    code = _dtype_code(arr)
    head = MAGIC + struct.pack("<BI", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    head += struct.pack("<B", code)
    payload = arr.astype(_DTYPE_CODES[code], copy=False).tobytes(order="C")
    return head + payload


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_bytes(arr))


def _read_tensor(buf: bytes, offset: int) -> tuple[np.ndarray, int]:
    if buf[offset : offset + 4] != MAGIC:
        raise ValueError(f"bad magic at byte {offset}: not an RM3D tensor")
    offset += 4
    version, rank = struct.unpack_from("<BI", buf, offset)
    if version != VERSION:
        raise ValueError(f"unsupported RM3D version {version}")
    offset += 5
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    (code,) = struct.unpack_from("<B", buf, offset)
    offset += 1
    if code not in _DTYPE_CODES:
        raise ValueError(f"unknown RM3D dtype code {code}")
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    nbytes = count * dtype.itemsize
    if offset + nbytes > len(buf):
        raise ValueError("truncated RM3D payload")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    return arr.reshape(dims), offset + nbytes


def load_tensor(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = _read_tensor(buf, 0)
    if end != len(buf):
        raise ValueError(f"trailing bytes after tensor in {path}")
    return arr.copy()


def save_records(path: str | Path, records: dict[str, np.ndarray]) -> None:
    """Write named tensors as a record file, in the given order."""
    parts = []
    for name, arr in records.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"record name too long: {name!r}")
        parts.append(struct.pack("<H", len(raw)) + raw + tensor_bytes(arr))
    Path(path).write_bytes(b"".join(parts))


def load_records(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    records: dict[str, np.ndarray] = {}
    offset = 0
    while offset < len(buf):
        (nlen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset : offset + nlen].decode("utf-8")
        offset += nlen
        arr, offset = _read_tensor(buf, offset)
        records[name] = arr.copy()
    return records
