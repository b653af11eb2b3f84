"""Standalone reader/writer for the RM3D tensor format and record files.

Deliberately self-contained: the trainer talks to the generation toolkit
only through files, so the format logic is reimplemented here against the
published layout (magic RM3D, version byte, u32 rank+dims, dtype code,
little-endian row-major payload; records prefix each tensor with a u16
name length and utf-8 name).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RM3D"
VERSION = 1
_DTYPES = {1: np.dtype("<u1"), 2: np.dtype("<f4"), 3: np.dtype("<f8"), 4: np.dtype("<i8")}
_CODES = {("u", 1): 1, ("f", 4): 2, ("f", 8): 3, ("i", 8): 4}


def tensor_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    code = _CODES[(arr.dtype.kind, arr.dtype.itemsize)]
    head = MAGIC + struct.pack("<BI", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    head += struct.pack("<B", code)
    return head + arr.astype(_DTYPES[code], copy=False).tobytes(order="C")


def _read_tensor(buf: bytes, off: int):
    if buf[off:off + 4] != MAGIC:
        raise ValueError(f"bad RM3D magic at byte {off}")
    version, rank = struct.unpack_from("<BI", buf, off + 4)
    if version != VERSION:
        raise ValueError(f"unsupported RM3D version {version}")
    off += 9
    dims = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    (code,) = struct.unpack_from("<B", buf, off)
    off += 1
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
    return arr.reshape(dims).copy(), off + count * dtype.itemsize


def load_tensor(path: str | Path) -> np.ndarray:
    arr, _ = _read_tensor(Path(path).read_bytes(), 0)
    return arr


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_bytes(arr))


def load_records(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    out: dict[str, np.ndarray] = {}
    off = 0
    while off < len(buf):
        (nlen,) = struct.unpack_from("<H", buf, off)
        name = buf[off + 2:off + 2 + nlen].decode("utf-8")
        arr, off = _read_tensor(buf, off + 2 + nlen)
        out[name] = arr
    return out


def save_records(path: str | Path, records: dict[str, np.ndarray]) -> None:
    parts = []
    for name, arr in records.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + tensor_bytes(arr))
    Path(path).write_bytes(b"".join(parts))
