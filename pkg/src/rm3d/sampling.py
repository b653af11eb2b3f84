"""Sparse-observation machinery: masks, mask application, interpolation.

Masks select (i, j) cells independently per height layer; both kinds pick
exactly floor(rate * nx * ny) cells per layer. Nearest-neighbor
interpolation runs per layer, with distance ties broken by the
lexicographically smallest observation cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorio
from .dataset import RadioMapVolume


@dataclass(frozen=True)
class SampleMask:
    """Per-layer index sets; indices[k] is an (m, 2) int array of (i, j)."""

    indices: tuple[np.ndarray, ...]
    rate: float
    kind: str
    seed: int | None = None

    @property
    def nz(self) -> int:
        return len(self.indices)

    def count_per_layer(self) -> int:
        return len(self.indices[0])

    def write(self, path: str | Path) -> None:
        lines = [f"{k},{i},{j}" for k, idx in enumerate(self.indices) for i, j in idx]
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")

    @staticmethod
    def read(path: str | Path, rate: float = 0.0, kind: str = "file") -> "SampleMask":
        layers: dict[int, list[tuple[int, int]]] = {}
        for line in Path(path).read_text(encoding="ascii").splitlines():
            if not line.strip():
                continue
            k, i, j = (int(v) for v in line.split(","))
            layers.setdefault(k, []).append((i, j))
        nz = max(layers) + 1
        idx = tuple(np.array(layers.get(k, []), dtype=np.int64).reshape(-1, 2)
                    for k in range(nz))
        return SampleMask(idx, rate, kind)


@dataclass(frozen=True)
class SparseObservations:
    """Observed voxels: (n, 3) int coordinates and (n, C) values."""

    coords: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.coords.shape[0] != self.values.shape[0]:
            raise ValueError("coordinate/value count mismatch")

    def __len__(self) -> int:
        return self.coords.shape[0]

    def write(self, path: str | Path) -> None:
        """Single (n, 3+C) float64 tensor: columns i, j, k then channel values."""
        table = np.concatenate([self.coords.astype(np.float64), self.values], axis=1)
        tensorio.save_tensor(path, table)

    @staticmethod
    def read(path: str | Path) -> "SparseObservations":
        table = tensorio.load_tensor(path)
        return SparseObservations(table[:, :3].astype(np.int64), table[:, 3:].copy())


def _mask_count(nx: int, ny: int, rate: float) -> int:
    if not 0.0 < rate <= 1.0:
        raise ValueError("sampling rate must lie in (0, 1]")
    count = int(np.floor(rate * nx * ny))
    if count < 1:
        raise ValueError("sampling rate selects zero cells per layer")
    return count


def uniform_mask(nx: int, ny: int, nz: int, rate: float) -> SampleMask:
    """Deterministic row-major stride selection, identical on every layer."""
    count = _mask_count(nx, ny, rate)
    stride = max(int(np.floor(1.0 / rate)), 1)
    # floor-stride over-selects (ceil(N/stride) >= count), so truncation is safe
    flat = np.arange(0, nx * ny, stride, dtype=np.int64)[:count]
    idx = np.stack([flat // ny, flat % ny], axis=1)
    return SampleMask(tuple(idx.copy() for _ in range(nz)), rate, "uniform")


def random_mask(nx: int, ny: int, nz: int, rate: float, seed: int) -> SampleMask:
    """Per-layer uniform subset without replacement; deterministic in seed."""
    count = _mask_count(nx, ny, rate)
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(nz):
        flat = rng.choice(nx * ny, size=count, replace=False)
        flat.sort()
        layers.append(np.stack([flat // ny, flat % ny], axis=1).astype(np.int64))
    return SampleMask(tuple(layers), rate, "random", seed)


def apply_mask(volume: RadioMapVolume, mask: SampleMask):
    """Zero out everything outside the mask; list the kept observations."""
    nx, ny, nz, nc = volume.data.shape
    if mask.nz != nz:
        raise ValueError(f"mask has {mask.nz} layers, volume has {nz}")
    masked = np.zeros_like(volume.data)
    coords = []
    values = []
    for k, idx in enumerate(mask.indices):
        if len(idx) and (idx[:, 0].max() >= nx or idx[:, 1].max() >= ny):
            raise ValueError("mask index out of bounds for volume")
        masked[idx[:, 0], idx[:, 1], k] = volume.data[idx[:, 0], idx[:, 1], k]
        coords.append(np.column_stack([idx, np.full(len(idx), k, dtype=np.int64)]))
        values.append(volume.data[idx[:, 0], idx[:, 1], k])
    obs = SparseObservations(np.concatenate(coords), np.concatenate(values))
    out = RadioMapVolume(masked, volume.normalized, volume.building_mask.copy(),
                         None if volume.reachable_mask is None
                         else volume.reachable_mask.copy())
    return obs, out


def interp_nearest(obs: SparseObservations, dims: tuple[int, int, int]) -> np.ndarray:
    """Dense (nx, ny, nz, C) field: each cell copies its nearest observation
    in the same height layer (Euclidean on cell indices, lexicographic ties).
    """
    if len(obs) == 0:
        raise ValueError("cannot interpolate an empty observation set")
    nx, ny, nz = dims
    nc = obs.values.shape[1]
    out = np.zeros((nx, ny, nz, nc), dtype=np.float64)
    cell_i, cell_j = np.meshgrid(np.arange(nx, dtype=np.int64),
                                 np.arange(ny, dtype=np.int64), indexing="ij")
    cells = np.stack([cell_i.ravel(), cell_j.ravel()], axis=1)
    for k in range(nz):
        sel = obs.coords[:, 2] == k
        pts = obs.coords[sel, :2]
        if len(pts) == 0:
            raise ValueError(f"no observations in height layer {k}")
        vals = obs.values[sel]
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        pts = pts[order]
        vals = vals[order]
        # Composite key: squared distance (exact integer) then site rank.
        best = np.empty(len(cells), dtype=np.int64)
        chunk = max(1, (1 << 22) // max(len(pts), 1))
        for s in range(0, len(cells), chunk):
            block = cells[s:s + chunk]
            d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
            key = d2 * len(pts) + np.arange(len(pts), dtype=np.int64)[None, :]
            best[s:s + chunk] = np.argmin(key, axis=1)
        out[cell_i.ravel(), cell_j.ravel(), k] = vals[best]
    return out
