"""Procedural voxelized urban scenes and transmitter placement.

Scenes are extruded building footprints on a regular voxel grid: a per-cell
building height field plus the boolean occupancy it induces. All generators
are pure functions of their seed (PCG64 via numpy's default_rng), so a seed
reproduces a scene bit-exactly on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pngio, tensorio

DEFAULT_HEIGHT_RANGE = (6.6, 19.8)
DEFAULT_TX_HEIGHT = 1.5
DEFAULT_POWER_DBM = 23.0
DEFAULT_FREQ_HZ = 5.9e9


@dataclass(frozen=True)
class VoxelScene:
    """Occupancy grid plus the building-height field that generated it.

    Voxel (i, j, k) spans [i, i+1) x [j, j+1) x [k, k+1) in units of
    `resolution` meters; occupancy(i, j, k) is True iff k*resolution is
    below height_map(i, j).
    """

    nx: int
    ny: int
    nz: int
    resolution: float
    occupancy: np.ndarray
    height_map: np.ndarray

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) <= 0 or self.resolution <= 0:
            raise ValueError("scene extents and resolution must be positive")
        if self.occupancy.shape != (self.nx, self.ny, self.nz):
            raise ValueError("occupancy shape does not match extents")
        if self.height_map.shape != (self.nx, self.ny):
            raise ValueError("height_map shape does not match extents")
        self.occupancy.setflags(write=False)
        self.height_map.setflags(write=False)

    @property
    def size_m(self) -> tuple[float, float, float]:
        return (self.nx * self.resolution, self.ny * self.resolution, self.nz * self.resolution)

    def contains_point(self, p) -> bool:
        x, y, z = p
        sx, sy, sz = self.size_m
        return 0.0 <= x <= sx and 0.0 <= y <= sy and 0.0 <= z <= sz

    def voxel_of(self, p) -> tuple[int, int, int]:
        """Grid index of the voxel containing point p (boundary points clamp down)."""
        i = min(int(p[0] / self.resolution), self.nx - 1)
        j = min(int(p[1] / self.resolution), self.ny - 1)
        k = min(int(p[2] / self.resolution), self.nz - 1)
        return max(i, 0), max(j, 0), max(k, 0)

    def is_free(self, p) -> bool:
        i, j, k = self.voxel_of(p)
        return not self.occupancy[i, j, k]


def scene_from_height_map(height_map: np.ndarray, nz: int, resolution: float = 1.0) -> VoxelScene:
    """Build the occupancy grid induced by a height field (extrusion rule)."""
    hm = np.asarray(height_map, dtype=np.float64)
    nx, ny = hm.shape
    k_bottom = np.arange(nz, dtype=np.float64) * resolution
    occ = k_bottom[None, None, :] < hm[:, :, None]
    return VoxelScene(nx, ny, nz, resolution, occ, hm)


@dataclass(frozen=True)
class TxConfig:
    """Transmitter placement and radio parameters."""

    position: tuple[float, float, float]
    power_dbm: float = DEFAULT_POWER_DBM
    frequency_hz: float = DEFAULT_FREQ_HZ
    antenna: str = "isotropic"

    def __post_init__(self):
        if self.frequency_hz <= 0:
            raise ValueError("frequency must be positive")
        if self.antenna != "isotropic":
            raise ValueError(f"unsupported antenna type {self.antenna!r}")


@dataclass(frozen=True)
class SceneParams:
    """Knobs for the procedural generator; identical seed => identical scene."""

    seed: int = 0
    nx: int = 256
    ny: int = 256
    nz: int = 20
    resolution: float = 1.0
    building_count: tuple[int, int] = (8, 16)
    footprint_m: tuple[float, float] = (12.0, 48.0)
    street_margin_m: float = 4.0
    height_m: tuple[float, float] = DEFAULT_HEIGHT_RANGE

    def validate(self) -> None:
        if min(self.nx, self.ny, self.nz) <= 0 or self.resolution <= 0:
            raise ValueError("extents and resolution must be positive")
        lo, hi = self.building_count
        if lo < 0 or hi < lo:
            raise ValueError("building_count range is degenerate")
        flo, fhi = self.footprint_m
        if flo <= 0 or fhi < flo:
            raise ValueError("footprint range is degenerate")
        hlo, hhi = self.height_m
        if hlo <= 0 or hhi < hlo:
            raise ValueError("height range is degenerate")
        if self.street_margin_m < 0:
            raise ValueError("street margin must be non-negative")
        span_x = self.nx * self.resolution - 2 * self.street_margin_m
        span_y = self.ny * self.resolution - 2 * self.street_margin_m
        if hi > 0 and (flo > span_x or flo > span_y):
            raise ValueError("smallest footprint cannot fit inside the scene extents")


def generate_scene(params: SceneParams) -> VoxelScene:
    """Drop non-overlapping axis-aligned building extrusions onto a flat grid.

    Buildings are rejection-sampled: a candidate overlapping (margin
    included) a previously placed footprint is discarded. Footprints snap
    to whole voxels; heights stay real-valued within the configured range.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    res = params.resolution
    hm = np.zeros((params.nx, params.ny), dtype=np.float64)

    count = int(rng.integers(params.building_count[0], params.building_count[1] + 1))
    placed: list[tuple[int, int, int, int]] = []
    margin_vox = int(np.ceil(params.street_margin_m / res))
    attempts = 0
    max_attempts = 200 * max(count, 1)
    while len(placed) < count and attempts < max_attempts:
        attempts += 1
        w = int(round(rng.uniform(*params.footprint_m) / res))
        d = int(round(rng.uniform(*params.footprint_m) / res))
        w = max(1, min(w, params.nx - 2 * margin_vox))
        d = max(1, min(d, params.ny - 2 * margin_vox))
        if w <= 0 or d <= 0:
            break
        i0 = int(rng.integers(margin_vox, params.nx - margin_vox - w + 1))
        j0 = int(rng.integers(margin_vox, params.ny - margin_vox - d + 1))
        cand = (i0, j0, i0 + w, j0 + d)
        ok = True
        for (a0, b0, a1, b1) in placed:
            if cand[0] < a1 + margin_vox and cand[2] + margin_vox > a0 and \
               cand[1] < b1 + margin_vox and cand[3] + margin_vox > b0:
                ok = False
                break
        if not ok:
            continue
        h = float(rng.uniform(*params.height_m))
        hm[cand[0]:cand[2], cand[1]:cand[3]] = h
        placed.append(cand)

    scene = scene_from_height_map(hm, params.nz, res)
    if not (~scene.occupancy[:, :, 0]).any():
        raise ValueError("generated scene has no free ground voxel")
    return scene


def place_transmitters(scene: VoxelScene, n: int, seed: int,
                       tx_height: float = DEFAULT_TX_HEIGHT,
                       power_dbm: float = DEFAULT_POWER_DBM,
                       frequency_hz: float = DEFAULT_FREQ_HZ) -> list[TxConfig]:
    """Sample n distinct free-cell transmitter positions at a fixed height."""
    if n <= 0:
        raise ValueError("transmitter count must be positive")
    k = min(int(tx_height / scene.resolution), scene.nz - 1)
    free_i, free_j = np.nonzero(~scene.occupancy[:, :, k])
    if len(free_i) < n:
        raise ValueError(f"only {len(free_i)} free cells at height {tx_height} m, need {n}")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(free_i), size=n, replace=False)
    txs = []
    for idx in pick:
        x = (free_i[idx] + 0.5) * scene.resolution
        y = (free_j[idx] + 0.5) * scene.resolution
        txs.append(TxConfig((float(x), float(y), float(tx_height)), power_dbm, frequency_hz))
    return txs


def rasterize_condition_maps(scene: VoxelScene, tx: TxConfig,
                             max_bh: float = DEFAULT_HEIGHT_RANGE[1]):
    """Per-cell condition maps: building mask, normalized height, tx one-hot."""
    if not scene.contains_point(tx.position):
        raise ValueError("transmitter lies outside the scene bounds")
    seg = (scene.height_map > 0).astype(np.float64)
    height = scene.height_map / max_bh
    tx_map = np.zeros((scene.nx, scene.ny), dtype=np.float64)
    i, j, _ = scene.voxel_of(tx.position)
    tx_map[i, j] = 1.0
    return seg, height, tx_map


def save_scene(path: str | Path, scene: VoxelScene) -> None:
    tensorio.save_records(path, {
        "occupancy": scene.occupancy.astype(np.uint8),
        "height_map": scene.height_map.astype(np.float64),
        "resolution": np.asarray([scene.resolution], dtype=np.float64),
    })


def load_scene(path: str | Path) -> VoxelScene:
    rec = tensorio.load_records(path)
    occ = rec["occupancy"].astype(bool)
    nx, ny, nz = occ.shape
    return VoxelScene(nx, ny, nz, float(rec["resolution"][0]), occ,
                      rec["height_map"].astype(np.float64))


def export_height_png(path: str | Path, scene: VoxelScene,
                      max_bh: float = DEFAULT_HEIGHT_RANGE[1]) -> None:
    """8-bit height-map image: 0 for streets, height/max_bh scaled to 255."""
    norm = np.clip(scene.height_map / max_bh, 0.0, 1.0)
    pngio.write_gray8(path, np.floor(norm * 255.0 + 0.5).astype(np.uint8))
