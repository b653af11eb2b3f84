"""Dataset-tree loader: normalized channel volumes plus condition stacks.

Reads the exported layout (`<modality>/h<k>/<BID>_<x>X_<y>Y.rm3d` float32
slices, `manifest.csv`, `scene.rm3d`) and derives the three condition maps
from the scene record: building segmentation, building height scaled by
the 19.8 m ceiling, and the transmitter one-hot. An optional sampling map
(target values kept on a per-layer random subset, zero elsewhere) extends
the stack to four channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rmio

CHANNELS = ("pathgain", "doa_azi", "doa_ele", "toa")
MODALITY_DIRS = {"pathgain": "pathLoss", "doa_azi": "Doa_Azi", "doa_ele": "Doa_Ele",
                 "toa": "ToA"}
MAX_BUILDING_HEIGHT = 19.8


@dataclass(frozen=True)
class SampleRef:
    bid: int
    tx_x: int
    tx_y: int
    split: str


def read_manifest(root: Path) -> list[SampleRef]:
    refs = []
    for line in (root / "manifest.csv").read_text(encoding="ascii").splitlines():
        if not line.strip():
            continue
        bid, x, y, split = line.split(",")
        refs.append(SampleRef(int(bid), int(x), int(y), split))
    return refs


def load_volume(root: Path, ref: SampleRef, nz: int, channel: str) -> np.ndarray:
    """One normalized channel as (nx, ny, nz) float32."""
    name = f"{ref.bid}_{ref.tx_x}X_{ref.tx_y}Y.rm3d"
    slices = []
    for k in range(1, nz + 1):
        path = root / MODALITY_DIRS[channel] / f"h{k}" / name
        if not path.exists():
            raise FileNotFoundError(f"dataset layout violation: missing {path}")
        slices.append(rmio.load_tensor(path).astype(np.float32))
    return np.stack(slices, axis=2)


def scene_maps(root: Path) -> tuple[np.ndarray, np.ndarray]:
    rec = rmio.load_records(root / "scene.rm3d")
    hm = rec["height_map"].astype(np.float32)
    seg = (hm > 0).astype(np.float32)
    return seg, np.clip(hm / MAX_BUILDING_HEIGHT, 0.0, 1.0).astype(np.float32)


def count_heights(root: Path) -> int:
    first = root / MODALITY_DIRS[CHANNELS[0]]
    ks = [int(p.name[1:]) for p in first.glob("h*") if p.name[1:].isdigit()]
    if not ks:
        raise FileNotFoundError(f"dataset layout violation: no height folders in {first}")
    return max(ks)


def random_layer_mask(nx: int, ny: int, nz: int, rate: float, seed: int) -> np.ndarray:
    """Boolean (nx, ny, nz) with floor(rate*nx*ny) cells per layer."""
    count = int(np.floor(rate * nx * ny))
    rng = np.random.default_rng(seed)
    out = np.zeros((nx, ny, nz), dtype=bool)
    for k in range(nz):
        flat = rng.choice(nx * ny, size=count, replace=False)
        out[flat // ny, flat % ny, k] = True
    return out


@dataclass
class SampleSet:
    """In-memory toy dataset: targets (N, nx, ny, nz) and condition stacks
    (N, C, nx, ny, nz), both float32 and ready for NCXYZ batching."""

    targets: np.ndarray
    conditions: np.ndarray
    refs: list[SampleRef]


def load_samples(root: str | Path, channel: str = "pathgain", split: str | None = None,
                 sampling_rate: float | None = None, sampling_seed: int = 0) -> SampleSet:
    root = Path(root)
    refs = [r for r in read_manifest(root) if split is None or r.split == split]
    if not refs:
        raise ValueError(f"no samples for split {split!r} in {root}")
    nz = count_heights(root)
    seg, height = scene_maps(root)
    nx, ny = seg.shape
    targets = np.zeros((len(refs), nx, ny, nz), dtype=np.float32)
    c_extra = 1 if sampling_rate else 0
    conds = np.zeros((len(refs), 3 + c_extra, nx, ny, nz), dtype=np.float32)
    for i, ref in enumerate(refs):
        vol = load_volume(root, ref, nz, channel)
        targets[i] = vol
        tx_map = np.zeros((nx, ny), dtype=np.float32)
        tx_map[ref.tx_x, ref.tx_y] = 1.0
        conds[i, 0] = seg[:, :, None]
        conds[i, 1] = height[:, :, None]
        conds[i, 2] = tx_map[:, :, None]
        if sampling_rate:
            mask = random_layer_mask(nx, ny, nz, sampling_rate, sampling_seed + i)
            conds[i, 3] = np.where(mask, vol, 0.0)
    return SampleSet(targets, conds, refs)
