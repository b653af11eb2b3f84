"""Volume normalization, quantization, export/import and dataset splits.

Exported sample layout (per modality, per height layer)::

    <root>/<modality>/h<k>/<BID>_<x>X_<y>Y.png    8-bit quantized slice
    <root>/<modality>/h<k>/<BID>_<x>X_<y>Y.rm3d   float32 normalized slice

with modality directories pathLoss, Doa_Azi, Doa_Ele, ToA plus a
propagation_ray directory for optional path polylines, and height folders
h1..h<nz>. The manifest is a text file of `BID,x,y,split` lines.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import pngio, tensorio

CHANNELS = ("pathgain", "doa_azi", "doa_ele", "toa")
MODALITY_DIRS = {"pathgain": "pathLoss", "doa_azi": "Doa_Azi", "doa_ele": "Doa_Ele", "toa": "ToA"}
RAY_DIR = "propagation_ray"
FILENAME_RE = re.compile(r"^([0-9]+)_([0-9]+)X_([0-9]+)Y\.png$")


@dataclass
class RadioMapVolume:
    """4D channel tensor (nx, ny, nz, 4) plus its masks.

    Channel order follows CHANNELS. In a raw volume, building and
    unreachable voxels hold NaN; once normalized, every value lies in
    [0, 1] and masked voxels are exactly 0.
    """

    data: np.ndarray
    normalized: bool
    building_mask: np.ndarray
    reachable_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[3] != len(CHANNELS):
            raise ValueError(f"expected (nx, ny, nz, {len(CHANNELS)}) data, got {self.data.shape}")
        if self.building_mask.shape != self.data.shape[:3]:
            raise ValueError("building mask shape mismatch")
        if self.reachable_mask is not None and self.reachable_mask.shape != self.data.shape[:3]:
            raise ValueError("reachable mask shape mismatch")

    @property
    def shape(self):
        return self.data.shape

    def channel(self, name: str) -> np.ndarray:
        return self.data[..., CHANNELS.index(name)]


@dataclass(frozen=True)
class ChannelThresholds:
    """Global clamp range per channel, in native units."""

    pathgain: tuple[float, float] = (-169.0, -92.0)
    doa_azi: tuple[float, float] = (0.0, 6.3)
    doa_ele: tuple[float, float] = (0.5, 2.25)
    toa: tuple[float, float] = (0.0, 1180.0)

    def __post_init__(self):
        for name in CHANNELS:
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"threshold min must be below max for {name}")

    def bounds(self, name: str) -> tuple[float, float]:
        return getattr(self, name)

    def write(self, path: str | Path) -> None:
        lines = [f"{name},{lo},{hi}" for name in CHANNELS for lo, hi in [self.bounds(name)]]
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")

    @staticmethod
    def read(path: str | Path) -> "ChannelThresholds":
        vals = {}
        for line in Path(path).read_text(encoding="ascii").splitlines():
            if not line.strip():
                continue
            name, lo, hi = line.split(",")
            vals[name] = (float(lo), float(hi))
        return ChannelThresholds(**vals)


@dataclass(frozen=True)
class ManifestRecord:
    bid: int
    tx_x: int
    tx_y: int
    split: str = ""


@dataclass
class DatasetManifest:
    records: list[ManifestRecord] = field(default_factory=list)
    split_seed: int | None = None

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.split or "unsplit"] = out.get(r.split or "unsplit", 0) + 1
        return out

    def write(self, path: str | Path) -> None:
        lines = [f"{r.bid},{r.tx_x},{r.tx_y},{r.split}" for r in self.records]
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")

    @staticmethod
    def read(path: str | Path) -> "DatasetManifest":
        recs = []
        for line in Path(path).read_text(encoding="ascii").splitlines():
            if not line.strip():
                continue
            bid, x, y, split = line.split(",")
            recs.append(ManifestRecord(int(bid), int(x), int(y), split))
        return DatasetManifest(recs)


def normalize(volume: RadioMapVolume, thr: ChannelThresholds | None = None) -> RadioMapVolume:
    """Per-channel affine map onto [0, 1] with clamping at both ends.

    Values below the channel minimum clamp to 0 and above the maximum to 1;
    building and unreachable voxels are forced to exactly 0.
    """
    if volume.normalized:
        raise ValueError("volume is already normalized")
    thr = thr or ChannelThresholds()
    out = np.empty_like(volume.data)
    for c, name in enumerate(CHANNELS):
        lo, hi = thr.bounds(name)
        out[..., c] = np.clip((volume.data[..., c] - lo) / (hi - lo), 0.0, 1.0)
    masked = volume.building_mask.copy()
    if volume.reachable_mask is not None:
        masked |= ~volume.reachable_mask
    out[masked] = 0.0
    out = np.nan_to_num(out, nan=0.0)
    return RadioMapVolume(out, True, volume.building_mask.copy(),
                          None if volume.reachable_mask is None else volume.reachable_mask.copy())


def quantize_u8(volume: RadioMapVolume) -> np.ndarray:
    """Map a normalized volume to uint8 codes: round-half-up of v * 255."""
    if not volume.normalized:
        raise ValueError("quantization requires a normalized volume")
    return np.floor(volume.data * 255.0 + 0.5).astype(np.uint8)


def dequantize_u8(codes: np.ndarray) -> np.ndarray:
    return codes.astype(np.float64) / 255.0


def sample_filename(bid: int, tx_x: int, tx_y: int) -> str:
    return f"{bid}_{tx_x}X_{tx_y}Y.png"


def parse_filename(name: str) -> tuple[int, int, int]:
    """Extract (BID, x, y) from `<BID>_<x>X_<y>Y.png`; reject anything else."""
    m = FILENAME_RE.match(name)
    if not m:
        raise ValueError(f"malformed sample filename: {name!r}")
    return int(m.group(1)), int(m.group(2)), int(m.group(3))


def export_sample(root: str | Path, bid: int, tx_xy: tuple[int, int],
                  volume: RadioMapVolume, force: bool = False) -> ManifestRecord:
    """Write one sample's PNG + RM3D slices across all modalities and heights."""
    if not volume.normalized:
        raise ValueError("export requires a normalized volume")
    root = Path(root)
    codes = quantize_u8(volume)
    name = sample_filename(bid, tx_xy[0], tx_xy[1])
    nz = volume.data.shape[2]
    for c, chan in enumerate(CHANNELS):
        for k in range(nz):
            hdir = root / MODALITY_DIRS[chan] / f"h{k + 1}"
            hdir.mkdir(parents=True, exist_ok=True)
            png_path = hdir / name
            if png_path.exists() and not force:
                raise FileExistsError(f"refusing to overwrite {png_path}")
            # PNG rows follow the y axis so images render with x across.
            pngio.write_gray8(png_path, codes[:, :, k, c].T)
            tensorio.save_tensor(png_path.with_suffix(".rm3d"),
                                 volume.data[:, :, k, c].astype(np.float32))
    (root / RAY_DIR).mkdir(parents=True, exist_ok=True)
    return ManifestRecord(bid, tx_xy[0], tx_xy[1])


def import_sample(root: str | Path, bid: int, tx_xy: tuple[int, int],
                  nz: int | None = None) -> np.ndarray:
    """Read one sample back as the uint8 code tensor (nx, ny, nz, 4)."""
    root = Path(root)
    name = sample_filename(bid, tx_xy[0], tx_xy[1])
    got_bid, got_x, got_y = parse_filename(name)
    if (got_bid, got_x, got_y) != (bid, tx_xy[0], tx_xy[1]):
        raise ValueError(f"filename round-trip mismatch for {name!r}")

    first_dir = root / MODALITY_DIRS[CHANNELS[0]]
    if nz is None:
        heights = sorted(int(p.name[1:]) for p in first_dir.glob("h*") if p.name[1:].isdigit())
        if not heights:
            raise ValueError(f"no height folders under {first_dir}")
        nz = max(heights)
    slices: np.ndarray | None = None
    for c, chan in enumerate(CHANNELS):
        for k in range(nz):
            p = root / MODALITY_DIRS[chan] / f"h{k + 1}" / name
            if not p.exists():
                raise ValueError(f"missing sample slice: {p}")
            img = pngio.read_gray8(p).T
            if slices is None:
                slices = np.zeros(img.shape + (nz, len(CHANNELS)), dtype=np.uint8)
            if img.shape != slices.shape[:2]:
                raise ValueError(f"dimension mismatch in {p}: {img.shape} vs {slices.shape[:2]}")
            slices[:, :, k, c] = img
    return slices


def split_dataset(manifest: DatasetManifest, ratio: float = 0.9,
                  seed: int = 0) -> DatasetManifest:
    """Shuffle record indices and tag the first floor(ratio*N) as train."""
    n = len(manifest.records)
    if n < 2:
        raise ValueError("need at least two records to split")
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(ratio * n))
    train_idx = set(int(i) for i in order[:n_train])
    recs = [replace(r, split="train" if i in train_idx else "test")
            for i, r in enumerate(manifest.records)]
    return DatasetManifest(recs, split_seed=seed)
