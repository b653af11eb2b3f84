"""Prediction quality metrics: MSE, RMSE, NMSE, PSNR and windowed SSIM.

SSIM follows the standard Gaussian-window formulation (11x11 window,
sigma 1.5, K1=0.01, K2=0.03) over valid window positions only. Volume
evaluation computes error metrics per channel over the full tensor and
SSIM per height slice, averaged across slices and channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import CHANNELS, RadioMapVolume

METRIC_NAMES = ("mse", "rmse", "nmse", "ssim", "psnr")


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 3:
            raise ValueError("SSIM window must be odd and >= 3")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("K1 and K2 must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2.0


@dataclass
class MetricReport:
    per_channel: dict[str, dict[str, float]]
    aggregate: dict[str, float]
    voxel_count: int
    mask_note: str = ""

    def lines(self) -> list[str]:
        """Serialize as `channel,metric,value` records (inf spelled out)."""
        out = []
        for chan, metrics in [*self.per_channel.items(), ("aggregate", self.aggregate)]:
            for m in METRIC_NAMES:
                v = metrics[m]
                out.append(f"{chan},{m},{'inf' if math.isinf(v) else repr(v)}")
        return out


def error_metrics(pred: np.ndarray, truth: np.ndarray,
                  dynamic_range: float = 1.0) -> dict[str, float]:
    """MSE family over flattened tensors.

    PSNR = 10*log10(L^2 / MSE); a perfect prediction reports PSNR as the
    inf marker. NMSE divides by the truth energy and is undefined (error)
    for an all-zero truth.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    energy = float(np.sum(truth * truth))
    if energy == 0.0:
        raise ValueError("NMSE undefined: ground truth is all-zero")
    err = pred - truth
    mse = float(np.mean(err * err))
    nmse = float(np.sum(err * err)) / energy
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(dynamic_range ** 2 / mse)
    return {"mse": mse, "rmse": math.sqrt(mse), "nmse": nmse, "psnr": psnr}


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    g = np.exp(-0.5 * (np.arange(-half, half + 1, dtype=np.float64) / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(pred: np.ndarray, truth: np.ndarray, cfg: SsimConfig | None = None) -> float:
    """Mean local SSIM between two 2D slices over valid window positions."""
    cfg = cfg or SsimConfig()
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < cfg.window:
        raise ValueError(f"slice {x.shape} smaller than SSIM window {cfg.window}")

    w = _gaussian_window(cfg.window, cfg.sigma)

    def local_mean(img: np.ndarray) -> np.ndarray:
        view = np.lib.stride_tricks.sliding_window_view(img, (cfg.window, cfg.window))
        return np.einsum("ijkl,kl->ij", view, w)

    mu_x = local_mean(x)
    mu_y = local_mean(y)
    var_x = local_mean(x * x) - mu_x * mu_x
    var_y = local_mean(y * y) - mu_y * mu_y
    cov = local_mean(x * y) - mu_x * mu_y
    c1, c2 = cfg.c1, cfg.c2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def evaluate_volume(pred: RadioMapVolume, truth: RadioMapVolume,
                    cfg: SsimConfig | None = None,
                    exclude_buildings: bool = False) -> MetricReport:
    """Full report over two normalized volumes (see module docstring).

    With exclude_buildings, error metrics skip building voxels; SSIM always
    runs on the full slices (building zeros are part of the stored maps).
    """
    cfg = cfg or SsimConfig()
    if pred.normalized != truth.normalized:
        raise ValueError("cannot compare volumes with mixed normalization states")
    if pred.data.shape != truth.data.shape:
        raise ValueError("volume shape mismatch")
    nz = truth.data.shape[2]

    keep = None
    if exclude_buildings:
        keep = ~truth.building_mask
    per_channel: dict[str, dict[str, float]] = {}
    for c, name in enumerate(CHANNELS):
        p = pred.data[..., c]
        t = truth.data[..., c]
        if keep is not None:
            p, t = p[keep], t[keep]
        entry = error_metrics(p, t, cfg.dynamic_range)
        entry["ssim"] = float(np.mean([ssim(pred.data[:, :, k, c], truth.data[:, :, k, c], cfg)
                                       for k in range(nz)]))
        per_channel[name] = entry

    aggregate = {m: float(np.mean([per_channel[n][m] for n in CHANNELS]))
                 for m in METRIC_NAMES}
    return MetricReport(
        per_channel=per_channel,
        aggregate=aggregate,
        voxel_count=int(np.prod(truth.data.shape[:3])),
        mask_note="buildings excluded from error metrics" if exclude_buildings else "",
    )
