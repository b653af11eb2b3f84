"""Trainer-side evaluation metrics, formula-for-formula with the
generation toolkit's definitions so reports cross-check within 1e-6."""

from __future__ import annotations

import math

import numpy as np


def error_metrics(pred: np.ndarray, truth: np.ndarray, dynamic_range: float = 1.0) -> dict:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    err = pred - truth
    mse = float(np.mean(err * err))
    energy = float(np.sum(truth * truth))
    if energy == 0.0:
        raise ValueError("NMSE undefined for all-zero truth")
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(dynamic_range ** 2 / mse)
    return {"mse": mse, "rmse": math.sqrt(mse), "nmse": float(np.sum(err * err)) / energy,
            "psnr": psnr}


def ssim_slice(x: np.ndarray, y: np.ndarray, window: int = 11, sigma: float = 1.5,
               k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    half = window // 2
    g = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    w = np.outer(g, g)
    w /= w.sum()

    def mean(img):
        view = np.lib.stride_tricks.sliding_window_view(img, (window, window))
        return np.einsum("ijkl,kl->ij", view, w)

    mx, my = mean(x), mean(y)
    vx = mean(x * x) - mx * mx
    vy = mean(y * y) - my * my
    cov = mean(x * y) - mx * my
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    return float(np.mean(((2 * mx * my + c1) * (2 * cov + c2))
                         / ((mx * mx + my * my + c1) * (vx + vy + c2))))


def volume_report(pred: np.ndarray, truth: np.ndarray, window: int = 11) -> dict:
    """Metrics for one (nx, ny, nz) channel volume; SSIM averaged per layer."""
    out = error_metrics(pred, truth)
    out["ssim"] = float(np.mean([ssim_slice(pred[:, :, k], truth[:, :, k], window=window)
                                 for k in range(truth.shape[2])]))
    return out
