"""Metric parity: trainer-side formulas against the generation toolkit's
`eval` command on identical tensors."""

import math

import numpy as np
import pytest

from conftest import run_cli
from rm3d_trainer import rmio
from rm3d_trainer.metrics import error_metrics, ssim_slice, volume_report


def save_volume(path, data):
    rmio.save_records(path, {
        "data": data.astype(np.float64),
        "building_mask": np.zeros(data.shape[:3], dtype=np.uint8),
        "normalized": np.asarray([1], dtype=np.uint8),
    })


def test_rmse_matches_primary_eval(tmp_path):
    rng = np.random.default_rng(0)
    truth = rng.uniform(0.05, 1, (16, 16, 3, 4))
    pred = np.clip(truth + rng.normal(0, 0.05, truth.shape), 0, 1)
    save_volume(tmp_path / "truth.rm3d", truth)
    save_volume(tmp_path / "pred.rm3d", pred)
    out = run_cli("eval", "--pred", tmp_path / "pred.rm3d", "--truth", tmp_path / "truth.rm3d",
                  "--ssim-window", 11)
    assert out.returncode == 0, out.stderr
    report = {}
    for line in out.stdout.strip().splitlines():
        chan, metric, value = line.split(",")
        report[(chan, metric)] = float(value) if value != "inf" else math.inf

    channels = ("pathgain", "doa_azi", "doa_ele", "toa")
    agg = {"rmse": [], "nmse": [], "ssim": [], "psnr": []}
    for c, chan in enumerate(channels):
        ours = volume_report(pred[..., c], truth[..., c])
        for metric in agg:
            assert abs(ours[metric] - report[(chan, metric)]) <= 1e-6, (chan, metric)
            agg[metric].append(ours[metric])
    for metric, vals in agg.items():
        assert abs(np.mean(vals) - report[("aggregate", metric)]) <= 1e-6
    print("[PASS] Metric parity: trainer report matches `eval` within 1e-6 on all channels")


def test_identity_through_shared_metrics(tmp_path):
    truth = np.random.default_rng(1).uniform(0.05, 1, (16, 16, 2, 4))
    save_volume(tmp_path / "t.rm3d", truth)
    out = run_cli("eval", "--pred", tmp_path / "t.rm3d", "--truth", tmp_path / "t.rm3d")
    assert out.returncode == 0
    assert "aggregate,ssim,1.0" in out.stdout
    assert "aggregate,rmse,0.0" in out.stdout
    ours = volume_report(truth[..., 0], truth[..., 0])
    assert ours["ssim"] == pytest.approx(1.0, abs=1e-12)


def test_scalar_definitions():
    out = error_metrics(np.array([0.9]), np.array([1.0]))
    assert out["psnr"] == pytest.approx(20.0, abs=1e-12)
    a = np.full((12, 12), 0.25)
    b = np.full((12, 12), 0.75)
    want = (2 * 0.25 * 0.75 + 1e-4) / (0.25 ** 2 + 0.75 ** 2 + 1e-4)
    assert ssim_slice(a, b) == pytest.approx(want, abs=1e-12)
