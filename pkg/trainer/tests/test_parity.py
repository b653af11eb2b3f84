"""Cross-component checks: exported weights drive the generation toolkit's
forward-only inference to the same numbers the trainer computed."""

import numpy as np
import pytest

from rm3d.denoiser import load_denoiser

from rm3d_trainer import rmio
from rm3d_trainer.data import SampleRef, SampleSet
from rm3d_trainer.train import TrainConfig, train_diffusion


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rng = np.random.default_rng(3)
    samples = SampleSet(rng.uniform(0, 1, (1, 32, 32, 4)).astype(np.float32),
                        rng.uniform(0, 1, (1, 3, 32, 32, 4)).astype(np.float32),
                        [SampleRef(0, 1, 1, "train")])
    train_diffusion(None, out, TrainConfig(steps=25, seed=3), samples=samples)
    return out


def test_parity_vector_reproduced(trained_run):
    den = load_denoiser(trained_run / "denoiser.txt", trained_run / "weights.rm3d")
    parity = rmio.load_records(trained_run / "parity.rm3d")
    out = den(parity["x"].astype(np.float64), int(parity["t"][0]),
              parity["cond"].astype(np.float64))
    worst = float(np.max(np.abs(out - parity["out"])))
    assert worst <= 1e-4
    print(f"[PASS] Cross-component parity: max |diff| {worst:.2e} <= 1e-4")


def test_ema_weights_loadable(trained_run):
    den = load_denoiser(trained_run / "denoiser.txt", trained_run / "weights_ema.rm3d")
    parity = rmio.load_records(trained_run / "parity.rm3d")
    out = den(parity["x"].astype(np.float64), int(parity["t"][0]),
              parity["cond"].astype(np.float64))
    assert out.shape == parity["out"].shape
    assert np.all(np.isfinite(out))


def test_descriptor_accepted_by_inference_side(trained_run):
    from rm3d.denoiser import DenoiserSpec
    spec = DenoiserSpec.parse((trained_run / "denoiser.txt").read_text())
    spec.validate()
    assert spec.cond_channels == 3
