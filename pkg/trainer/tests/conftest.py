import subprocess
import sys

import pytest


def run_cli(*argv) -> subprocess.CompletedProcess:
    """Invoke the generation toolkit through its command-line interface."""
    return subprocess.run([sys.executable, "-m", "rm3d.cli", *(str(a) for a in argv)],
                          capture_output=True, text=True)


def _make_dataset(root, tx_count: int, seed: int):
    scene_dir = root / "scene"
    out = run_cli("scene", "--out", scene_dir, "--seed", seed, "--buildings", 3,
                  "--nx", 32, "--ny", 32, "--nz", 4, "--tx", tx_count,
                  "--footprint-min", 4, "--footprint-max", 7, "--margin", 2)
    assert out.returncode == 0, out.stderr
    data = root / "data"
    out = run_cli("export", "--scene", scene_dir / "scene.rm3d",
                  "--txs", scene_dir / "tx.csv", "--out", data, "--seed", seed)
    assert out.returncode == 0, out.stderr
    return data


@pytest.fixture(scope="session")
def single_dataset(tmp_path_factory):
    """One 32x32x4 sample, for overfit/parity runs."""
    return _make_dataset(tmp_path_factory.mktemp("single"), tx_count=1, seed=5)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """50 transmitters over one 32x32x4 scene."""
    return _make_dataset(tmp_path_factory.mktemp("toy"), tx_count=50, seed=8)
