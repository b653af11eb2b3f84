import math

import numpy as np
import pytest

from rm3d.propagation import (C_M_PER_NS, MaterialParams, channel_from_path, dominant_path,
                              fspl, los_visible, solve_volume)
from rm3d.scene import TxConfig, scene_from_height_map

from _oracles import enumerate_min_path, visibility_min_polyline


def empty_scene(nx=10, ny=10, nz=2):
    return scene_from_height_map(np.zeros((nx, ny)), nz)


def wall_scene():
    # full-height wall filling the x=5 column
    hm = np.zeros((10, 6))
    hm[5, :] = 2.0
    return scene_from_height_map(hm, 2)


class TestLosVisible:
    def test_degenerate_segment_in_free_voxel(self):
        sc = empty_scene()
        assert los_visible(sc, (2.5, 2.5, 0.5), (2.5, 2.5, 0.5))

    def test_empty_scene_any_pair(self):
        sc = empty_scene()
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = tuple(rng.uniform(0.1, 9.9, 2)) + (rng.uniform(0.1, 1.9),)
            b = tuple(rng.uniform(0.1, 9.9, 2)) + (rng.uniform(0.1, 1.9),)
            assert los_visible(sc, a, b)

    def test_wall_blocks(self):
        sc = wall_scene()
        assert not los_visible(sc, (2.5, 2.5, 0.5), (8.5, 2.5, 0.5))

    def test_symmetric(self):
        sc = wall_scene()
        rng = np.random.default_rng(1)
        for _ in range(200):
            a = (rng.uniform(0.05, 9.95), rng.uniform(0.05, 5.95), rng.uniform(0.05, 1.95))
            b = (rng.uniform(0.05, 9.95), rng.uniform(0.05, 5.95), rng.uniform(0.05, 1.95))
            assert los_visible(sc, a, b) == los_visible(sc, b, a)

    def test_out_of_bounds_rejected(self):
        sc = empty_scene()
        with pytest.raises(ValueError):
            los_visible(sc, (-1.0, 2.0, 0.5), (3.0, 3.0, 0.5))


class TestFspl:
    def test_hand_value_1m(self):
        assert fspl(1.0, 5.9e9) == pytest.approx(47.86, abs=0.01)

    def test_hand_value_10m(self):
        assert fspl(10.0, 5.9e9) == pytest.approx(67.86, abs=0.01)

    def test_distance_doubling(self):
        for f in (1e9, 2.4e9, 5.9e9, 28e9):
            assert fspl(2.0, f) - fspl(1.0, f) == pytest.approx(20 * math.log10(2), abs=1e-9)

    def test_monotone(self):
        d = np.linspace(0.5, 500, 400)
        v = fspl(d, 5.9e9)
        assert np.all(np.diff(v) > 0)
        assert fspl(7.0, 6e9) > fspl(7.0, 5.9e9)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            fspl(0.0, 5.9e9)
        with pytest.raises(ValueError):
            fspl(1.0, 0.0)


class TestDominantPath:
    def test_los_straight_line(self):
        sc = empty_scene()
        p = dominant_path(sc, (1.5, 1.5, 0.5), (7.5, 1.5, 0.5))
        assert p.reachable
        assert p.length == pytest.approx(6.0, abs=1e-12)
        assert p.bends == 0
        assert len(p.waypoints) == 2

    def test_detour_matches_enumeration(self):
        # 5x5x1 grid with a 1x3 wall forcing a detour
        hm = np.zeros((5, 5))
        hm[2, 0:3] = 1.0
        sc = scene_from_height_map(hm, 1)
        va, vb = (0, 1, 0), (4, 1, 0)
        p = dominant_path(sc, (0.5, 1.5, 0.5), (4.5, 1.5, 0.5))
        assert p.reachable
        ok, raw_min = enumerate_min_path(sc.occupancy, 1.0, va, vb)
        assert ok
        assert p.graph_length == pytest.approx(raw_min, abs=1e-9)
        vis_min = visibility_min_polyline(sc, va, vb, los_visible)
        assert p.length == pytest.approx(vis_min, abs=1e-9)
        assert p.length <= p.graph_length + 1e-12

    def test_sealed_box_unreachable(self):
        hm = np.zeros((5, 5))
        hm[1:4, 1:4] = 2.0   # solid block ...
        hm[2, 2] = 0.0       # ... with a hollow center
        sc = scene_from_height_map(hm, 2)
        p = dominant_path(sc, (0.5, 0.5, 0.5), (2.5, 2.5, 0.5))
        assert not p.reachable
        assert math.isinf(p.length)

    def test_occupied_endpoint_rejected(self):
        sc = wall_scene()
        with pytest.raises(ValueError):
            dominant_path(sc, (5.5, 2.5, 0.5), (8.5, 2.5, 0.5))

    def test_waypoints_mutually_visible(self):
        hm = np.zeros((7, 7))
        hm[3, 0:5] = 2.0
        sc = scene_from_height_map(hm, 2)
        p = dominant_path(sc, (0.5, 0.5, 0.5), (6.5, 0.5, 0.5))
        assert p.reachable and p.bends >= 1
        for a, b in zip(p.waypoints, p.waypoints[1:]):
            assert los_visible(sc, a, b)
        assert p.length == pytest.approx(
            sum(math.dist(a, b) for a, b in zip(p.waypoints, p.waypoints[1:])), abs=1e-12)


def random_tiny_scene(rng):
    nx, ny = rng.integers(3, 6), rng.integers(3, 6)
    nz = int(rng.integers(1, 3))
    hm = np.zeros((nx, ny))
    for _ in range(rng.integers(0, 4)):
        i, j = rng.integers(0, nx), rng.integers(0, ny)
        hm[i, j] = float(rng.integers(1, nz + 1))
    return scene_from_height_map(hm, nz)


class TestPathProperties:
    def test_oracle_equivalence_sweep(self):
        rng = np.random.default_rng(42)
        checked = 0
        for _ in range(60):
            sc = random_tiny_scene(rng)
            free = np.argwhere(~sc.occupancy)
            if len(free) < 2:
                continue
            a, b = free[rng.choice(len(free), 2, replace=False)]
            va, vb = tuple(int(v) for v in a), tuple(int(v) for v in b)
            ca = ((va[0] + 0.5), (va[1] + 0.5), (va[2] + 0.5))
            cb = ((vb[0] + 0.5), (vb[1] + 0.5), (vb[2] + 0.5))
            ok, raw_min = enumerate_min_path(sc.occupancy, 1.0, va, vb)
            p = dominant_path(sc, ca, cb)
            assert p.reachable == ok
            if not ok:
                continue
            if p.bends > 0:
                assert p.graph_length == pytest.approx(raw_min, abs=1e-9)
            else:
                assert p.length == pytest.approx(math.dist(ca, cb), abs=1e-12)
                assert p.length <= raw_min + 1e-9
            assert p.length <= p.graph_length + 1e-12
            assert p.length >= math.dist(ca, cb) - 1e-12
            checked += 1
        assert checked >= 40

    def test_monotone_under_added_obstacle(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            sc = random_tiny_scene(rng)
            hm2 = sc.height_map.copy()
            free = np.argwhere(~sc.occupancy[:, :, 0])
            hm2[tuple(free[rng.integers(0, len(free))])] = sc.nz  # new full column
            sc2 = scene_from_height_map(hm2, sc.nz)
            for _ in range(6):
                cells = np.argwhere(~sc2.occupancy)
                if len(cells) < 2:
                    break
                a, b = cells[rng.choice(len(cells), 2, replace=False)]
                ca = tuple(float(v) + 0.5 for v in a)
                cb = tuple(float(v) + 0.5 for v in b)
                before = dominant_path(sc, ca, cb)
                after = dominant_path(sc2, ca, cb)
                if after.reachable:
                    assert after.graph_length >= before.graph_length - 1e-9
                    assert after.length >= before.length - 1e-9

    def test_toa_bound_and_angle_ranges(self):
        hm = np.zeros((6, 6))
        hm[2, 1:5] = 2.0
        sc = scene_from_height_map(hm, 2)
        tx = TxConfig((0.5, 0.5, 0.5))
        vol = solve_volume(sc, tx)
        mat = MaterialParams()
        for i in range(6):
            for j in range(6):
                for k in range(2):
                    if not vol.reachable_mask[i, j, k]:
                        continue
                    d = math.dist(tx.position, (i + 0.5, j + 0.5, k + 0.5))
                    toa = vol.data[i, j, k, 3]
                    assert toa * C_M_PER_NS >= d - 1e-9
                    assert 0.0 <= vol.data[i, j, k, 1] < 2 * math.pi
                    assert 0.0 <= vol.data[i, j, k, 2] <= math.pi


class TestChannelFromPath:
    def test_toa_from_c(self):
        sc = scene_from_height_map(np.zeros((2, 2)), 1, resolution=300.0)
        p = dominant_path(sc, (0.1, 0.1, 0.1), (299.892458, 0.1, 0.1))
        ch = channel_from_path(p, TxConfig((0.1, 0.1, 0.1)), MaterialParams())
        assert ch.toa_ns == pytest.approx(1000.0, abs=1e-9)

    def test_axis_aligned_doa(self):
        sc = empty_scene()
        # receiver due east of the transmitter at equal height
        p = dominant_path(sc, (1.5, 2.5, 0.5), (7.5, 2.5, 0.5))
        ch = channel_from_path(p, TxConfig((1.5, 2.5, 0.5)), MaterialParams())
        assert ch.doa_azi == pytest.approx(math.pi, abs=1e-12)
        assert ch.doa_ele == pytest.approx(math.pi / 2, abs=1e-12)

    def test_bend_loss_composition(self):
        from rm3d.propagation import DominantPath
        path = DominantPath(((0.0, 0.0, 0.0), (4.0, 0.0, 0.0), (4.0, 3.0, 0.0),
                             (4.0, 3.0, 3.0)), 10.0, 2, 10.0)
        ch = channel_from_path(path, TxConfig((0, 0, 0)), MaterialParams())
        assert ch.pathgain_db == pytest.approx(-(67.86 + 16.0), abs=0.01)

    def test_unreachable_sentinel(self):
        from rm3d.propagation import DominantPath
        ch = channel_from_path(DominantPath.unreachable_result(), TxConfig((0, 0, 0)),
                               MaterialParams())
        assert not ch.reachable and math.isnan(ch.pathgain_db)


class TestSolveVolume:
    def test_all_free_exact_los(self):
        sc = empty_scene(8, 8, 2)
        tx = TxConfig((3.5, 3.5, 0.5))
        vol = solve_volume(sc, tx)
        for i in range(8):
            for j in range(8):
                for k in range(2):
                    d = math.dist(tx.position, (i + 0.5, j + 0.5, k + 0.5))
                    expect = -fspl(max(d, 0.5), tx.frequency_hz)
                    assert vol.data[i, j, k, 0] == pytest.approx(expect, abs=1e-12)
                    assert vol.data[i, j, k, 3] == pytest.approx(d / C_M_PER_NS, abs=1e-12)

    def test_tx_adjacent_voxel(self):
        sc = empty_scene(8, 8, 1)
        tx = TxConfig((3.5, 3.5, 0.5))
        vol = solve_volume(sc, tx)
        assert vol.data[4, 3, 0, 0] == pytest.approx(-47.86, abs=0.01)

    def test_nlos_bounded_by_los_gain(self):
        hm = np.zeros((8, 8))
        hm[4, 2:6] = 2.0
        sc = scene_from_height_map(hm, 2)
        tx = TxConfig((1.5, 3.5, 0.5))
        vol = solve_volume(sc, tx)
        nlos_seen = 0
        for i in range(8):
            for j in range(8):
                for k in range(2):
                    if not vol.reachable_mask[i, j, k]:
                        continue
                    d = math.dist(tx.position, (i + 0.5, j + 0.5, k + 0.5))
                    los_gain = -fspl(max(d, 0.5), tx.frequency_hz)
                    assert vol.data[i, j, k, 0] <= los_gain + 1e-9
                    if vol.data[i, j, k, 0] < los_gain - 1e-9:
                        nlos_seen += 1
        assert nlos_seen > 0

    def test_matches_per_voxel_dominant_path(self):
        hm = np.zeros((6, 5))
        hm[3, 0:3] = 2.0
        hm[1, 3] = 1.0
        sc = scene_from_height_map(hm, 2)
        tx = TxConfig((0.5, 0.5, 0.5))
        vol = solve_volume(sc, tx)
        mat = MaterialParams()
        for i in range(6):
            for j in range(5):
                for k in range(2):
                    if sc.occupancy[i, j, k]:
                        assert vol.building_mask[i, j, k]
                        continue
                    p = dominant_path(sc, tx.position, (i + 0.5, j + 0.5, k + 0.5))
                    ch = channel_from_path(p, tx, mat, min_distance=0.5)
                    assert vol.data[i, j, k, 0] == ch.pathgain_db
                    assert vol.data[i, j, k, 1] == ch.doa_azi
                    assert vol.data[i, j, k, 2] == ch.doa_ele
                    assert vol.data[i, j, k, 3] == ch.toa_ns

    def test_thread_count_invariance(self):
        hm = np.zeros((7, 7))
        hm[3, 1:6] = 2.0
        sc = scene_from_height_map(hm, 2)
        tx = TxConfig((0.5, 0.5, 0.5))
        a = solve_volume(sc, tx, threads=1)
        b = solve_volume(sc, tx, threads=3)
        assert np.array_equal(a.data, b.data, equal_nan=True)

    def test_symmetry_all_free(self):
        sc = empty_scene(9, 9, 2)
        tx = TxConfig((4.5, 4.5, 0.5))   # exact grid center
        vol = solve_volume(sc, tx)
        g = vol.data[..., 0]
        assert np.allclose(g, g[::-1, :, :], atol=1e-12)
        assert np.allclose(g, g[:, ::-1, :], atol=1e-12)


class TestExportPaths:
    def test_records_one_line_per_reachable_receiver(self, tmp_path):
        hm = np.zeros((6, 6))
        hm[3, 0:4] = 2.0
        sc = scene_from_height_map(hm, 2)
        tx = TxConfig((0.5, 0.5, 0.5))
        from rm3d.propagation import export_paths
        receivers = [(i, j, 0) for i in range(6) for j in range(6)
                     if not sc.occupancy[i, j, 0]]
        n = export_paths(tmp_path / "rays.txt", sc, tx, receivers)
        lines = (tmp_path / "rays.txt").read_text().strip().splitlines()
        assert n == len(lines) == len(receivers)
        for line in lines:
            parts = line.split()
            i, j, k, count = (int(v) for v in parts[:4])
            coords = [float(v) for v in parts[4:]]
            assert len(coords) == 3 * count
            assert (coords[0], coords[1], coords[2]) == tx.position
