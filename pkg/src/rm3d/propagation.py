"""Per-voxel pathgain / ToA / DoA fields from a single dominant path.

The solver is two-tier: receivers with line of sight to the transmitter get
the direct segment; obstructed receivers get the geodesic on the
26-connected free-voxel graph (best-first search, Euclidean heuristic,
lexicographic tie-breaking) which is then shortened by greedy string
pulling while line of sight holds between merged waypoints. Losses are
free-space plus a fixed penalty per remaining bend.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .scene import TxConfig, VoxelScene

C_M_PER_NS = 0.299792458
FSPL_CONST = 147.552

# 26-neighborhood offsets, lexicographic order.
_OFFSETS = [(di, dj, dk)
            for di in (-1, 0, 1) for dj in (-1, 0, 1) for dk in (-1, 0, 1)
            if (di, dj, dk) != (0, 0, 0)]


@dataclass(frozen=True)
class MaterialParams:
    """Interaction losses in dB. Reflection and transmission are carried for
    forward compatibility; the single-path solver applies only the
    diffraction term (one penalty per bend)."""

    diffraction_loss_per_bend: float = 8.0
    transmission_loss: float = 20.0
    reflection_loss: float = 9.0

    def __post_init__(self):
        if min(self.diffraction_loss_per_bend, self.transmission_loss, self.reflection_loss) < 0:
            raise ValueError("material losses must be non-negative")


@dataclass(frozen=True)
class DominantPath:
    """Polyline from transmitter to receiver.

    `length` is the smoothed polyline length. `graph_length` is the raw
    voxel-graph geodesic between the endpoint voxels (center to center);
    for line-of-sight pairs no search runs and it equals the straight-line
    distance. Unreachable receivers yield reachable=False, empty waypoints
    and infinite lengths.
    """

    waypoints: tuple[tuple[float, float, float], ...]
    length: float
    bends: int
    graph_length: float
    reachable: bool = True

    @staticmethod
    def unreachable_result() -> "DominantPath":
        return DominantPath((), math.inf, 0, math.inf, reachable=False)


@dataclass(frozen=True)
class VoxelChannel:
    pathgain_db: float
    toa_ns: float
    doa_azi: float
    doa_ele: float
    reachable: bool = True


def fspl(d, f):
    """Free-space pathloss in dB: 20*log10(d) + 20*log10(f) - 147.552.

    Accepts scalars or arrays; d in meters, f in Hz, both strictly positive.
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    if f <= 0:
        raise ValueError("frequency must be positive")
    out = 20.0 * np.log10(d) + 20.0 * math.log10(f) - FSPL_CONST
    return float(out) if out.ndim == 0 else out


def los_visible(scene: VoxelScene, a, b) -> bool:
    """Exact voxel walk along segment a->b; True iff no occupied voxel is hit.

    Incremental axis stepping; when the segment crosses a cell corner or
    edge exactly, all tied axes advance together, so corner-touching voxels
    do not count as traversed and the result is symmetric in (a, b).
    """
    if not (scene.contains_point(a) and scene.contains_point(b)):
        raise ValueError("line-of-sight endpoints must lie inside the scene")
    occ = scene.occupancy
    res = scene.resolution
    pos = (a[0] / res, a[1] / res, a[2] / res)
    delta = (b[0] / res - pos[0], b[1] / res - pos[1], b[2] / res - pos[2])
    vox = list(scene.voxel_of(a))
    end = list(scene.voxel_of(b))
    dims = (scene.nx, scene.ny, scene.nz)

    step = [0, 0, 0]
    t_max = [math.inf] * 3
    t_delta = [math.inf] * 3
    for ax in range(3):
        d = delta[ax]
        if d > 0:
            step[ax] = 1
            t_max[ax] = (vox[ax] + 1 - pos[ax]) / d
            t_delta[ax] = 1.0 / d
        elif d < 0:
            step[ax] = -1
            t_max[ax] = (vox[ax] - pos[ax]) / d
            t_delta[ax] = -1.0 / d

    guard = dims[0] + dims[1] + dims[2] + 3
    for _ in range(guard):
        if occ[vox[0], vox[1], vox[2]]:
            return False
        if vox == end:
            return True
        t = min(t_max)
        if t > 1.0:
            return True
        for ax in range(3):
            if t_max[ax] == t:
                vox[ax] += step[ax]
                t_max[ax] += t_delta[ax]
                if not (0 <= vox[ax] < dims[ax]):
                    return True
    return True


def _center(idx, res: float) -> tuple[float, float, float]:
    return ((idx[0] + 0.5) * res, (idx[1] + 0.5) * res, (idx[2] + 0.5) * res)


def _geodesic_field(scene: VoxelScene, src, goal=None):
    """Exact distances (meters) from src over the 26-connected free graph.

    With a goal, runs best-first with the Euclidean heuristic and stops once
    every node at distance <= dist[goal] is settled (enough to re-derive
    canonical predecessors); without one, settles the whole component.
    Returns (dist, settled): float and bool arrays over the grid.
    """
    occ = scene.occupancy
    res = scene.resolution
    nx, ny, nz = scene.nx, scene.ny, scene.nz
    dist = np.full((nx, ny, nz), math.inf, dtype=np.float64)
    done = np.zeros((nx, ny, nz), dtype=bool)
    if occ[src]:
        raise ValueError("source voxel is occupied")
    dist[src] = 0.0

    if goal is not None:
        gx, gy, gz = _center(goal, res)

        def heur(i, j, k):
            return math.sqrt(((i + 0.5) * res - gx) ** 2 + ((j + 0.5) * res - gy) ** 2
                             + ((k + 0.5) * res - gz) ** 2)
    else:
        def heur(i, j, k):
            return 0.0

    heap = [(heur(*src), src)]
    goal_dist = math.inf
    while heap:
        f, (i, j, k) = heapq.heappop(heap)
        if done[i, j, k]:
            continue
        done[i, j, k] = True
        g = dist[i, j, k]
        if goal is not None:
            if (i, j, k) == goal:
                goal_dist = g
            if f > goal_dist + 1e-9:
                break
        for di, dj, dk in _OFFSETS:
            ni, nj, nk = i + di, j + dj, k + dk
            if not (0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz):
                continue
            if occ[ni, nj, nk] or done[ni, nj, nk]:
                continue
            nd = g + res * math.sqrt(di * di + dj * dj + dk * dk)
            if nd < dist[ni, nj, nk]:
                dist[ni, nj, nk] = nd
                heapq.heappush(heap, (nd + heur(ni, nj, nk), (ni, nj, nk)))
    return dist, done


def _walk_back(scene: VoxelScene, dist: np.ndarray, done: np.ndarray, goal):
    """Canonical geodesic voxel chain src->goal from a settled distance field.

    At each node the predecessor is the lexicographically smallest settled
    neighbor u with dist[u] + w(u, v) == dist[v] (1e-9 relative tolerance).
    The chain is a pure function of the distance field, independent of
    search order, so tree reuse and per-receiver queries agree.
    """
    occ = scene.occupancy
    res = scene.resolution
    nx, ny, nz = scene.nx, scene.ny, scene.nz
    chain = [goal]
    v = goal
    guard = int(np.count_nonzero(~occ)) + 1
    for _ in range(guard):
        dv = dist[v]
        if dv == 0.0:
            break
        tol = 1e-9 * max(1.0, dv)
        best = None
        for di, dj, dk in _OFFSETS:
            u = (v[0] + di, v[1] + dj, v[2] + dk)
            if not (0 <= u[0] < nx and 0 <= u[1] < ny and 0 <= u[2] < nz):
                continue
            if occ[u] or not done[u]:
                continue
            w = res * math.sqrt(di * di + dj * dj + dk * dk)
            if abs(dist[u] + w - dv) <= tol and (best is None or u < best):
                best = u
        if best is None:
            raise RuntimeError("inconsistent distance field during path walk-back")
        chain.append(best)
        v = best
    chain.reverse()
    return chain


def _string_pull(scene: VoxelScene, pts: list) -> list:
    """Greedy smoothing: from each anchor jump to the farthest visible point."""
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not los_visible(scene, pts[i], pts[j]):
            j -= 1
        out.append(pts[j])
        i = j
    return out


def _polyline_length(pts) -> float:
    return float(sum(math.dist(pts[i], pts[i + 1]) for i in range(len(pts) - 1)))


def _path_from_chain(scene: VoxelScene, chain, tx, rx, graph_length: float) -> DominantPath:
    res = scene.resolution
    pts = [tuple(map(float, tx))] + [_center(v, res) for v in chain] + [tuple(map(float, rx))]
    dedup = [pts[0]]
    for p in pts[1:]:
        if p != dedup[-1]:
            dedup.append(p)
    smooth = _string_pull(scene, dedup) if len(dedup) > 2 else dedup
    return DominantPath(tuple(smooth), _polyline_length(smooth), max(len(smooth) - 2, 0),
                        graph_length)


def dominant_path(scene: VoxelScene, tx, rx) -> DominantPath:
    """Single strongest path between two free points (see module docstring)."""
    if not (scene.contains_point(tx) and scene.contains_point(rx)):
        raise ValueError("path endpoints must lie inside the scene")
    va = scene.voxel_of(tx)
    vb = scene.voxel_of(rx)
    if scene.occupancy[va] or scene.occupancy[vb]:
        raise ValueError("path endpoints must lie in free voxels")

    if los_visible(scene, tx, rx):
        d = math.dist(tx, rx)
        pts = (tuple(map(float, tx)), tuple(map(float, rx)))
        if pts[0] == pts[1]:
            pts = (pts[0],)
        return DominantPath(pts, d, 0, d)

    dist, done = _geodesic_field(scene, va, goal=vb)
    if not math.isfinite(dist[vb]):
        return DominantPath.unreachable_result()
    chain = _walk_back(scene, dist, done, vb)
    return _path_from_chain(scene, chain, tx, rx, float(dist[vb]))


def graph_geodesic(scene: VoxelScene, a, b) -> float:
    """Raw 26-connected voxel-graph distance between the voxels of a and b
    (center to center, meters); inf when disconnected."""
    va = scene.voxel_of(a)
    vb = scene.voxel_of(b)
    dist, _ = _geodesic_field(scene, va, goal=vb)
    return float(dist[vb])


def channel_from_path(path: DominantPath, tx: TxConfig, mat: MaterialParams,
                      min_distance: float = 0.5) -> VoxelChannel:
    """Channel entries for one receiver.

    pathgain = -(fspl(max(length, min_distance)) + bends * diffraction loss);
    toa uses the true length; DoA is taken from the arrival segment (unit
    vector from the receiver toward the previous waypoint). A zero-length
    arrival vector maps to azimuth 0, elevation 0.
    """
    if not path.reachable:
        return VoxelChannel(math.nan, math.nan, math.nan, math.nan, reachable=False)
    loss = fspl(max(path.length, min_distance), tx.frequency_hz)
    loss += path.bends * mat.diffraction_loss_per_bend
    toa = path.length / C_M_PER_NS
    norm = 0.0
    if len(path.waypoints) >= 2:
        rxp = path.waypoints[-1]
        prev = path.waypoints[-2]
        u = (prev[0] - rxp[0], prev[1] - rxp[1], prev[2] - rxp[2])
        norm = math.sqrt(u[0] ** 2 + u[1] ** 2 + u[2] ** 2)
    if norm == 0.0:
        azi = 0.0
        ele = 0.0
    else:
        azi = math.atan2(u[1], u[0]) % (2.0 * math.pi)
        ele = math.acos(max(-1.0, min(1.0, u[2] / norm)))
    return VoxelChannel(-loss, toa, azi, ele)


def _los_mask(scene: VoxelScene, tx_pos, free: np.ndarray) -> np.ndarray:
    """Line-of-sight flag for every free voxel center against one transmitter."""
    nx, ny, nz = scene.nx, scene.ny, scene.nz
    res = scene.resolution
    if not scene.occupancy.any():
        return free.copy()

    # Any ray whose bounding box misses the occupied bounding box is visible.
    occ_i, occ_j, occ_k = np.nonzero(scene.occupancy)
    lo = np.array([occ_i.min(), occ_j.min(), occ_k.min()], dtype=np.float64) * res
    hi = (np.array([occ_i.max(), occ_j.max(), occ_k.max()], dtype=np.float64) + 1.0) * res
    tx = np.asarray(tx_pos, dtype=np.float64)

    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    cx, cy, cz = (ii + 0.5) * res, (jj + 0.5) * res, (kk + 0.5) * res
    disjoint = (
        (np.maximum(cx, tx[0]) < lo[0]) | (np.minimum(cx, tx[0]) > hi[0]) |
        (np.maximum(cy, tx[1]) < lo[1]) | (np.minimum(cy, tx[1]) > hi[1]) |
        (np.maximum(cz, tx[2]) < lo[2]) | (np.minimum(cz, tx[2]) > hi[2])
    )
    mask = free & disjoint
    for i, j, k in zip(*np.nonzero(free & ~disjoint)):
        mask[i, j, k] = los_visible(scene, tx_pos, ((i + 0.5) * res, (j + 0.5) * res,
                                                    (k + 0.5) * res))
    return mask


def solve_volume(scene: VoxelScene, tx: TxConfig, mat: MaterialParams | None = None,
                 threads: int = 1):
    """Raw (un-normalized) channel volume for one transmitter.

    Returns a RadioMapVolume whose channels are [pathgain dB, DoA azimuth,
    DoA elevation, ToA ns]; building and unreachable voxels hold NaN and are
    flagged in the masks. One geodesic field is computed per transmitter and
    shared by all obstructed receivers; results equal per-receiver
    dominant_path calls.
    """
    from .dataset import CHANNELS, RadioMapVolume

    mat = mat or MaterialParams()
    if not scene.contains_point(tx.position):
        raise ValueError("transmitter lies outside the scene")
    if not scene.is_free(tx.position):
        raise ValueError("transmitter voxel is occupied")

    nx, ny, nz = scene.nx, scene.ny, scene.nz
    res = scene.resolution
    min_d = res / 2.0
    data = np.full((nx, ny, nz, len(CHANNELS)), np.nan, dtype=np.float64)
    reachable = np.zeros((nx, ny, nz), dtype=bool)
    free = ~scene.occupancy

    los = _los_mask(scene, tx.position, free)
    nlos = free & ~los
    dist = done = None
    if nlos.any():
        dist, done = _geodesic_field(scene, scene.voxel_of(tx.position))
    txp = tuple(float(v) for v in tx.position)

    # Every voxel goes through the same scalar path/channel code as
    # dominant_path + channel_from_path, so results agree bit-for-bit.
    def fill_layer(k: int) -> None:
        for i, j in zip(*np.nonzero(free[:, :, k])):
            idx = (int(i), int(j), k)
            rx = _center(idx, res)
            if los[idx]:
                d = math.dist(txp, rx)
                pts = (txp, rx) if txp != rx else (txp,)
                path = DominantPath(pts, d, 0, d)
            elif math.isfinite(dist[idx]):
                chain = _walk_back(scene, dist, done, idx)
                path = _path_from_chain(scene, chain, txp, rx, float(dist[idx]))
            else:
                continue
            ch = channel_from_path(path, tx, mat, min_distance=min_d)
            data[idx[0], idx[1], idx[2]] = (ch.pathgain_db, ch.doa_azi, ch.doa_ele, ch.toa_ns)
            reachable[idx] = True

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill_layer, range(nz)))
    else:
        for k in range(nz):
            fill_layer(k)

    return RadioMapVolume(
        data=data,
        normalized=False,
        building_mask=scene.occupancy.copy(),
        reachable_mask=reachable,
    )


def export_paths(path_file, scene: VoxelScene, tx: TxConfig, receivers) -> int:
    """One text record per receiver: `i j k n x0 y0 z0 x1 y1 z1 ...`."""
    n = 0
    with open(path_file, "w", encoding="ascii") as fh:
        for idx in receivers:
            p = dominant_path(scene, tx.position, _center(idx, scene.resolution))
            if not p.reachable:
                continue
            coords = " ".join(f"{c:.6f}" for w in p.waypoints for c in w)
            fh.write(f"{idx[0]} {idx[1]} {idx[2]} {len(p.waypoints)} {coords}\n")
            n += 1
    return n
