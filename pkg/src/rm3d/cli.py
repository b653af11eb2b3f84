"""Command-line surface: scene/solve/export/mask/eval/diffuse pipelines.

Every flag can also come from a `--config` file of flat key=value lines
(explicit flags win); `--print-config` echoes the effective configuration
in that same format. Exit codes: 0 ok, 2 validation failure, 3 assertion
failure. RM3D_THREADS is the fallback for --threads. Figures are written
as files (PGM/PNG, identity grayscale colormap over the uint8 codes).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset, diffusion, metrics, pngio, propagation, sampling, scene, tensorio
from .denoiser import load_denoiser


def _threads_default() -> int:
    try:
        return max(int(os.environ.get("RM3D_THREADS", "1")), 1)
    except ValueError:
        return 1


def _apply_config(subparser: argparse.ArgumentParser, config_path: str) -> None:
    """Install key=value file entries as subcommand defaults (flags still win)."""
    known = {a.dest for a in subparser._actions}
    overrides = {}
    for line in Path(config_path).read_text(encoding="ascii").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line (want key=value): {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        overrides[key] = value
    subparser.set_defaults(**overrides)


def _print_config(args: argparse.Namespace) -> None:
    skip = {"config", "print_config", "func", "command"}
    for key in sorted(vars(args)):
        if key in skip:
            continue
        value = getattr(args, key)
        if value is None:
            continue
        print(f"{key}={value}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file supplying flag defaults")
    p.add_argument("--print-config", action="store_true", dest="print_config",
                   help="echo the effective configuration before running")
    p.add_argument("--threads", type=int, default=_threads_default(),
                   help="worker cap (env RM3D_THREADS)")


def _write_pgm(path: Path, img: np.ndarray) -> None:
    head = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(head + img.tobytes())


def _save_volume(path: Path, vol: dataset.RadioMapVolume) -> None:
    rec = {
        "data": vol.data.astype(np.float64),
        "building_mask": vol.building_mask.astype(np.uint8),
        "normalized": np.asarray([1 if vol.normalized else 0], dtype=np.uint8),
    }
    if vol.reachable_mask is not None:
        rec["reachable_mask"] = vol.reachable_mask.astype(np.uint8)
    tensorio.save_records(path, rec)


def _load_volume(path: Path) -> dataset.RadioMapVolume:
    rec = tensorio.load_records(path)
    reach = rec.get("reachable_mask")
    return dataset.RadioMapVolume(
        data=rec["data"].astype(np.float64),
        normalized=bool(rec["normalized"][0]),
        building_mask=rec["building_mask"].astype(bool),
        reachable_mask=None if reach is None else reach.astype(bool),
    )


def cmd_scene(args) -> int:
    params = scene.SceneParams(
        seed=args.seed, nx=args.nx, ny=args.ny, nz=args.nz, resolution=args.res,
        building_count=(args.buildings, args.buildings),
        footprint_m=(args.footprint_min, args.footprint_max),
        street_margin_m=args.margin,
    )
    sc = scene.generate_scene(params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene.save_scene(out / "scene.rm3d", sc)
    scene.export_height_png(out / "height.png", sc)
    if args.tx > 0:
        txs = scene.place_transmitters(sc, args.tx, seed=args.seed, tx_height=args.tx_height)
        lines = [f"{t.position[0]},{t.position[1]},{t.position[2]},{t.power_dbm},"
                 f"{t.frequency_hz}" for t in txs]
        (out / "tx.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    print(f"scene written to {out} ({args.buildings} buildings, {args.tx} transmitters)")
    return 0


def _read_tx_list(path: Path) -> list[scene.TxConfig]:
    txs = []
    for line in path.read_text(encoding="ascii").splitlines():
        if not line.strip():
            continue
        x, y, z, p, f = (float(v) for v in line.split(","))
        txs.append(scene.TxConfig((x, y, z), p, f))
    return txs


def cmd_solve(args) -> int:
    sc = scene.load_scene(args.scene)
    x, y, z = (float(v) for v in args.tx.split(","))
    tx = scene.TxConfig((x, y, z), frequency_hz=args.freq)
    vol = propagation.solve_volume(sc, tx, threads=args.threads)
    if args.normalize:
        vol = dataset.normalize(vol)
    _save_volume(Path(args.out), vol)
    print(f"solved volume {vol.data.shape} -> {args.out}")
    return 0


def cmd_export(args) -> int:
    sc = scene.load_scene(args.scene)
    txs = _read_tx_list(Path(args.txs))
    thr = dataset.ChannelThresholds()
    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    thr.write(root / "thresholds.csv")
    scene.save_scene(root / "scene.rm3d", sc)
    manifest = dataset.DatasetManifest()
    for tx in txs:
        raw = propagation.solve_volume(sc, tx, threads=args.threads)
        norm = dataset.normalize(raw, thr)
        i, j, _ = sc.voxel_of(tx.position)
        rec = dataset.export_sample(root, args.bid, (i, j), norm, force=args.force)
        if args.rays > 0:
            receivers = [idx for n, idx in enumerate(np.ndindex(sc.nx, sc.ny, sc.nz))
                         if n % args.rays == 0 and not sc.occupancy[idx]]
            name = dataset.sample_filename(args.bid, i, j).replace(".png", ".txt")
            propagation.export_paths(root / dataset.RAY_DIR / name, sc, tx, receivers)
        manifest.records.append(rec)
    if len(manifest.records) >= 2:
        manifest = dataset.split_dataset(manifest, ratio=args.split, seed=args.seed)
    manifest.write(root / "manifest.csv")
    print(f"exported {len(manifest.records)} samples to {root}")
    return 0


def cmd_mask(args) -> int:
    if args.kind == "uniform":
        m = sampling.uniform_mask(args.nx, args.ny, args.nz, args.rate)
    else:
        m = sampling.random_mask(args.nx, args.ny, args.nz, args.rate, args.seed)
    m.write(Path(args.out))
    print(f"{args.kind} mask: {m.count_per_layer()} points/layer x {m.nz} layers -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    pred = _load_volume(Path(args.pred))
    truth = _load_volume(Path(args.truth))
    if not (pred.normalized and truth.normalized):
        raise ValueError("eval expects normalized volumes (solve with --normalize)")
    cfg = metrics.SsimConfig(window=args.ssim_window)
    report = metrics.evaluate_volume(pred, truth, cfg)
    lines = report.lines()
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="ascii")
    for line in lines:
        print(line)
    if args.assert_:
        failed = []
        for clause in args.assert_.split(","):
            for op in ("<=", ">="):
                if op in clause:
                    name, bound = clause.split(op)
                    have = report.aggregate[name.strip()]
                    ok = have <= float(bound) if op == "<=" else have >= float(bound)
                    if not ok:
                        failed.append(f"{clause} (got {have:.6g})")
                    break
            else:
                raise ValueError(f"bad assertion clause {clause!r}")
        if failed:
            print("assertion failures: " + "; ".join(failed), file=sys.stderr)
            return 3
    return 0


def cmd_diffuse(args) -> int:
    sched = diffusion.linear_schedule(args.timesteps)
    shape = tuple(int(v) for v in args.shape.split(","))
    cond = None
    if args.weights and args.spec:
        den = load_denoiser(args.spec, args.weights)
        if den.spec.cond_channels > 0:
            cond = np.zeros(shape[:3] + (den.spec.cond_channels,), dtype=np.float64)
    else:
        den = diffusion.analytic_gaussian_denoiser(args.mu, args.sigma, sched)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sample, report = diffusion.generate(
        den, shape, sched, cond=cond, sampler=args.sampler, steps=args.steps,
        eta=args.eta, seed=args.seed)
    tensorio.save_tensor(out / "generated.rm3d", sample.astype(np.float64))
    (out / "timing.csv").write_text("\n".join(report.lines()) + "\n", encoding="ascii")
    codes = np.floor(np.clip(sample, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    for k in (int(v) for v in args.slices.split(",") if v != ""):
        img = codes[:, :, min(k, shape[2] - 1), 0].T
        _write_pgm(out / f"slice_h{k + 1}.pgm", img)
        pngio.write_gray8(out / f"slice_h{k + 1}.png", img)
    print(f"generated {sample.shape} in {report.total_s:.3f}s "
          f"({args.sampler}, {args.steps} steps) -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rm3d",
                                     description="3D radio-map dataset and diffusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scene", help="generate a voxel scene and transmitter list")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--buildings", type=int, default=10)
    p.add_argument("--tx", type=int, default=0, help="number of transmitters to place")
    p.add_argument("--tx-height", type=float, default=scene.DEFAULT_TX_HEIGHT, dest="tx_height")
    p.add_argument("--nx", type=int, default=256)
    p.add_argument("--ny", type=int, default=256)
    p.add_argument("--nz", type=int, default=20)
    p.add_argument("--res", type=float, default=1.0)
    p.add_argument("--footprint-min", type=float, default=12.0, dest="footprint_min")
    p.add_argument("--footprint-max", type=float, default=48.0, dest="footprint_max")
    p.add_argument("--margin", type=float, default=4.0)
    _add_common(p)
    p.set_defaults(func=cmd_scene)

    p = sub.add_parser("solve", help="solve one transmitter's channel volume")
    p.add_argument("--scene", required=True)
    p.add_argument("--tx", required=True, help="transmitter position x,y,z (meters)")
    p.add_argument("--freq", type=float, default=scene.DEFAULT_FREQ_HZ)
    p.add_argument("--normalize", action="store_true",
                   help="apply the default thresholds before saving")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("export", help="solve, normalize and export a dataset tree")
    p.add_argument("--scene", required=True)
    p.add_argument("--txs", required=True, help="transmitter list csv from `scene`")
    p.add_argument("--out", required=True)
    p.add_argument("--bid", type=int, default=0)
    p.add_argument("--split", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.add_argument("--rays", type=int, default=0,
                   help="also export path polylines for every Nth free voxel")
    _add_common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("mask", help="write a sparse sampling mask")
    p.add_argument("--kind", choices=("uniform", "random"), default="uniform")
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--nx", type=int, default=256)
    p.add_argument("--ny", type=int, default=256)
    p.add_argument("--nz", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("eval", help="compare two volumes and report metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.add_argument("--ssim-window", type=int, default=11, dest="ssim_window")
    p.add_argument("--assert", dest="assert_",
                   help="comma list of aggregate bounds, e.g. rmse<=0.1,ssim>=0.9")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diffuse", help="run a reverse-diffusion demo")
    p.add_argument("--out", required=True)
    p.add_argument("--sampler", choices=("ddim", "ddpm"), default="ddim")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timesteps", type=int, default=diffusion.DEFAULT_T)
    p.add_argument("--shape", default="32,32,4,1", help="latent shape nx,ny,nz,c")
    p.add_argument("--mu", type=float, default=0.3, help="analytic denoiser target mean")
    p.add_argument("--sigma", type=float, default=0.05, help="analytic denoiser target std")
    p.add_argument("--spec", help="denoiser descriptor file (with --weights)")
    p.add_argument("--weights", help="denoiser RM3D weights file")
    p.add_argument("--slices", default="0", help="height indices to render")
    _add_common(p)
    p.set_defaults(func=cmd_diffuse)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            sub = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(sub, args.config)
            args = parser.parse_args(argv)
        if getattr(args, "print_config", False):
            _print_config(args)
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
