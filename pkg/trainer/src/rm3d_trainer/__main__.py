"""Command-line entry: `python -m rm3d_trainer <diffusion|regression> ...`."""

from __future__ import annotations

import argparse
import sys

from .train import TrainConfig, train_diffusion, train_regression


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="rm3d_trainer")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("diffusion", "regression"):
        p = sub.add_parser(name)
        p.add_argument("--data", required=True, help="exported dataset directory")
        p.add_argument("--out", required=True)
        p.add_argument("--steps", type=int, default=500)
        p.add_argument("--batch", type=int, default=2)
        p.add_argument("--lr", type=float, default=5e-5)
        p.add_argument("--loss", choices=("l1", "l2"), default="l1")
        p.add_argument("--amp", action="store_true")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--sampling-rate", type=float, default=None, dest="sampling_rate")
        if name == "diffusion":
            p.add_argument("--target", default="pathgain")
            p.add_argument("--fixed-batch", action="store_true", dest="fixed_batch")
        else:
            p.add_argument("--targets", default="toa,doa_azi,doa_ele")
    args = parser.parse_args(sys.argv[1:] if argv is None else argv)
    cfg = TrainConfig(batch_size=args.batch, lr=args.lr, loss=args.loss, amp=args.amp,
                      steps=args.steps, seed=args.seed)
    if args.command == "diffusion":
        losses = train_diffusion(args.data, args.out, cfg, target=args.target,
                                 sampling_rate=args.sampling_rate,
                                 fixed_batch=args.fixed_batch)
        print(f"final loss {losses[-1]:.6f} after {len(losses)} steps -> {args.out}")
    else:
        reports = train_regression(args.data, args.out,
                                   targets=tuple(args.targets.split(",")), cfg=cfg,
                                   sampling_rate=args.sampling_rate)
        for target, rep in reports.items():
            print(f"{target}: rmse {rep['rmse']:.4f} nmse {rep['nmse']:.4f} "
                  f"ssim {rep['ssim']:.4f} psnr {rep['psnr']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
