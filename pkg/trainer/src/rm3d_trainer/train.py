"""Training loops: eps-prediction denoiser and direct regression baseline.

Both train a DescriptorNet on toy-scale exported datasets, keep an
exponential moving average of the weights, log `step,loss` lines, and
export descriptor + weights (raw and EMA) in the shared record format.
The diffusion run also writes `parity.rm3d` (a fixed forward-pass probe)
so the inference side can verify weight loading end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import rmio
from .data import SampleSet, load_samples
from .descriptor import NetSpec, unet_spec
from .metrics import volume_report
from .model import DescriptorNet


@dataclass
class TrainConfig:
    batch_size: int = 2
    lr: float = 5e-5
    ema_decay: float = 0.995
    ema_every: int = 10
    loss: str = "l1"
    amp: bool = False
    frames: int = 4
    steps: int = 500
    seed: int = 0
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if min(self.batch_size, self.ema_every, self.steps, self.timesteps) <= 0:
            raise ValueError("hyperparameters must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("EMA decay must lie in (0, 1)")
        if self.loss not in ("l1", "l2"):
            raise ValueError(f"unknown loss {self.loss!r}")


class Ema:
    """Shadow copy updated as d * shadow + (1 - d) * param every call."""

    def __init__(self, model: torch.nn.Module, decay: float):
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}
        self.updates = 0

    @torch.no_grad()
    def update(self, model: torch.nn.Module) -> None:
        for k, v in model.state_dict().items():
            self.shadow[k].mul_(self.decay).add_(v.detach(), alpha=1.0 - self.decay)
        self.updates += 1


def _loss_fn(kind: str):
    return torch.nn.functional.l1_loss if kind == "l1" else torch.nn.functional.mse_loss


def _alpha_bars(cfg: TrainConfig) -> torch.Tensor:
    beta = torch.linspace(cfg.beta_start, cfg.beta_end, cfg.timesteps, dtype=torch.float64)
    return torch.cat([torch.ones(1, dtype=torch.float64), torch.cumprod(1.0 - beta, dim=0)])


def _export(out_dir: Path, spec: NetSpec, model: DescriptorNet, ema: Ema,
            log_lines: list[str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "denoiser.txt").write_text(spec.to_text(), encoding="ascii")
    rmio.save_records(out_dir / "weights.rm3d", model.export_weights())
    rmio.save_records(out_dir / "weights_ema.rm3d",
                      {k: v.cpu().numpy().astype(np.float32) for k, v in ema.shadow.items()})
    (out_dir / "runlog.csv").write_text("\n".join(log_lines) + "\n", encoding="ascii")


def _write_parity(out_dir: Path, model: DescriptorNet, spec: NetSpec, seed: int) -> None:
    rng = np.random.default_rng(seed)
    latent = spec.in_channels - spec.cond_channels
    x = rng.standard_normal((8, 8, 4, latent)).astype(np.float32)
    cond = rng.uniform(0, 1, (8, 8, 4, spec.cond_channels)).astype(np.float32)
    t = 500
    model.eval()
    with torch.no_grad():
        xt = torch.from_numpy(np.transpose(x, (3, 0, 1, 2))[None])
        ct = torch.from_numpy(np.transpose(cond, (3, 0, 1, 2))[None])
        out = model(xt, torch.tensor([float(t)]), ct)[0]
    rmio.save_records(out_dir / "parity.rm3d", {
        "x": x,
        "cond": cond,
        "t": np.asarray([t], dtype=np.int64),
        "out": np.transpose(out.numpy(), (1, 2, 3, 0)).astype(np.float32),
    })


def train_diffusion(data_dir: str | Path, out_dir: str | Path,
                    cfg: TrainConfig | None = None, target: str = "pathgain",
                    sampling_rate: float | None = None,
                    samples: SampleSet | None = None,
                    fixed_batch: bool = False) -> list[float]:
    """Learn eps-prediction on one dataset tree; returns the loss curve.

    With fixed_batch the (t, eps) draw of the first batch is reused every
    step: an overfit sanity mode whose loss curve measures pure
    optimization progress on one regression pair.
    """
    cfg = cfg or TrainConfig()
    torch.manual_seed(cfg.seed)
    if samples is None:
        samples = load_samples(data_dir, channel=target, sampling_rate=sampling_rate)
    cond_channels = samples.conditions.shape[1]
    spec = unet_spec(cond_channels=cond_channels, out_channels=1, time_dim=32)
    model = DescriptorNet(spec)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    ema = Ema(model, cfg.ema_decay)
    ab = _alpha_bars(cfg)
    loss_fn = _loss_fn(cfg.loss)

    x0_all = torch.from_numpy(samples.targets[:, None])      # N,1,X,Y,Z
    cond_all = torch.from_numpy(samples.conditions)          # N,C,X,Y,Z
    n = x0_all.shape[0]
    gen = torch.Generator().manual_seed(cfg.seed)
    log = [f"config,batch={cfg.batch_size},lr={cfg.lr},ema={cfg.ema_decay},"
           f"ema_every={cfg.ema_every},loss={cfg.loss},amp={cfg.amp},frames={cfg.frames},"
           f"seed={cfg.seed},deterministic=seeded-cpu"]
    losses: list[float] = []
    frozen = None
    model.train()
    for step in range(1, cfg.steps + 1):
        if frozen is None or not fixed_batch:
            idx = torch.randint(0, n, (min(cfg.batch_size, n),), generator=gen)
            t = torch.randint(1, cfg.timesteps + 1, (len(idx),), generator=gen)
            eps = torch.randn((len(idx),) + x0_all.shape[1:], generator=gen)
            frozen = (idx, t, eps)
        idx, t, eps = frozen
        x0 = x0_all[idx]
        cond = cond_all[idx]
        a = ab[t].reshape(-1, 1, 1, 1, 1).float()
        xt = torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * eps
        with torch.autocast("cpu", dtype=torch.bfloat16, enabled=cfg.amp):
            loss = loss_fn(model(xt, t.float(), cond), eps)
        if not torch.isfinite(loss):
            raise RuntimeError(f"training diverged at step {step}: loss={loss.item()}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.ema_every == 0:
            ema.update(model)
        losses.append(float(loss.item()))
        log.append(f"{step},{losses[-1]:.6f}")

    out_dir = Path(out_dir)
    _export(out_dir, spec, model, ema, log)
    _write_parity(out_dir, model, spec, cfg.seed)
    return losses


def train_regression(data_dir: str | Path, out_dir: str | Path,
                     targets: tuple[str, ...] = ("toa", "doa_azi", "doa_ele"),
                     cfg: TrainConfig | None = None, sampling_rate: float | None = None,
                     eval_fraction: float = 0.2) -> dict[str, dict]:
    """Direct-supervision baseline; returns per-target validation metrics."""
    cfg = cfg or TrainConfig()
    out_dir = Path(out_dir)
    reports: dict[str, dict] = {}
    for target in targets:
        torch.manual_seed(cfg.seed)
        samples = load_samples(data_dir, channel=target, sampling_rate=sampling_rate,
                               sampling_seed=cfg.seed)
        n = samples.targets.shape[0]
        n_eval = max(int(round(eval_fraction * n)), 1) if n > 1 else 0
        train_sl = slice(0, n - n_eval) if n_eval else slice(0, n)
        x_all = torch.from_numpy(samples.conditions[train_sl])
        y_all = torch.from_numpy(samples.targets[train_sl, None])
        spec = unet_spec(cond_channels=samples.conditions.shape[1], out_channels=1,
                         time_dim=0, cond_mode="none", latent_channels=0)
        model = DescriptorNet(spec)
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        ema = Ema(model, cfg.ema_decay)
        loss_fn = _loss_fn(cfg.loss)
        gen = torch.Generator().manual_seed(cfg.seed)
        log = [f"config,target={target},batch={cfg.batch_size},lr={cfg.lr},"
               f"ema={cfg.ema_decay},loss={cfg.loss},seed={cfg.seed},"
               f"deterministic=seeded-cpu"]
        model.train()
        t_zero = torch.zeros(1)
        for step in range(1, cfg.steps + 1):
            idx = torch.randint(0, x_all.shape[0], (min(cfg.batch_size, x_all.shape[0]),),
                                generator=gen)
            with torch.autocast("cpu", dtype=torch.bfloat16, enabled=cfg.amp):
                loss = loss_fn(model(x_all[idx], t_zero), y_all[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(f"training diverged at step {step}: loss={loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % cfg.ema_every == 0:
                ema.update(model)
            log.append(f"{step},{float(loss.item()):.6f}")

        tdir = out_dir / target
        _export(tdir, spec, model, ema, log)
        model.eval()
        eval_sl = slice(n - n_eval, n) if n_eval else slice(0, n)
        with torch.no_grad():
            pred = model(torch.from_numpy(samples.conditions[eval_sl]), t_zero).numpy()
        truth = samples.targets[eval_sl]
        window = min(11, truth.shape[1] if truth.shape[1] % 2 else truth.shape[1] - 1)
        report = volume_report(np.concatenate(pred[:, 0]), np.concatenate(truth),
                               window=window)
        reports[target] = report
        lines = [f"{target},{k},{v}" for k, v in report.items()]
        (tdir / "report.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    return reports
