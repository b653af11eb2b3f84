"""Noise schedules, DDPM/DDIM reverse steps, guided conditional sampling
and height-wise autoregressive generation.

A denoiser is any callable `(x_t, t, cond) -> eps_hat` with matching
shapes; `cond` may be None. All per-step operations are pure, and a
trajectory with eta=0 is a deterministic function of (seed, schedule,
denoiser, condition).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """beta_t, alpha_t = 1 - beta_t and their running product alpha_bar_t.

    Arrays are indexed by t in 1..T; alpha_bar(0) == 1 by convention.
    """

    beta: np.ndarray

    def __post_init__(self):
        if self.beta.ndim != 1 or len(self.beta) < 1:
            raise ValueError("beta schedule must be a non-empty vector")
        if np.any(self.beta <= 0.0) or np.any(self.beta >= 1.0):
            raise ValueError("beta values must lie strictly in (0, 1)")
        self.beta.setflags(write=False)
        ab = np.concatenate([[1.0], np.cumprod(1.0 - self.beta)])
        ab.setflags(write=False)
        object.__setattr__(self, "_alpha_bar", ab)

    @property
    def timesteps(self) -> int:
        return len(self.beta)

    def beta_t(self, t: int) -> float:
        self._check(t)
        return float(self.beta[t - 1])

    def alpha_t(self, t: int) -> float:
        return 1.0 - self.beta_t(t)

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check(t)
        return float(self._alpha_bar[t])

    def alpha_bars(self) -> np.ndarray:
        """alpha_bar for t = 0..T as one array."""
        return self._alpha_bar.copy()

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.timesteps:
            raise ValueError(f"timestep {t} outside 1..{self.timesteps}")


def linear_schedule(timesteps: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                    beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Linearly spaced beta_1..beta_T inclusive of both endpoints."""
    if timesteps < 1:
        raise ValueError("need at least one timestep")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("require 0 < beta_start <= beta_end < 1")
    if timesteps == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    return NoiseSchedule(beta)


def forward_sample(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noised sample: sqrt(a_bar_t) * x0 + sqrt(1 - a_bar_t) * eps."""
    if x0.shape != eps.shape:
        raise ValueError("x0 and eps shapes differ")
    ab = sched.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def predict_x0(x_t: np.ndarray, t: int, eps_hat: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Invert the forward map: (x_t - sqrt(1 - a_bar_t) * eps_hat) / sqrt(a_bar_t)."""
    ab = sched.alpha_bar(t)
    return (x_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)


def ddpm_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray, noise: np.ndarray,
              sched: NoiseSchedule, variance: str = "beta") -> np.ndarray:
    """One ancestral reverse step.

    mean = (x_t - ((1 - a_t) / sqrt(1 - a_bar_t)) * eps_hat) / sqrt(a_t),
    output = mean + sigma_t * noise. The default sigma_t^2 is beta_t;
    variance="posterior" selects (1 - a_bar_{t-1}) / (1 - a_bar_t) * beta_t.
    The caller passes zero noise at t = 1.
    """
    a = sched.alpha_t(t)
    ab = sched.alpha_bar(t)
    mean = (x_t - ((1.0 - a) / math.sqrt(1.0 - ab)) * eps_hat) / math.sqrt(a)
    if variance == "beta":
        var = sched.beta_t(t)
    elif variance == "posterior":
        var = (1.0 - sched.alpha_bar(t - 1)) / (1.0 - ab) * sched.beta_t(t)
    else:
        raise ValueError(f"unknown variance mode {variance!r}")
    return mean + math.sqrt(var) * noise


def ddim_step(x_t: np.ndarray, t: int, t_prev: int, eps_hat: np.ndarray, eta: float,
              noise: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Non-Markovian reverse jump t -> t_prev.

    sigma = eta * sqrt((1 - a_bar_prev) / (1 - a_bar_t))
                * sqrt(1 - a_bar_t / a_bar_prev);
    output = sqrt(a_bar_prev) * x0_hat + sqrt(1 - a_bar_prev - sigma^2) * eps_hat
             + sigma * noise. eta = 0 is fully deterministic.
    """
    if not 0 <= t_prev < t <= sched.timesteps:
        raise ValueError(f"invalid step pair t={t}, t_prev={t_prev}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    ab_t = sched.alpha_bar(t)
    ab_p = sched.alpha_bar(t_prev)
    x0_hat = predict_x0(x_t, t, eps_hat, sched)
    sigma = eta * math.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_p)
    coef = math.sqrt(max(1.0 - ab_p - sigma * sigma, 0.0))
    return math.sqrt(ab_p) * x0_hat + coef * eps_hat + sigma * noise


@dataclass(frozen=True)
class GuidanceConfig:
    """Pull the running x0 estimate toward interpolated observations.

    lambda_for(t) returns the weight: `weight` when t / T <= active_fraction
    (the tail of the trajectory), else 0. The correction is the analytic
    gradient step of the masked quadratic, applied to x0_hat.
    """

    mask: np.ndarray
    target: np.ndarray
    weight: float = 0.1
    active_fraction: float = 0.25

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("guidance weight must be non-negative")
        if self.mask.shape != self.target.shape:
            raise ValueError("guidance mask and target shapes differ")

    def lambda_for(self, t: int, timesteps: int) -> float:
        return self.weight if t <= self.active_fraction * timesteps else 0.0


def guided_correction(x0_hat: np.ndarray, guid: GuidanceConfig, lam: float) -> np.ndarray:
    """x0_hat - lam * 2 * mask * (x0_hat - target); unmasked voxels unchanged."""
    if guid.mask.shape != x0_hat.shape:
        raise ValueError("guidance shapes do not match the sample")
    if lam == 0.0:
        return x0_hat
    return x0_hat - (2.0 * lam) * guid.mask * (x0_hat - guid.target)


def _ddim_timesteps(timesteps: int, steps: int) -> list[int]:
    """Strictly decreasing t sequence T = t_0 > ... > t_steps = 0."""
    if not 1 <= steps <= timesteps:
        raise ValueError(f"steps must lie in 1..{timesteps}")
    ts = np.unique(np.round(np.linspace(0, timesteps, steps + 1)).astype(int))
    return [int(t) for t in ts[::-1]]


@dataclass
class GenerationReport:
    """Wall-clock accounting: one (step_index, t, milliseconds) row per step."""

    rows: list[tuple[int, int, float]] = field(default_factory=list)
    total_s: float = 0.0
    peak_latent_elements: int = 0

    def lines(self) -> list[str]:
        """Line-delimited `step,time_ms` records."""
        return [f"{i},{ms:.3f}" for i, _, ms in self.rows]


def generate(denoiser, shape: tuple, sched: NoiseSchedule, cond: np.ndarray | None = None,
             sampler: str = "ddim", steps: int = 50, eta: float = 0.0,
             guidance: GuidanceConfig | None = None, seed: int = 0,
             variance: str = "beta", observer=None):
    """Run a full reverse trajectory from seeded standard-normal noise.

    sampler "ddim" visits a `steps`-point subsequence of 1..T; "ddpm" visits
    every t (steps is ignored). Guidance, when given, corrects the x0
    estimate inside each step and the consistent eps_hat is recomputed
    before the update. `observer(step_index, t, x0_hat)` is called with the
    per-step (possibly corrected) x0 estimate. Returns
    (sample, GenerationReport).
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    report = GenerationReport(peak_latent_elements=int(np.prod(shape)))
    t0 = time.perf_counter()

    if sampler == "ddim":
        ts = _ddim_timesteps(sched.timesteps, steps)
        pairs = list(zip(ts[:-1], ts[1:]))
    elif sampler == "ddpm":
        pairs = [(t, t - 1) for t in range(sched.timesteps, 0, -1)]
    else:
        raise ValueError(f"unknown sampler {sampler!r}")

    for i, (t, t_prev) in enumerate(pairs):
        s0 = time.perf_counter()
        eps_hat = denoiser(x, t, cond)
        if eps_hat.shape != x.shape:
            raise ValueError("denoiser output shape does not match its input")
        x0_hat = None
        if guidance is not None:
            lam = guidance.lambda_for(t, sched.timesteps)
            if lam > 0.0:
                # x0-space weight lam/a_bar (capped at the 1/2 fixed point)
                # makes this exactly the state-space gradient step with
                # weight lam: x <- x - (2*lam/sqrt(a_bar)) * mask * (x0 - S).
                ab = sched.alpha_bar(t)
                x0_hat = predict_x0(x, t, eps_hat, sched)
                x0_hat = guided_correction(x0_hat, guidance, min(lam / ab, 0.5))
                x = math.sqrt(ab) * x0_hat + math.sqrt(1.0 - ab) * eps_hat
        if observer is not None:
            observer(i, t, predict_x0(x, t, eps_hat, sched) if x0_hat is None else x0_hat)
        if sampler == "ddim":
            noise = rng.standard_normal(shape) if eta > 0.0 and t_prev > 0 else 0.0
            x = ddim_step(x, t, t_prev, eps_hat, eta, noise, sched)
        else:
            noise = rng.standard_normal(shape) if t > 1 else np.zeros(shape)
            x = ddpm_step(x, t, eps_hat, noise, sched, variance=variance)
        report.rows.append((i, t, (time.perf_counter() - s0) * 1e3))

    report.total_s = time.perf_counter() - t0
    return x, report


def autoregressive_generate(denoiser, base_cond: np.ndarray, num_slabs: int,
                            sched: NoiseSchedule, out_channels: int = 1,
                            sampler: str = "ddim", steps: int = 50, eta: float = 0.0,
                            seed: int = 0):
    """Generate a volume one height slab at a time.

    base_cond has shape (nx, ny, num_slabs, C); slab d is generated with
    condition channels [base_cond[:, :, d], previous slab] where the
    previous-slab channel is zero for the first slab. Only one slab latent
    is alive at a time; finished slabs accumulate in the output volume.
    """
    if num_slabs < 1:
        raise ValueError("need at least one slab")
    if base_cond.ndim != 4 or base_cond.shape[2] != num_slabs:
        raise ValueError(f"expected (nx, ny, {num_slabs}, C) condition, got {base_cond.shape}")
    nx, ny = base_cond.shape[:2]
    out = np.zeros((nx, ny, num_slabs, out_channels), dtype=np.float64)
    prev = np.zeros((nx, ny, 1, out_channels), dtype=np.float64)
    peak = 0
    reports = []
    for d in range(num_slabs):
        cond = np.concatenate([base_cond[:, :, d:d + 1, :], prev], axis=3)
        slab, rep = generate(denoiser, (nx, ny, 1, out_channels), sched, cond=cond,
                             sampler=sampler, steps=steps, eta=eta, seed=seed + d)
        peak = max(peak, rep.peak_latent_elements)
        reports.append(rep)
        out[:, :, d:d + 1, :] = slab
        prev = slab
    total = GenerationReport(rows=[r for rep in reports for r in rep.rows],
                             total_s=sum(r.total_s for r in reports),
                             peak_latent_elements=peak)
    return out, total


def analytic_gaussian_denoiser(mu0: float, sigma0: float, sched: NoiseSchedule):
    """Exact eps-predictor for i.i.d. Gaussian data N(mu0, sigma0^2).

    E[x0 | x_t] = (sqrt(a_bar) * sigma0^2 * x_t + (1 - a_bar) * mu0)
                  / (a_bar * sigma0^2 + 1 - a_bar)
    and eps_hat = (x_t - sqrt(a_bar) * E[x0 | x_t]) / sqrt(1 - a_bar).
    Closed-form verifier for sampler correctness; ignores conditioning.
    """
    if sigma0 < 0:
        raise ValueError("sigma0 must be non-negative")
    var0 = sigma0 * sigma0

    def denoiser(x_t: np.ndarray, t: int, cond=None) -> np.ndarray:
        ab = sched.alpha_bar(t)
        if ab >= 1.0:
            return np.zeros_like(x_t)
        post_mean = (math.sqrt(ab) * var0 * x_t + (1.0 - ab) * mu0) / (ab * var0 + 1.0 - ab)
        return (x_t - math.sqrt(ab) * post_mean) / math.sqrt(1.0 - ab)

    return denoiser


def simple_loss(eps_hat: np.ndarray, eps: np.ndarray, kind: str = "l2") -> float:
    """Mean denoising loss: squared ("l2", default) or absolute ("l1")."""
    if eps_hat.shape != eps.shape:
        raise ValueError("loss operands must share a shape")
    diff = np.asarray(eps_hat, dtype=np.float64) - np.asarray(eps, dtype=np.float64)
    if kind == "l2":
        return float(np.mean(diff * diff))
    if kind == "l1":
        return float(np.mean(np.abs(diff)))
    raise ValueError(f"unknown loss kind {kind!r}")
