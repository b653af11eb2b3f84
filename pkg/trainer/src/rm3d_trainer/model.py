"""torch network built from a NetSpec, with state names matching the
inference engine's weight table (layers.<i>.<param>, time.fc1/fc2).

Op semantics are pinned to the descriptor contract: cross-correlation
convs with same padding, GroupNorm(groups = 8 if c % 8 == 0 else 1,
eps 1e-5), SiLU, nearest x2 upsampling, stride-2 downsampling convs, FiLM
from the condition adaptively average-pooled to the feature resolution,
and the sinusoidal time embedding freq_i = 10000**(-i / max(half-1, 1)).
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .descriptor import NetSpec


def group_count(channels: int) -> int:
    return 8 if channels % 8 == 0 else 1


def time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.pow(10000.0, -torch.arange(half, dtype=torch.float32, device=t.device)
                      / max(half - 1, 1))
    ang = t.float().reshape(-1, 1) * freqs.reshape(1, -1)
    emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, time_dim: int, cond_channels: int, film: bool):
        super().__init__()
        self.cout = cout
        self.norm1 = nn.GroupNorm(group_count(cin), cin)
        self.conv1 = nn.Conv3d(cin, cout, 3, padding=1)
        if time_dim > 0:
            self.temb = nn.Linear(time_dim, cout)
        if film:
            self.film = nn.Conv3d(cond_channels, 2 * cout, 1)
        self.norm2 = nn.GroupNorm(group_count(cout), cout)
        self.conv2 = nn.Conv3d(cout, cout, 3, padding=1)
        if cin != cout:
            self.skip = nn.Conv3d(cin, cout, 1)

    def forward(self, x, temb, cond):
        h = self.conv1(F.silu(self.norm1(x)))
        if temb is not None:
            h = h + self.temb(temb).reshape(temb.shape[0], -1, 1, 1, 1)
        if hasattr(self, "film") and cond is not None:
            pooled = F.adaptive_avg_pool3d(cond, h.shape[2:])
            gb = self.film(pooled)
            gamma, beta = gb[:, :self.cout], gb[:, self.cout:]
            h = h * (1.0 + gamma) + beta
        h = self.conv2(F.silu(self.norm2(h)))
        if hasattr(self, "skip"):
            x = self.skip(x)
        return x + h


class CrossAttention(nn.Module):
    def __init__(self, channels: int, cond_channels: int, pool: int):
        super().__init__()
        self.channels = channels
        self.pool = pool
        self.norm = nn.GroupNorm(group_count(channels), channels)
        self.q = nn.Conv3d(channels, channels, 1)
        self.k = nn.Conv3d(cond_channels, channels, 1)
        self.v = nn.Conv3d(cond_channels, channels, 1)
        self.proj = nn.Conv3d(channels, channels, 1)

    def forward(self, x, cond):
        n, c = x.shape[:2]
        q = self.q(self.norm(x)).reshape(n, c, -1).transpose(1, 2)
        shape = tuple(max(s // self.pool, 1) for s in cond.shape[2:])
        tokens = F.adaptive_avg_pool3d(cond, shape)
        k = self.k(tokens).reshape(n, c, -1).transpose(1, 2)
        v = self.v(tokens).reshape(n, c, -1).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(x.shape)
        return x + self.proj(out)


class DescriptorNet(nn.Module):
    """Stack-machine network; forward(x, t, cond) with NCXYZ tensors."""

    def __init__(self, spec: NetSpec):
        super().__init__()
        self.spec = spec
        if spec.time_dim > 0:
            self.time = nn.ModuleDict({
                "fc1": nn.Linear(spec.time_dim, spec.time_dim),
                "fc2": nn.Linear(spec.time_dim, spec.time_dim),
            })
        film = spec.cond_mode == "film"
        mods: dict[str, nn.Module] = {}
        for idx, layer in enumerate(spec.layers):
            kind = layer[0]
            if kind == "conv":
                _, cin, cout, k = layer
                mods[str(idx)] = nn.Conv3d(cin, cout, k, padding=k // 2)
            elif kind == "down":
                _, cin, cout = layer
                mods[str(idx)] = nn.Conv3d(cin, cout, 3, stride=2, padding=1)
            elif kind == "up":
                _, cin, cout = layer
                mods[str(idx)] = nn.Conv3d(cin, cout, 3, padding=1)
            elif kind == "groupnorm":
                mods[str(idx)] = nn.GroupNorm(group_count(layer[1]), layer[1])
            elif kind == "resblock":
                _, cin, cout = layer
                mods[str(idx)] = ResBlock(cin, cout, spec.time_dim, spec.cond_channels, film)
            elif kind == "xattn":
                _, c, pool = layer
                mods[str(idx)] = CrossAttention(c, spec.cond_channels, pool)
        self.layers = nn.ModuleDict(mods)

    def forward(self, x: torch.Tensor, t: torch.Tensor,
                cond: torch.Tensor | None = None) -> torch.Tensor:
        if cond is not None:
            h = torch.cat([x, cond], dim=1)
        else:
            h = x
        temb = None
        if self.spec.time_dim > 0:
            emb = time_embedding(t, self.spec.time_dim)
            temb = self.time["fc2"](F.silu(self.time["fc1"](emb)))
        stack: list[torch.Tensor] = []
        for idx, layer in enumerate(self.spec.layers):
            kind = layer[0]
            mod = self.layers[str(idx)] if str(idx) in self.layers else None
            if kind in ("conv", "down", "groupnorm"):
                h = mod(h)
            elif kind == "up":
                h = mod(F.interpolate(h, scale_factor=2, mode="nearest"))
            elif kind == "push":
                stack.append(h)
            elif kind == "cat":
                h = torch.cat([h, stack.pop()], dim=1)
            elif kind == "silu":
                h = F.silu(h)
            elif kind == "resblock":
                h = mod(h, temb, cond)
            elif kind == "xattn":
                h = mod(h, cond)
        return h

    def export_weights(self) -> dict:
        import numpy as np
        return {name: p.detach().cpu().numpy().astype(np.float32)
                for name, p in self.state_dict().items()}
