"""Denoiser architecture descriptors and forward-only numpy inference.

A descriptor is a text file, one statement per line::

    format rm3d-denoiser/1
    in_channels 5
    out_channels 1
    cond_channels 4
    cond_mode film            # none | film
    time_dim 32
    layer conv 5 16 3         # cin cout kernel (same padding)
    layer push                # save features for a skip connection
    layer resblock 16 16
    layer down 16 32          # stride-2 conv, kernel 3
    layer resblock 32 32
    layer xattn 32 4          # features x pooled condition, pool factor 4
    layer up 32 16            # nearest x2 + conv, kernel 3
    layer cat                 # pop skip, concatenate channels
    layer conv 32 16 3
    layer groupnorm 16
    layer silu
    layer conv 16 1 3

The network input is the noisy sample concatenated with the condition
channels; `resblock` additionally receives a sinusoidal time embedding and,
in film mode, per-voxel scale/shift from the condition pooled to the
current resolution. Weights live in an RM3D record file keyed
`layers.<index>.<param>` (plus `time.fc1/fc2`); shapes follow torch
conventions (conv: out, in, kx, ky, kz). All math runs in float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorio

FORMAT_TAG = "rm3d-denoiser/1"
_LAYER_KINDS = {"conv", "resblock", "down", "up", "push", "cat", "silu", "groupnorm", "xattn"}


@dataclass
class DenoiserSpec:
    in_channels: int
    out_channels: int
    cond_channels: int = 0
    cond_mode: str = "none"
    time_dim: int = 0
    layers: list[tuple] = field(default_factory=list)

    def validate(self) -> None:
        if self.cond_mode not in ("none", "film"):
            raise ValueError(f"unknown cond_mode {self.cond_mode!r}")
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ValueError("channel counts must be positive")
        chans = self.in_channels
        stack: list[int] = []
        for idx, layer in enumerate(self.layers):
            kind = layer[0]
            if kind == "conv":
                _, cin, cout, k = layer
                if cin != chans:
                    raise ValueError(f"layer {idx} (conv): expects {cin} channels, has {chans}")
                if k % 2 == 0:
                    raise ValueError(f"layer {idx} (conv): kernel must be odd")
                chans = cout
            elif kind in ("resblock", "down", "up"):
                _, cin, cout = layer
                if cin != chans:
                    raise ValueError(f"layer {idx} ({kind}): expects {cin} channels, has {chans}")
                chans = cout
            elif kind == "push":
                stack.append(chans)
            elif kind == "cat":
                if not stack:
                    raise ValueError(f"layer {idx} (cat): skip stack is empty")
                chans += stack.pop()
            elif kind == "groupnorm":
                if layer[1] != chans:
                    raise ValueError(f"layer {idx} (groupnorm): expects {layer[1]}, has {chans}")
            elif kind == "silu":
                pass
            elif kind == "xattn":
                _, c, pool = layer
                if c != chans:
                    raise ValueError(f"layer {idx} (xattn): expects {c} channels, has {chans}")
                if self.cond_channels <= 0:
                    raise ValueError(f"layer {idx} (xattn): requires condition channels")
                if pool < 1:
                    raise ValueError(f"layer {idx} (xattn): pool factor must be >= 1")
            else:
                raise ValueError(f"layer {idx}: unknown kind {kind!r}")
        if stack:
            raise ValueError("unconsumed skip connections at end of network")
        if chans != self.out_channels:
            raise ValueError(f"network ends with {chans} channels, descriptor says "
                             f"{self.out_channels}")

    def to_text(self) -> str:
        lines = [
            f"format {FORMAT_TAG}",
            f"in_channels {self.in_channels}",
            f"out_channels {self.out_channels}",
            f"cond_channels {self.cond_channels}",
            f"cond_mode {self.cond_mode}",
            f"time_dim {self.time_dim}",
        ]
        for layer in self.layers:
            lines.append("layer " + " ".join(str(v) for v in layer))
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse(text: str) -> "DenoiserSpec":
        head: dict[str, str] = {}
        layers: list[tuple] = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if tokens[0] == "layer":
                kind = tokens[1]
                if kind not in _LAYER_KINDS:
                    raise ValueError(f"unknown layer kind {kind!r}")
                layers.append((kind, *(int(v) for v in tokens[2:])))
            else:
                head[tokens[0]] = tokens[1]
        if head.get("format") != FORMAT_TAG:
            raise ValueError(f"unsupported descriptor format {head.get('format')!r}")
        spec = DenoiserSpec(
            in_channels=int(head["in_channels"]),
            out_channels=int(head["out_channels"]),
            cond_channels=int(head.get("cond_channels", 0)),
            cond_mode=head.get("cond_mode", "none"),
            time_dim=int(head.get("time_dim", 0)),
            layers=layers,
        )
        spec.validate()
        return spec


def group_count(channels: int) -> int:
    """GroupNorm group rule shared with the training side."""
    return 8 if channels % 8 == 0 else 1


def time_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal embedding; frequency i is 10000**(-i / max(half-1, 1))."""
    half = dim // 2
    freqs = np.power(10000.0, -np.arange(half, dtype=np.float64) / max(half - 1, 1))
    ang = t * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb.astype(np.float32)


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def _conv3d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """Same-padded 3D convolution; x is (cin, X, Y, Z), w is (cout, cin, k, k, k)."""
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    win = win[:, ::stride, ::stride, ::stride]
    out = np.einsum("cxyzijk,ocijk->oxyz", win, w, optimize=True)
    return (out + b[:, None, None, None]).astype(np.float32)


def _group_norm(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                eps: float = 1e-5) -> np.ndarray:
    c = x.shape[0]
    g = group_count(c)
    xg = x.reshape(g, c // g, -1)
    mean = xg.mean(axis=(1, 2), keepdims=True)
    var = xg.var(axis=(1, 2), keepdims=True)
    xn = ((xg - mean) / np.sqrt(var + eps)).reshape(x.shape)
    return (xn * weight[:, None, None, None] + bias[:, None, None, None]).astype(np.float32)


def _adaptive_avg_pool(x: np.ndarray, out_shape: tuple[int, int, int]) -> np.ndarray:
    """torch-compatible adaptive average pooling over the three spatial axes."""
    out = x
    for axis, target in zip((1, 2, 3), out_shape):
        n = out.shape[axis]
        if n == target:
            continue
        pieces = []
        for o in range(target):
            lo = (o * n) // target
            hi = -(-((o + 1) * n) // target)
            sl = [slice(None)] * 4
            sl[axis] = slice(lo, hi)
            pieces.append(out[tuple(sl)].mean(axis=axis, keepdims=True))
        out = np.concatenate(pieces, axis=axis)
    return out.astype(np.float32)


def _nearest_up2(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)


class _Engine:
    """Stack-machine interpreter over a validated descriptor + weight dict."""

    def __init__(self, spec: DenoiserSpec, weights: dict[str, np.ndarray]):
        self.spec = spec
        self.w = {k: np.asarray(v, dtype=np.float32) for k, v in weights.items()}
        self._check_weights()

    def _get(self, name: str, shape: tuple) -> np.ndarray:
        if name not in self.w:
            raise ValueError(f"missing weight {name!r}")
        arr = self.w[name]
        if arr.shape != shape:
            raise ValueError(f"weight {name!r} has shape {arr.shape}, expected {shape}")
        return arr

    def _check_weights(self) -> None:
        spec = self.spec
        spec.validate()
        if spec.time_dim > 0:
            self._get("time.fc1.weight", (spec.time_dim, spec.time_dim))
            self._get("time.fc1.bias", (spec.time_dim,))
            self._get("time.fc2.weight", (spec.time_dim, spec.time_dim))
            self._get("time.fc2.bias", (spec.time_dim,))
        for idx, layer in enumerate(spec.layers):
            kind = layer[0]
            p = f"layers.{idx}"
            if kind == "conv":
                _, cin, cout, k = layer
                self._get(f"{p}.weight", (cout, cin, k, k, k))
                self._get(f"{p}.bias", (cout,))
            elif kind == "down":
                _, cin, cout = layer
                self._get(f"{p}.weight", (cout, cin, 3, 3, 3))
                self._get(f"{p}.bias", (cout,))
            elif kind == "up":
                _, cin, cout = layer
                self._get(f"{p}.weight", (cout, cin, 3, 3, 3))
                self._get(f"{p}.bias", (cout,))
            elif kind == "groupnorm":
                c = layer[1]
                self._get(f"{p}.weight", (c,))
                self._get(f"{p}.bias", (c,))
            elif kind == "resblock":
                _, cin, cout = layer
                self._get(f"{p}.norm1.weight", (cin,))
                self._get(f"{p}.norm1.bias", (cin,))
                self._get(f"{p}.conv1.weight", (cout, cin, 3, 3, 3))
                self._get(f"{p}.conv1.bias", (cout,))
                if spec.time_dim > 0:
                    self._get(f"{p}.temb.weight", (cout, spec.time_dim))
                    self._get(f"{p}.temb.bias", (cout,))
                if spec.cond_mode == "film":
                    self._get(f"{p}.film.weight", (2 * cout, spec.cond_channels, 1, 1, 1))
                    self._get(f"{p}.film.bias", (2 * cout,))
                self._get(f"{p}.norm2.weight", (cout,))
                self._get(f"{p}.norm2.bias", (cout,))
                self._get(f"{p}.conv2.weight", (cout, cout, 3, 3, 3))
                self._get(f"{p}.conv2.bias", (cout,))
                if cin != cout:
                    self._get(f"{p}.skip.weight", (cout, cin, 1, 1, 1))
                    self._get(f"{p}.skip.bias", (cout,))
            elif kind == "xattn":
                _, c, _pool = layer
                self._get(f"{p}.norm.weight", (c,))
                self._get(f"{p}.norm.bias", (c,))
                self._get(f"{p}.q.weight", (c, c, 1, 1, 1))
                self._get(f"{p}.q.bias", (c,))
                self._get(f"{p}.k.weight", (c, spec.cond_channels, 1, 1, 1))
                self._get(f"{p}.k.bias", (c,))
                self._get(f"{p}.v.weight", (c, spec.cond_channels, 1, 1, 1))
                self._get(f"{p}.v.bias", (c,))
                self._get(f"{p}.proj.weight", (c, c, 1, 1, 1))
                self._get(f"{p}.proj.bias", (c,))

    def _time_vec(self, t: float) -> np.ndarray | None:
        if self.spec.time_dim == 0:
            return None
        emb = time_embedding(t, self.spec.time_dim)
        h = self.w["time.fc1.weight"] @ emb + self.w["time.fc1.bias"]
        h = _silu(h)
        return self.w["time.fc2.weight"] @ h + self.w["time.fc2.bias"]

    def _resblock(self, idx: int, x: np.ndarray, temb, cond) -> np.ndarray:
        p = f"layers.{idx}"
        _, cin, cout = self.spec.layers[idx]
        h = _group_norm(x, self.w[f"{p}.norm1.weight"], self.w[f"{p}.norm1.bias"])
        h = _conv3d(_silu(h), self.w[f"{p}.conv1.weight"], self.w[f"{p}.conv1.bias"])
        if temb is not None:
            bias = self.w[f"{p}.temb.weight"] @ temb + self.w[f"{p}.temb.bias"]
            h = h + bias[:, None, None, None]
        if self.spec.cond_mode == "film" and cond is not None:
            pooled = _adaptive_avg_pool(cond, h.shape[1:])
            gb = _conv3d(pooled, self.w[f"{p}.film.weight"], self.w[f"{p}.film.bias"])
            gamma, beta = gb[:cout], gb[cout:]
            h = h * (1.0 + gamma) + beta
        h = _group_norm(h, self.w[f"{p}.norm2.weight"], self.w[f"{p}.norm2.bias"])
        h = _conv3d(_silu(h), self.w[f"{p}.conv2.weight"], self.w[f"{p}.conv2.bias"])
        if cin != cout:
            x = _conv3d(x, self.w[f"{p}.skip.weight"], self.w[f"{p}.skip.bias"])
        return (x + h).astype(np.float32)

    def _xattn(self, idx: int, x: np.ndarray, cond: np.ndarray) -> np.ndarray:
        p = f"layers.{idx}"
        _, c, pool = self.spec.layers[idx]
        h = _group_norm(x, self.w[f"{p}.norm.weight"], self.w[f"{p}.norm.bias"])
        q = _conv3d(h, self.w[f"{p}.q.weight"], self.w[f"{p}.q.bias"])
        tokens = _adaptive_avg_pool(cond, tuple(max(s // pool, 1) for s in cond.shape[1:]))
        k = _conv3d(tokens, self.w[f"{p}.k.weight"], self.w[f"{p}.k.bias"])
        v = _conv3d(tokens, self.w[f"{p}.v.weight"], self.w[f"{p}.v.bias"])
        qf = q.reshape(c, -1).T
        kf = k.reshape(c, -1).T
        vf = v.reshape(c, -1).T
        logits = (qf @ kf.T) / math.sqrt(c)
        logits -= logits.max(axis=1, keepdims=True)
        attn = np.exp(logits)
        attn /= attn.sum(axis=1, keepdims=True)
        out = (attn @ vf).T.reshape(x.shape)
        out = _conv3d(out.astype(np.float32), self.w[f"{p}.proj.weight"], self.w[f"{p}.proj.bias"])
        return (x + out).astype(np.float32)

    def forward(self, x: np.ndarray, t: float, cond: np.ndarray | None) -> np.ndarray:
        temb = self._time_vec(t)
        stack: list[np.ndarray] = []
        h = x
        for idx, layer in enumerate(self.spec.layers):
            kind = layer[0]
            p = f"layers.{idx}"
            if kind == "conv":
                h = _conv3d(h, self.w[f"{p}.weight"], self.w[f"{p}.bias"])
            elif kind == "down":
                h = _conv3d(h, self.w[f"{p}.weight"], self.w[f"{p}.bias"], stride=2)
            elif kind == "up":
                h = _conv3d(_nearest_up2(h), self.w[f"{p}.weight"], self.w[f"{p}.bias"])
            elif kind == "push":
                stack.append(h)
            elif kind == "cat":
                skip = stack.pop()
                if skip.shape[1:] != h.shape[1:]:
                    raise ValueError(f"layer {idx} (cat): spatial shapes differ "
                                     f"{skip.shape[1:]} vs {h.shape[1:]}")
                h = np.concatenate([h, skip], axis=0)
            elif kind == "silu":
                h = _silu(h)
            elif kind == "groupnorm":
                h = _group_norm(h, self.w[f"{p}.weight"], self.w[f"{p}.bias"])
            elif kind == "resblock":
                h = self._resblock(idx, h, temb, cond)
            elif kind == "xattn":
                if cond is None:
                    raise ValueError(f"layer {idx} (xattn): no condition supplied")
                h = self._xattn(idx, h, cond)
        return h


def init_weights(spec: DenoiserSpec, seed: int = 0) -> dict[str, np.ndarray]:
    """Random weights matching the descriptor's parameter table (He-scaled
    convolutions, identity norms); useful for tests and demos."""
    spec.validate()
    rng = np.random.default_rng(seed)

    def conv(cout, cin, k):
        fan_in = cin * k ** 3
        return rng.standard_normal((cout, cin, k, k, k)).astype(np.float32) \
            * np.float32(math.sqrt(2.0 / fan_in))

    w: dict[str, np.ndarray] = {}
    if spec.time_dim > 0:
        d = spec.time_dim
        for name in ("fc1", "fc2"):
            w[f"time.{name}.weight"] = rng.standard_normal((d, d)).astype(np.float32) \
                * np.float32(1.0 / math.sqrt(d))
            w[f"time.{name}.bias"] = np.zeros(d, dtype=np.float32)
    for idx, layer in enumerate(spec.layers):
        kind = layer[0]
        p = f"layers.{idx}"
        if kind == "conv":
            _, cin, cout, k = layer
            w[f"{p}.weight"] = conv(cout, cin, k)
            w[f"{p}.bias"] = np.zeros(cout, dtype=np.float32)
        elif kind in ("down", "up"):
            _, cin, cout = layer
            w[f"{p}.weight"] = conv(cout, cin, 3)
            w[f"{p}.bias"] = np.zeros(cout, dtype=np.float32)
        elif kind == "groupnorm":
            c = layer[1]
            w[f"{p}.weight"] = np.ones(c, dtype=np.float32)
            w[f"{p}.bias"] = np.zeros(c, dtype=np.float32)
        elif kind == "resblock":
            _, cin, cout = layer
            w[f"{p}.norm1.weight"] = np.ones(cin, dtype=np.float32)
            w[f"{p}.norm1.bias"] = np.zeros(cin, dtype=np.float32)
            w[f"{p}.conv1.weight"] = conv(cout, cin, 3)
            w[f"{p}.conv1.bias"] = np.zeros(cout, dtype=np.float32)
            if spec.time_dim > 0:
                w[f"{p}.temb.weight"] = rng.standard_normal((cout, spec.time_dim)) \
                    .astype(np.float32) * np.float32(1.0 / math.sqrt(spec.time_dim))
                w[f"{p}.temb.bias"] = np.zeros(cout, dtype=np.float32)
            if spec.cond_mode == "film":
                w[f"{p}.film.weight"] = conv(2 * cout, spec.cond_channels, 1) * 0.1
                w[f"{p}.film.bias"] = np.zeros(2 * cout, dtype=np.float32)
            w[f"{p}.norm2.weight"] = np.ones(cout, dtype=np.float32)
            w[f"{p}.norm2.bias"] = np.zeros(cout, dtype=np.float32)
            w[f"{p}.conv2.weight"] = conv(cout, cout, 3)
            w[f"{p}.conv2.bias"] = np.zeros(cout, dtype=np.float32)
            if cin != cout:
                w[f"{p}.skip.weight"] = conv(cout, cin, 1)
                w[f"{p}.skip.bias"] = np.zeros(cout, dtype=np.float32)
        elif kind == "xattn":
            _, c, _pool = layer
            w[f"{p}.norm.weight"] = np.ones(c, dtype=np.float32)
            w[f"{p}.norm.bias"] = np.zeros(c, dtype=np.float32)
            for name, cin in (("q", c), ("k", spec.cond_channels), ("v", spec.cond_channels),
                              ("proj", c)):
                w[f"{p}.{name}.weight"] = conv(c, cin, 1)
                w[f"{p}.{name}.bias"] = np.zeros(c, dtype=np.float32)
    return w


def load_denoiser(spec_file: str | Path, weights_file: str | Path):
    """Build a pure inference function from a descriptor + RM3D weights.

    The returned callable takes (x_t, t, cond) in volume layout
    (nx, ny, nz, C) and returns predicted noise with x_t's shape. Shape or
    descriptor mismatches raise ValueError naming the offending layer or
    weight.
    """
    spec = DenoiserSpec.parse(Path(spec_file).read_text(encoding="ascii"))
    weights = tensorio.load_records(weights_file)
    engine = _Engine(spec, weights)

    def denoiser(x_t: np.ndarray, t: float, cond: np.ndarray | None = None) -> np.ndarray:
        latent = spec.in_channels - spec.cond_channels
        if x_t.ndim != 4 or x_t.shape[3] != latent:
            raise ValueError(f"expected (nx, ny, nz, {latent}) input, got {x_t.shape}")
        feats = np.transpose(x_t, (3, 0, 1, 2)).astype(np.float32)
        cvol = None
        if spec.cond_channels > 0:
            if cond is None:
                raise ValueError("denoiser requires condition channels")
            if cond.shape != x_t.shape[:3] + (spec.cond_channels,):
                raise ValueError(f"expected condition shape "
                                 f"{x_t.shape[:3] + (spec.cond_channels,)}, got {cond.shape}")
            cvol = np.transpose(cond, (3, 0, 1, 2)).astype(np.float32)
            feats = np.concatenate([feats, cvol], axis=0)
        out = engine.forward(feats, float(t), cvol)
        return np.transpose(out, (1, 2, 3, 0)).astype(np.float64)

    denoiser.spec = spec
    return denoiser
