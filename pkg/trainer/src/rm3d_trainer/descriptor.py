"""Text descriptor for denoiser/regression networks.

Same grammar the inference side consumes (`format rm3d-denoiser/1`, header
keys, then `layer <kind> <args...>` lines); weights exported under
`layers.<index>.<param>` must line up with this list.
"""

from __future__ import annotations

from dataclasses import dataclass, field

FORMAT_TAG = "rm3d-denoiser/1"
LAYER_KINDS = {"conv", "resblock", "down", "up", "push", "cat", "silu", "groupnorm", "xattn"}


@dataclass
class NetSpec:
    in_channels: int
    out_channels: int
    cond_channels: int = 0
    cond_mode: str = "none"
    time_dim: int = 0
    layers: list[tuple] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"format {FORMAT_TAG}",
            f"in_channels {self.in_channels}",
            f"out_channels {self.out_channels}",
            f"cond_channels {self.cond_channels}",
            f"cond_mode {self.cond_mode}",
            f"time_dim {self.time_dim}",
        ]
        lines += ["layer " + " ".join(str(v) for v in layer) for layer in self.layers]
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse(text: str) -> "NetSpec":
        head: dict[str, str] = {}
        layers: list[tuple] = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if tok[0] == "layer":
                if tok[1] not in LAYER_KINDS:
                    raise ValueError(f"unknown layer kind {tok[1]!r}")
                layers.append((tok[1], *(int(v) for v in tok[2:])))
            else:
                head[tok[0]] = tok[1]
        if head.get("format") != FORMAT_TAG:
            raise ValueError(f"unsupported descriptor format {head.get('format')!r}")
        return NetSpec(int(head["in_channels"]), int(head["out_channels"]),
                       int(head.get("cond_channels", 0)), head.get("cond_mode", "none"),
                       int(head.get("time_dim", 0)), layers)


def unet_spec(cond_channels: int, out_channels: int = 1, base: int = 16,
              time_dim: int = 32, cond_mode: str = "film",
              latent_channels: int | None = None) -> NetSpec:
    """Small two-level U-Net; latent_channels=0 gives a regression network
    whose input is the condition stack alone."""
    latent = out_channels if latent_channels is None else latent_channels
    cin = latent + cond_channels
    b2 = base * 2
    return NetSpec(
        in_channels=cin, out_channels=out_channels, cond_channels=cond_channels,
        cond_mode=cond_mode, time_dim=time_dim,
        layers=[
            ("conv", cin, base, 3),
            ("push",),
            ("resblock", base, base),
            ("down", base, b2),
            ("resblock", b2, b2),
            ("up", b2, base),
            ("cat",),
            ("conv", 2 * base, base, 3),
            ("resblock", base, base),
            ("groupnorm", base),
            ("silu",),
            ("conv", base, out_channels, 3),
        ],
    )
