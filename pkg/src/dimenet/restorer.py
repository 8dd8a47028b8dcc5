"""U-Net damage restorer with DSCAM blocks at the bottleneck."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .dscam import DSCAM
from .errors import ShapeError


@dataclass
class RestorerOutput:
    minus_C: torch.Tensor


def conv_act(cin, cout, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride=stride, padding=1), nn.GELU())


class DamageRestorer(nn.Module):
    """Estimates the degradation correction ``-C`` from ``I * L_bar`` and illumination features."""

    def __init__(self, base_channels: int = 16, depth: int = 2, dscam_blocks: int = 2,
                 illum_channels: int = 16, heads: int = 4, d_state: int = 8,
                 per_direction: bool = False, zero_init: bool = True):
        super().__init__()
        self.depth = depth
        widths = [base_channels * 2 ** i for i in range(depth + 1)]
        self.stem = conv_act(3, widths[0])
        self.down = nn.ModuleList(conv_act(widths[i], widths[i + 1], stride=2) for i in range(depth))
        # parallel pyramid bringing illumination features to bottleneck resolution/width
        self.illum_stem = conv_act(illum_channels, widths[0])
        self.illum_down = nn.ModuleList(conv_act(widths[i], widths[i + 1], stride=2) for i in range(depth))
        self.bottleneck = nn.ModuleList(
            DSCAM(widths[-1], heads, d_state, per_direction, zero_init) for _ in range(dscam_blocks)
        )
        self.up = nn.ModuleList(conv_act(widths[i + 1], widths[i]) for i in reversed(range(depth)))
        self.fuse = nn.ModuleList(conv_act(2 * widths[i], widths[i]) for i in reversed(range(depth)))
        self.head = nn.Conv2d(widths[0], 3, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @property
    def multiple(self) -> int:
        return 2 ** self.depth

    def forward(self, lit: torch.Tensor, l_feat: torch.Tensor, skip_scale: float = 1.0) -> RestorerOutput:
        h, w = lit.shape[-2:]
        if h % self.multiple or w % self.multiple:
            raise ShapeError(f"input {h}x{w} is not divisible by {self.multiple}; pad it first "
                             "(the model pads reflectively and crops back)")
        x = self.stem(lit)
        skips = [x]
        for down in self.down:
            x = down(x)
            skips.append(x)
        g = self.illum_stem(l_feat)
        for down in self.illum_down:
            g = down(g)
        for block in self.bottleneck:
            x = block(x, g)
        for up, fuse, skip in zip(self.up, self.fuse, reversed(skips[:-1])):
            x = up(F.interpolate(x, scale_factor=2, mode="nearest"))
            x = fuse(torch.cat([x, skip * skip_scale], dim=1))
        return RestorerOutput(minus_C=self.head(x))
