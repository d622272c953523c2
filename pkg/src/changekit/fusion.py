"""Spatio-temporal fusion of bi-temporal feature pyramids plus the score decoder.

Fusion runs in two stages: a top-down pass inside each temporal phase
(upsample the deeper level, concatenate, mix) and a cross-phase pass
(concatenate the two phases per level, mix). A configuration switch swaps
both stages for plain per-level concatenation + 1x1 conv, the ablation
baseline. The decoder turns fused levels into a full-resolution score map.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import FeaturePyramid, ShapeMismatch
from .encoder import _group_norm

FUSED_LEVELS = 3  # top-down fusion emits levels 1..3; level 4 enters via level 3


@dataclass
class SpatialFused:
    levels: list
    temporal_tag: str = "t1"


@dataclass
class TemporalFused:
    levels: list


def _upsample_to(x: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, size=ref.shape[-2:], mode="bilinear", align_corners=False)


class MlpBlock(nn.Module):
    """3x3 conv -> group norm -> ReLU, the lightweight mixing block."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm = _group_norm(out_ch)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class SpatialFusion(nn.Module):
    """Top-down per-phase fusion: level i absorbs upsampled level i+1."""

    def __init__(self, channels):
        super().__init__()
        self.blocks = nn.ModuleList(
            MlpBlock(channels[i] + channels[i + 1], channels[i])
            for i in range(FUSED_LEVELS)
        )

    def forward(self, levels: list) -> list:
        out = []
        for i, block in enumerate(self.blocks):
            deeper = _upsample_to(levels[i + 1], levels[i])
            out.append(block(torch.cat([levels[i], deeper], dim=1)))
        return out

    def fuse(self, pyr: FeaturePyramid) -> SpatialFused:
        levels = [lv.unsqueeze(0) for lv in pyr.levels]
        fused = self.forward(levels)
        return SpatialFused([lv.squeeze(0) for lv in fused], temporal_tag=pyr.temporal_tag)


class TemporalFusion(nn.Module):
    """Cross-phase coupling: concatenate the two phases per level, then mix."""

    def __init__(self, channels):
        super().__init__()
        self.blocks = nn.ModuleList(
            MlpBlock(2 * channels[i], channels[i]) for i in range(FUSED_LEVELS)
        )

    def forward(self, a: list, b: list) -> list:
        out = []
        for block, x, y in zip(self.blocks, a, b):
            if x.shape != y.shape:
                raise ShapeMismatch(f"phase shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
            out.append(block(torch.cat([x, y], dim=1)))
        return out

    def fuse(self, a: SpatialFused, b: SpatialFused) -> TemporalFused:
        fused = self.forward(
            [lv.unsqueeze(0) for lv in a.levels],
            [lv.unsqueeze(0) for lv in b.levels],
        )
        return TemporalFused([lv.squeeze(0) for lv in fused])


class ConcatBaselineFusion(nn.Module):
    """Ablation baseline: per-level bi-temporal concatenation + 1x1 conv only."""

    def __init__(self, channels):
        super().__init__()
        self.blocks = nn.ModuleList(
            nn.Conv2d(2 * channels[i], channels[i], 1) for i in range(FUSED_LEVELS)
        )

    def forward(self, levels1: list, levels2: list) -> list:
        return [
            block(torch.cat([x, y], dim=1))
            for block, x, y in zip(self.blocks, levels1, levels2)
        ]


class Decoder(nn.Module):
    """Addition-fused top-down decoder ending in a zero-initialized sigmoid head.

    Each 2x upsampling step refines with 3x3 convs; the two full-resolution
    steps get a second conv so sub-stride edge positions encoded in pooled
    feature magnitudes can be turned back into sharp boundaries. The zero
    head makes an untrained model emit scores of exactly 0.5.
    """

    def __init__(self, channels, width=32):
        super().__init__()
        w = width
        self.proj = nn.ModuleList(nn.Conv2d(channels[i], w, 1) for i in range(FUSED_LEVELS))
        # one refine block per 2x upsampling step: /16 -> /8 -> /4 -> /2 -> /1
        def block(n_convs):
            layers = []
            for _ in range(n_convs):
                layers += [nn.Conv2d(w, w, 3, padding=1), nn.ReLU(inplace=True)]
            return nn.Sequential(*layers)

        self.refine = nn.ModuleList([block(1), block(1), block(2), block(2)])
        self.head = nn.Conv2d(w, 1, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, fused: list) -> torch.Tensor:
        x = self.proj[2](fused[2])
        for step, conv in enumerate(self.refine):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            if step < 2:
                x = x + self.proj[1 - step](fused[1 - step])
            x = conv(x)
        return torch.sigmoid(self.head(x)).squeeze(1)

    def decode(self, f: TemporalFused) -> torch.Tensor:
        return self.forward([lv.unsqueeze(0) for lv in f.levels]).squeeze(0)
