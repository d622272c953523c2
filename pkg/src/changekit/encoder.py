"""Pluggable feature extractor producing a 4-level pyramid per temporal image.

Two backends share one contract (strides 4/8/16/32, identical weights for
both temporal images):

* ``toy_cnn`` -- a small trainable CNN, the default.
* ``frozen_file`` -- features precomputed elsewhere and stored in per-image
  archives; only a per-level 1x1 channel adapter is trainable.

Feature archive format (``.npz``): arrays ``level1`` .. ``level4`` of shape
[C_i, H/4/2^(i-1), W/4/2^(i-1)] float32, plus ``meta`` (uint8-encoded JSON
with shapes, dtype and strides).
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .core import NUM_LEVELS, FeaturePyramid, ImagePair, validate_pair


class BackendUnavailable(RuntimeError):
    pass


class ChannelMismatch(ValueError):
    pass


@dataclass
class EncoderSpec:
    backend: str = "toy_cnn"
    channels: list = field(default_factory=lambda: [16, 32, 64, 128])
    adapter_channels: Optional[int] = None
    kernel_size: int = 3            # 1 gives an exactly flip-equivariant encoder
    feature_dir: Optional[str] = None  # frozen_file archives live here

    def __post_init__(self):
        if self.backend not in ("toy_cnn", "frozen_file"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if len(self.channels) != NUM_LEVELS:
            raise ValueError(f"need {NUM_LEVELS} channel counts, got {self.channels}")
        if any(a >= b for a, b in zip(self.channels, self.channels[1:])):
            raise ValueError(f"channels must strictly increase, got {self.channels}")

    def as_dict(self) -> dict:
        return {
            "backend": self.backend,
            "channels": list(self.channels),
            "adapter_channels": self.adapter_channels,
            "kernel_size": self.kernel_size,
            "feature_dir": self.feature_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(**d)


def _group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, channels), channels)


class _Stage(nn.Module):
    """conv -> group norm -> ReLU -> pooled downsample.

    Average pooling keeps sub-cell edge positions readable from cell
    magnitudes (a partially covered cell pools to a proportional value),
    which the decoder needs to localize boundaries below the level stride.
    """

    def __init__(self, in_ch, out_ch, down, kernel_size):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size, padding=kernel_size // 2)
        self.norm = _group_norm(out_ch)
        self.act = nn.ReLU(inplace=True)
        self.pool = nn.AvgPool2d(down)

    def forward(self, x):
        return self.pool(self.act(self.norm(self.conv(x))))


class ToyCnnEncoder(nn.Module):
    """Four conv stages; the first downsamples 4x, the rest 2x each."""

    def __init__(self, spec: EncoderSpec, in_channels: int = 3):
        super().__init__()
        self.spec = spec
        chans = [in_channels] + list(spec.channels)
        downs = [4, 2, 2, 2]
        self.stages = nn.ModuleList(
            _Stage(chans[i], chans[i + 1], downs[i], spec.kernel_size)
            for i in range(NUM_LEVELS)
        )

    def forward(self, x: torch.Tensor) -> list:
        levels = []
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return levels

    def encode(self, p: ImagePair):
        validate_pair(p)
        batch = torch.stack([p.t1, p.t2])
        levels = self.forward(batch)
        pyr1 = FeaturePyramid([lv[0] for lv in levels], temporal_tag="t1")
        pyr2 = FeaturePyramid([lv[1] for lv in levels], temporal_tag="t2")
        return pyr1, pyr2


class FrozenFileEncoder(nn.Module):
    """Reads per-image feature archives; only the 1x1 adapters are trainable.

    Archives are looked up as ``<feature_dir>/<pair_id>_t1.npz`` and ``_t2.npz``.
    """

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        if spec.feature_dir is None:
            raise BackendUnavailable("frozen_file backend needs feature_dir")
        self.spec = spec
        self.feature_dir = Path(spec.feature_dir)
        if not self.feature_dir.is_dir():
            raise BackendUnavailable(f"feature_dir does not exist: {self.feature_dir}")
        out = spec.adapter_channels
        self.adapters = nn.ModuleList(
            nn.Conv2d(c, out or c, kernel_size=1) for c in spec.channels
        )
        self.init_identity()

    def init_identity(self):
        """Identity projection where shapes allow; the frozen default."""
        for conv in self.adapters:
            o, i = conv.out_channels, conv.in_channels
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)
            with torch.no_grad():
                for k in range(min(o, i)):
                    conv.weight[k, k, 0, 0] = 1.0

    def init_zero(self):
        for conv in self.adapters:
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)

    def _load(self, pair_id: str, tag: str) -> list:
        path = self.feature_dir / f"{pair_id}_{tag}.npz"
        if not path.exists():
            raise BackendUnavailable(f"no feature archive at {path}")
        return load_feature_archive(path)

    def apply_adapter(self, raw: FeaturePyramid) -> FeaturePyramid:
        out = []
        for conv, lv in zip(self.adapters, raw.levels):
            if lv.shape[0] != conv.in_channels:
                raise ChannelMismatch(
                    f"archive has {lv.shape[0]} channels, adapter expects {conv.in_channels}"
                )
            out.append(conv(lv.unsqueeze(0)).squeeze(0))
        return FeaturePyramid(out, temporal_tag=raw.temporal_tag)

    def encode(self, p: ImagePair):
        validate_pair(p)
        pyrs = []
        for tag in ("t1", "t2"):
            levels = [lv.detach() for lv in self._load(p.id, tag)]
            raw = FeaturePyramid(levels, temporal_tag=tag)
            pyrs.append(self.apply_adapter(raw))
        return tuple(pyrs)

    def forward(self, x):
        raise NotImplementedError("frozen_file backend encodes pairs by id, not tensors")


def build_encoder(spec: EncoderSpec, in_channels: int = 3) -> nn.Module:
    if spec.backend == "toy_cnn":
        return ToyCnnEncoder(spec, in_channels=in_channels)
    return FrozenFileEncoder(spec)


def encode(p: ImagePair, encoder: nn.Module):
    """Run one pair through the shared encoder; returns (pyramid_t1, pyramid_t2)."""
    return encoder.encode(p)


def save_feature_archive(path, levels):
    """Write four [C, h, w] float32 tensors as a named-level archive."""
    if len(levels) != NUM_LEVELS:
        raise ValueError(f"expected {NUM_LEVELS} levels, got {len(levels)}")
    arrays = {}
    meta = {"levels": {}}
    for i, lv in enumerate(levels, start=1):
        arr = np.asarray(lv.detach().cpu().numpy() if isinstance(lv, torch.Tensor) else lv)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        arrays[f"level{i}"] = arr
        meta["levels"][f"level{i}"] = {
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "stride": 4 * 2 ** (i - 1),
        }
    header = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, meta=header, **arrays)


def load_feature_archive(path) -> list:
    with np.load(path) as data:
        json.loads(bytes(data["meta"]).decode("utf-8"))  # validates the header
        return [torch.from_numpy(data[f"level{i}"].copy()) for i in range(1, NUM_LEVELS + 1)]
