"""Shared tensor vocabulary: image pairs, feature pyramids, change maps, labels.

All dense data is float32 torch tensors on CPU. Images are CHW in [0, 1] and
their height/width must be divisible by the deepest pyramid stride (32);
`pad_to_stride` handles arbitrary sizes by reflective padding and records the
crop needed to undo it.
"""

from dataclasses import dataclass, field
from typing import Optional

import torch

STRIDE = 32          # deepest pyramid stride
NUM_LEVELS = 4
LEVEL_STRIDES = (4, 8, 16, 32)

MODES = ("supervised", "weak", "unsupervised")


class ShapeMismatch(ValueError):
    pass


class StrideError(ValueError):
    pass


class RangeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


@dataclass(frozen=True)
class ImagePair:
    """Co-registered bi-temporal images, each [C, H, W] float in [0, 1]."""

    t1: torch.Tensor
    t2: torch.Tensor
    id: str = ""

    @property
    def shape(self):
        return tuple(self.t1.shape)

    def swap(self) -> "ImagePair":
        return ImagePair(t1=self.t2, t2=self.t1, id=self.id)


def validate_pair(p: ImagePair) -> ImagePair:
    """Check the ImagePair invariants and return the pair unchanged."""
    if p.t1.shape != p.t2.shape:
        raise ShapeMismatch(f"t1 {tuple(p.t1.shape)} vs t2 {tuple(p.t2.shape)}")
    if p.t1.dim() != 3:
        raise ShapeMismatch(f"expected [C, H, W], got {tuple(p.t1.shape)}")
    _, h, w = p.t1.shape
    if h % STRIDE or w % STRIDE:
        raise StrideError(f"H and W must be divisible by {STRIDE}, got {h}x{w}")
    for name, t in (("t1", p.t1), ("t2", p.t2)):
        if not torch.isfinite(t).all():
            raise NonFiniteError(f"{name} contains NaN/Inf")
        if t.min() < 0 or t.max() > 1:
            raise RangeError(
                f"{name} values outside [0, 1]: min={t.min():.4f} max={t.max():.4f}"
            )
    return p


def pad_to_stride(img: torch.Tensor, stride: int = STRIDE):
    """Reflect-pad [C, H, W] up to the next multiple of `stride`.

    Returns (padded, (H, W)) where the original size allows cropping outputs
    back with `crop_to`.
    """
    _, h, w = img.shape
    ph = (stride - h % stride) % stride
    pw = (stride - w % stride) % stride
    if ph == 0 and pw == 0:
        return img, (h, w)
    padded = torch.nn.functional.pad(img.unsqueeze(0), (0, pw, 0, ph), mode="reflect")
    return padded.squeeze(0), (h, w)


def crop_to(t: torch.Tensor, size):
    h, w = size
    return t[..., :h, :w]


@dataclass
class FeaturePyramid:
    """Four feature levels at strides 4/8/16/32, finest first."""

    levels: list
    temporal_tag: str = "t1"

    def __post_init__(self):
        if len(self.levels) != NUM_LEVELS:
            raise ShapeMismatch(f"expected {NUM_LEVELS} levels, got {len(self.levels)}")
        for i in range(NUM_LEVELS - 1):
            ha, wa = self.levels[i].shape[-2:]
            hb, wb = self.levels[i + 1].shape[-2:]
            if (ha, wa) != (2 * hb, 2 * wb):
                raise ShapeMismatch(
                    f"level {i + 2} must halve level {i + 1}: {(ha, wa)} -> {(hb, wb)}"
                )

    def assert_finite(self):
        for i, lv in enumerate(self.levels):
            if not torch.isfinite(lv).all():
                raise NonFiniteError(f"pyramid level {i + 1} contains NaN/Inf")

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)


@dataclass
class ChangeMap:
    """Dense per-pixel change score in [0, 1] plus its binarization."""

    scores: torch.Tensor
    threshold: float = 0.5

    def __post_init__(self):
        s = self.scores
        if s.min() < 0 or s.max() > 1:
            raise RangeError(f"scores outside [0, 1]: min={s.min():.4f} max={s.max():.4f}")

    def binary(self) -> torch.Tensor:
        return (self.scores > self.threshold).to(torch.uint8)


@dataclass
class LabelSet:
    """Labels available for one pair under a given supervision mode."""

    mode: str
    pixel: Optional[torch.Tensor] = None
    image_level: Optional[int] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.mode == "supervised" and self.pixel is None:
            raise ValueError("supervised mode requires a pixel label")
        if self.mode == "weak" and self.image_level is None:
            raise ValueError("weak mode requires an image-level label")


def minmax_normalize(t: torch.Tensor) -> torch.Tensor:
    """Rescale to [0, 1]; constant inputs map to all-zeros."""
    lo = t.min()
    hi = t.max()
    if hi - lo <= 0:
        return torch.zeros_like(t)
    return (t - lo) / (hi - lo)
