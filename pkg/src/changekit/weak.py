"""Weakly-supervised branch: classification head with activation maps, the
spatial-consistency regularizer, activation-derived anchor regions, and the
region-contrast regularizer. The combined weak objective is their plain sum.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import RunConfig
from .core import FeaturePyramid, ImagePair, minmax_normalize
from .encoder import BackendUnavailable, FrozenFileEncoder

TRANSFORM_KINDS = ("hflip", "vflip", "rot180")


@dataclass(frozen=True)
class SpatialTransform:
    """Involutive spatial inversion applied to the last two tensor dims."""

    kind: str

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform {self.kind!r}")

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        if self.kind == "hflip":
            return torch.flip(x, dims=(-1,))
        if self.kind == "vflip":
            return torch.flip(x, dims=(-2,))
        return torch.flip(x, dims=(-2, -1))

    def inverse(self) -> "SpatialTransform":
        return self  # all three inversions are their own inverse


def sample_transform(generator: torch.Generator) -> SpatialTransform:
    idx = int(torch.randint(len(TRANSFORM_KINDS), (1,), generator=generator))
    return SpatialTransform(TRANSFORM_KINDS[idx])


@dataclass
class CamOutput:
    """Min-max-normalized activation map plus the image-level logit."""

    cam: torch.Tensor
    logit: torch.Tensor
    scale: int = 1


@dataclass
class AnchorRegions:
    r_c: torch.Tensor
    r_u: torch.Tensor
    area_c: int
    area_u: int


class ClassifierHead(nn.Module):
    """Image-level changed/unchanged classifier over the finest fused level.

    The activation map is the classifier-weight-weighted channel sum before
    pooling (rectified, then min-max normalized), so the logit equals the
    raw map's spatial mean plus the bias.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.fc = nn.Linear(channels, 1)
        nn.init.zeros_(self.fc.weight)
        nn.init.zeros_(self.fc.bias)

    def forward(self, feat: torch.Tensor):
        """feat: [B, C, h, w] -> (logits [B], cams [B, h, w])."""
        raw = torch.einsum("bchw,c->bhw", feat, self.fc.weight[0])
        logits = raw.mean(dim=(-2, -1)) + self.fc.bias[0]
        cams = torch.stack([minmax_normalize(F.relu(r)) for r in raw])
        return logits, cams


def classify(fused_finest: torch.Tensor, head: ClassifierHead) -> CamOutput:
    """Single-pair version: fused_finest is the [C, h, w] finest fused level."""
    logits, cams = head(fused_finest.unsqueeze(0))
    return CamOutput(cam=cams[0], logit=logits[0], scale=1)


def cls_loss(logit: torch.Tensor, label) -> torch.Tensor:
    """Binary cross-entropy on the sigmoid of the image-level logit."""
    logit = torch.as_tensor(logit, dtype=torch.float32)
    target = torch.as_tensor(float(label), dtype=logit.dtype)
    return F.binary_cross_entropy_with_logits(logit, target)


def _feature_consistency(levels, levels_t, t: SpatialTransform) -> torch.Tensor:
    inv = t.inverse()
    terms = [torch.mean(torch.abs(inv.apply(lt) - lv)) for lv, lt in zip(levels, levels_t)]
    return torch.stack(terms).mean()


def scr_loss(p: ImagePair, t: SpatialTransform, encoder) -> torch.Tensor:
    """Mean L1 distance between features of the original inputs and the
    realigned features of the spatially inverted inputs, averaged over all
    pyramid levels and both temporal images.
    """
    if isinstance(encoder, FrozenFileEncoder):
        raise BackendUnavailable(
            "stored-feature backend cannot encode transformed inputs"
        )
    pyr1, pyr2 = encoder.encode(p)
    tp = ImagePair(t1=t.apply(p.t1), t2=t.apply(p.t2), id=p.id)
    pyr1_t, pyr2_t = encoder.encode(tp)
    a = _feature_consistency(pyr1.levels, pyr1_t.levels, t)
    b = _feature_consistency(pyr2.levels, pyr2_t.levels, t)
    return (a + b) / 2


def scr_loss_batched(images: torch.Tensor, t: SpatialTransform, encoder) -> torch.Tensor:
    """Batched variant over stacked images [N, C, H, W] (both phases together)."""
    if isinstance(encoder, FrozenFileEncoder):
        raise BackendUnavailable(
            "stored-feature backend cannot encode transformed inputs"
        )
    levels = encoder(images)
    levels_t = encoder(t.apply(images))
    return _feature_consistency(levels, levels_t, t)


def extract_anchors(cam, cfg: RunConfig) -> AnchorRegions:
    """Threshold a normalized activation map into changed/unchanged anchors."""
    cam_t = cam.cam if isinstance(cam, CamOutput) else cam
    cam_t = cam_t.detach()
    r_c = (cam_t >= cfg.cam_high).to(torch.uint8)
    r_u = (cam_t <= cfg.cam_low).to(torch.uint8)
    return AnchorRegions(
        r_c=r_c, r_u=r_u, area_c=int(r_c.sum().item()), area_u=int(r_u.sum().item())
    )


def _resize_mask(mask: torch.Tensor, size) -> torch.Tensor:
    if tuple(mask.shape[-2:]) == tuple(size):
        return mask.to(torch.float32)
    m = mask.to(torch.float32).unsqueeze(0).unsqueeze(0)
    return F.interpolate(m, size=size, mode="nearest").squeeze(0).squeeze(0)


def cfr_loss(
    f1: FeaturePyramid, f2: FeaturePyramid, a: AnchorRegions, cfg: RunConfig
) -> torch.Tensor:
    """Region-contrast loss: push bi-temporal features apart inside changed
    anchors and together inside unchanged anchors.

    Features are L2-normalized per pixel across channels before differencing;
    anchors are nearest-resized to each level. Empty anchors contribute 0
    through the epsilon guard. Accepts feature pyramids or plain level lists.
    """
    levels1 = f1.levels if hasattr(f1, "levels") else f1
    levels2 = f2.levels if hasattr(f2, "levels") else f2
    terms = []
    for lv1, lv2 in zip(levels1, levels2):
        n1 = F.normalize(lv1, dim=-3, eps=1e-12)
        n2 = F.normalize(lv2, dim=-3, eps=1e-12)
        diff = torch.abs(n1 - n2).sum(dim=-3)  # per-pixel L1 over channels
        rc = _resize_mask(a.r_c, diff.shape[-2:])
        ru = _resize_mask(a.r_u, diff.shape[-2:])
        changed = (diff * rc).sum() / (rc.sum() + cfg.epsilon)
        unchanged = (diff * ru).sum() / (ru.sum() + cfg.epsilon)
        terms.append(1.0 - changed + unchanged)
    return torch.stack(terms).mean()


def weak_loss(cls_term, sc_term, cf_term) -> torch.Tensor:
    """Combined weak objective: the unweighted sum of the three parts."""
    parts = [torch.as_tensor(p, dtype=torch.float32) for p in (cls_term, sc_term, cf_term)]
    return parts[0] + parts[1] + parts[2]
