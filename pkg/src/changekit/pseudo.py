"""Pseudo-label inference for the unsupervised branch.

Instance masks are scored against foreground/background vocabularies through
an image/text embedding backend, mapped onto a saliency map, combined with a
bi-temporal feature cosine-distance map, and reduced to a per-pair pseudo
change map plus an image-level pseudo label.

Two backends satisfy the embedding contract:

* ``embedding_file`` -- vectors precomputed into an ``.npz`` archive keyed by
  ``text::<term>`` and ``mask::<mask_id>``.
* ``synthetic_oracle`` -- deterministic hash-seeded unit vectors; the region's
  mean color decides whether it embeds near the foreground or background
  anchor direction, with a controlled cosine gap either way.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .config import RunConfig
from .core import FeaturePyramid, minmax_normalize

EMBED_DIM = 64
ANCHOR_COS = 0.25        # cosine between the fg and bg anchor directions
TEXT_ANCHOR_COS = 0.97   # term vectors hug their class anchor
IMAGE_ANCHOR_COS = 0.8   # region vectors sit at this cosine from their anchor

DEFAULT_FOREGROUND = ["building", "house", "road", "construction"]
DEFAULT_BACKGROUND = ["vegetation", "bare land", "water", "shadow"]


class EmbeddingMissing(KeyError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass
class Vocabulary:
    foreground: list = field(default_factory=lambda: list(DEFAULT_FOREGROUND))
    background: list = field(default_factory=lambda: list(DEFAULT_BACKGROUND))

    def __post_init__(self):
        if not self.foreground or not self.background:
            raise ValueError("both vocabularies must be non-empty")
        if set(self.foreground) & set(self.background):
            raise ValueError("foreground and background vocabularies overlap")


@dataclass
class InstanceMaskSet:
    masks: list
    source: str = "synthetic_oracle"
    shape: Optional[tuple] = None  # needed when masks is empty

    def __post_init__(self):
        for i, m in enumerate(self.masks):
            if m.sum() == 0:
                raise ValueError(f"mask {i} is empty")
        if self.shape is None and self.masks:
            self.shape = tuple(self.masks[0].shape[-2:])


@dataclass
class PseudoLabelPacket:
    f_f: torch.Tensor
    d: torch.Tensor
    v: torch.Tensor
    image_label: int
    changed_fraction: float
    pair_id: str = ""

    def record(self) -> dict:
        return {
            "id": self.pair_id,
            "changed_fraction": self.changed_fraction,
            "image_label": self.image_label,
        }


# --- deterministic embedding construction -----------------------------------


def _seeded_unit(key: str, dim: int = EMBED_DIM) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _anchors(dim: int = EMBED_DIM):
    a_fg = _seeded_unit("anchor::fg", dim)
    raw = _seeded_unit("anchor::bg", dim)
    ortho = raw - (raw @ a_fg) * a_fg
    ortho /= np.linalg.norm(ortho)
    a_bg = ANCHOR_COS * a_fg + math.sqrt(1 - ANCHOR_COS**2) * ortho
    return a_fg, a_bg


def _jitter(key: str, dim: int = EMBED_DIM) -> np.ndarray:
    a_fg, a_bg = _anchors(dim)
    v = _seeded_unit(key, dim)
    for a in (a_fg, a_bg):
        v = v - (v @ a) * a
    return v / np.linalg.norm(v)


def _on_cone(anchor: np.ndarray, jitter: np.ndarray, cosine: float) -> np.ndarray:
    v = cosine * anchor + math.sqrt(1 - cosine**2) * jitter
    return v / np.linalg.norm(v)


def text_embedding(term: str, vocab: Vocabulary, dim: int = EMBED_DIM) -> np.ndarray:
    """Deterministic unit vector for a vocabulary term (class-anchored)."""
    a_fg, a_bg = _anchors(dim)
    if term in vocab.foreground:
        return _on_cone(a_fg, _jitter(f"text::{term}", dim), TEXT_ANCHOR_COS)
    if term in vocab.background:
        return _on_cone(a_bg, _jitter(f"text::{term}", dim), TEXT_ANCHOR_COS)
    return _seeded_unit(f"text::{term}", dim)


def class_image_embedding(
    clazz: str, key: str, cosine: float = IMAGE_ANCHOR_COS, noise: float = 0.0,
    dim: int = EMBED_DIM,
) -> np.ndarray:
    """Unit vector for an instance of known class ('fg' or 'bg').

    `noise` jitters the anchor cosine, trading pseudo-label quality down in a
    controlled way.
    """
    a_fg, a_bg = _anchors(dim)
    anchor = a_fg if clazz == "fg" else a_bg
    if noise:
        rng = np.random.default_rng(
            int.from_bytes(hashlib.sha256(f"noise::{key}".encode()).digest()[:8], "little")
        )
        cosine = float(np.clip(cosine + rng.normal(0.0, noise), -0.99, 0.99))
    return _on_cone(anchor, _jitter(f"mask::{key}", dim), cosine)


def region_mean_color(masked_image: torch.Tensor) -> torch.Tensor:
    """Mean color over the masked support (pixels with nonzero channel sum)."""
    support = masked_image.sum(dim=0) > 0
    if not support.any():
        return torch.zeros(masked_image.shape[0])
    return masked_image[:, support].mean(dim=1)


class SyntheticOracleBackend:
    """Embeds regions by recognizing the synthetic palette: green-dominant
    regions land near the background anchor, gray/bright ones near the
    foreground anchor.
    """

    kind = "synthetic_oracle"

    def __init__(self, vocab: Optional[Vocabulary] = None, noise: float = 0.0):
        self.vocab = vocab or Vocabulary()
        self.noise = noise

    def embed_text(self, term: str) -> np.ndarray:
        return text_embedding(term, self.vocab)

    def embed_mask(self, masked_image: torch.Tensor, mask_id: str = "") -> np.ndarray:
        c = region_mean_color(masked_image)
        r, g, b = (float(c[0]), float(c[1]), float(c[2])) if c.numel() >= 3 else (c[0], c[0], c[0])
        clazz = "bg" if (g > r + 0.05 and g > b + 0.05) else "fg"
        key = mask_id or hashlib.sha256(
            masked_image.numpy().astype(np.float32).tobytes()
        ).hexdigest()[:16]
        return class_image_embedding(clazz, key, noise=self.noise)


class EmbeddingFileBackend:
    """Looks vectors up in an archive; raises EmbeddingMissing on gaps."""

    kind = "embedding_file"

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            raise EmbeddingMissing(f"no embedding archive at {self.path}")
        with np.load(self.path) as data:
            self._vectors = {k: data[k].copy() for k in data.files if k != "meta"}

    def _get(self, key: str) -> np.ndarray:
        if key not in self._vectors:
            raise EmbeddingMissing(key)
        v = self._vectors[key]
        return v / np.linalg.norm(v)

    def embed_text(self, term: str) -> np.ndarray:
        return self._get(f"text::{term}")

    def embed_mask(self, masked_image=None, mask_id: str = "") -> np.ndarray:
        return self._get(f"mask::{mask_id}")


def save_embeddings(path, text: dict, masks: dict):
    """Write an embedding archive: term->vector and mask_id->vector."""
    arrays = {f"text::{k}": np.asarray(v, dtype=np.float32) for k, v in text.items()}
    arrays.update({f"mask::{k}": np.asarray(v, dtype=np.float32) for k, v in masks.items()})
    meta = {"dim": EMBED_DIM, "n_text": len(text), "n_masks": len(masks)}
    header = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, meta=header, **arrays)


# --- pipeline operations -----------------------------------------------------


def foreground_prob(mask, img, vocab: Vocabulary, backend, mask_id: str = "") -> float:
    """Softmax mass of the foreground terms among all vocabulary terms, scored
    by cosine similarity between the masked-region embedding and each term.
    """
    masked = img * mask.to(img.dtype)
    v = backend.embed_mask(masked, mask_id=mask_id)
    cosines = [float(v @ backend.embed_text(t)) for t in vocab.foreground + vocab.background]
    exps = np.exp(np.asarray(cosines))
    return float(exps[: len(vocab.foreground)].sum() / exps.sum())


def saliency_map(mask_set: InstanceMaskSet, probs: list) -> torch.Tensor:
    """Per-pixel max of instance scores over covering masks; 0 outside all."""
    if len(probs) != len(mask_set.masks):
        raise LengthMismatch(f"{len(probs)} probs for {len(mask_set.masks)} masks")
    if mask_set.shape is None:
        raise ValueError("empty mask set needs an explicit shape")
    out = torch.zeros(mask_set.shape)
    for m, p in zip(mask_set.masks, probs):
        out = torch.maximum(out, m.to(out.dtype) * p)
    return out


def distance_map(f1: FeaturePyramid, f2: FeaturePyramid) -> torch.Tensor:
    """Per-pixel cosine distance between scale-aligned concatenated features,
    upsampled to image resolution. Pixels with a near-zero vector get 0.
    """
    size = f1.levels[0].shape[-2:]

    def stack(pyr):
        ups = [
            F.interpolate(lv.unsqueeze(0), size=size, mode="bilinear", align_corners=False)
            for lv in pyr.levels
        ]
        return torch.cat(ups, dim=1).squeeze(0)

    a = stack(f1)
    b = stack(f2)
    na = a.norm(dim=0)
    nb = b.norm(dim=0)
    cos = (a * b).sum(dim=0) / (na * nb).clamp_min(1e-24)
    d = 1.0 - cos
    d = torch.where((na < 1e-12) | (nb < 1e-12), torch.zeros_like(d), d)
    d = d.clamp(0.0, 2.0)
    up = F.interpolate(d.unsqueeze(0).unsqueeze(0), scale_factor=4,
                       mode="bilinear", align_corners=False)
    return up.squeeze(0).squeeze(0)


def compose_pseudo(f_f: torch.Tensor, d: torch.Tensor, cfg: RunConfig,
                   pair_id: str = "") -> PseudoLabelPacket:
    """Combine saliency and distance into the pseudo map and image label.

    The raw map is their elementwise product; the normalized map is its
    min-max rescaling (constant maps become all-zeros); the image label fires
    when the fraction of pixels above the binarization threshold reaches
    cfg.v_image_frac.
    """
    if f_f.shape != d.shape:
        raise ValueError(f"saliency {tuple(f_f.shape)} vs distance {tuple(d.shape)}")
    v_raw = f_f * d
    v = minmax_normalize(v_raw)
    changed_fraction = float((v > cfg.v_binarize).float().mean())
    image_label = int(changed_fraction >= cfg.v_image_frac)
    return PseudoLabelPacket(
        f_f=f_f, d=d, v=v, image_label=image_label,
        changed_fraction=changed_fraction, pair_id=pair_id,
    )


def pseudo_label_pair(pair, mask_set: InstanceMaskSet, vocab: Vocabulary,
                      backend, encoder, cfg: RunConfig) -> PseudoLabelPacket:
    """Full per-pair pipeline: score masks on both temporal images (shared
    masks, max-combined saliency), feature distance, composition.
    """
    probs = []
    for k, m in enumerate(mask_set.masks):
        mask_id = f"{pair.id}::{k}"
        p1 = foreground_prob(m, pair.t1, vocab, backend, mask_id=mask_id)
        p2 = foreground_prob(m, pair.t2, vocab, backend, mask_id=mask_id)
        probs.append(max(p1, p2))
    shape = mask_set.shape or tuple(pair.t1.shape[-2:])
    f_f = saliency_map(
        InstanceMaskSet(mask_set.masks, source=mask_set.source, shape=shape), probs
    )
    with torch.no_grad():
        pyr1, pyr2 = encoder.encode(pair)
        d = distance_map(pyr1, pyr2)
    return compose_pseudo(f_f, d, cfg, pair_id=pair.id)


def pseudo_label_quality(packets: list, truth: list) -> float:
    """Fraction of image-level pseudo labels that match the ground truth."""
    if len(packets) != len(truth):
        raise LengthMismatch(f"{len(packets)} packets vs {len(truth)} labels")
    if not packets:
        raise LengthMismatch("no packets to score")
    correct = sum(int(p.image_label == int(t)) for p, t in zip(packets, truth))
    return correct / len(packets)


def write_records(packets: list, path):
    records = [p.record() for p in packets]
    with open(path, "w") as f:
        json.dump(records, f, indent=2)
