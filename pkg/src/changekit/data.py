"""Directory-corpus loading: A/, B/, label/ with filename-aligned PNGs.

A corpus root either contains the A/B/label directories directly or under a
split subdirectory (train/val/test). Optional sidecars: image_labels.json
(id -> 0/1), masks/<id>.png (indexed instance masks), embeddings.npz.
Images larger than patch_size are tiled without overlap.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .core import ImagePair, LabelSet, validate_pair
from .pseudo import InstanceMaskSet


class LayoutError(ValueError):
    pass


class MissingPair(FileNotFoundError):
    pass


class CorruptImage(ValueError):
    pass


@dataclass
class CorpusSpec:
    root: str
    split: str = "train"
    layout: str = "levir_style"
    patch_size: int = 64

    def __post_init__(self):
        if self.layout != "levir_style":
            raise LayoutError(f"unknown layout {self.layout!r}")


def _load_image(path: Path) -> torch.Tensor:
    try:
        img = Image.open(path).convert("RGB")
    except Exception as e:
        raise CorruptImage(f"{path}: {e}") from e
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def _load_label(path: Path) -> torch.Tensor:
    try:
        img = Image.open(path).convert("L")
    except Exception as e:
        raise CorruptImage(f"{path}: {e}") from e
    arr = np.asarray(img)
    return torch.from_numpy((arr != 0).astype(np.uint8))


def _tiles(h: int, w: int, patch: int):
    for r in range(h // patch):
        for c in range(w // patch):
            yield r, c


class Corpus:
    """Resolved corpus directory with lazy sidecar access."""

    def __init__(self, spec: CorpusSpec):
        self.spec = spec
        root = Path(spec.root)
        if (root / spec.split / "A").is_dir():
            self.dir = root / spec.split
        elif (root / "A").is_dir():
            self.dir = root
        else:
            raise LayoutError(f"no A/ directory under {root} or {root / spec.split}")
        if not (self.dir / "B").is_dir():
            raise LayoutError(f"missing B/ directory under {self.dir}")
        self.ids = sorted(p.stem for p in (self.dir / "A").glob("*.png"))
        if not self.ids:
            raise LayoutError(f"no PNG images under {self.dir / 'A'}")
        self._image_labels = None

    @property
    def label_dir(self) -> Path:
        return self.dir / "label"

    @property
    def has_pixel_labels(self) -> bool:
        return self.label_dir.is_dir()

    @property
    def embeddings_path(self) -> Path:
        return self.dir / "embeddings.npz"

    @property
    def image_labels(self) -> dict:
        if self._image_labels is None:
            path = self.dir / "image_labels.json"
            self._image_labels = json.loads(path.read_text()) if path.exists() else {}
        return self._image_labels

    def pair(self, pair_id: str) -> ImagePair:
        a = self.dir / "A" / f"{pair_id}.png"
        b = self.dir / "B" / f"{pair_id}.png"
        if not a.exists() or not b.exists():
            raise MissingPair(f"missing A or B image for {pair_id}")
        return ImagePair(t1=_load_image(a), t2=_load_image(b), id=pair_id)

    def pixel_label(self, pair_id: str) -> torch.Tensor:
        path = self.label_dir / f"{pair_id}.png"
        if not path.exists():
            raise MissingPair(f"missing label for {pair_id}")
        return _load_label(path)

    def mask_set(self, pair_id: str, shape=None) -> InstanceMaskSet:
        path = self.dir / "masks" / f"{pair_id}.png"
        if not path.exists():
            return InstanceMaskSet([], source="file", shape=shape)
        arr = np.asarray(Image.open(path))
        masks = [
            torch.from_numpy((arr == k).astype(np.uint8))
            for k in sorted(np.unique(arr)) if k != 0
        ]
        return InstanceMaskSet(masks, source="file", shape=shape or arr.shape)

    def items(self, mode: str = "supervised"):
        """Stream (ImagePair, LabelSet) in filename order, tiling as needed."""
        patch = self.spec.patch_size
        for pair_id in self.ids:
            pair = self.pair(pair_id)
            pixel = self.pixel_label(pair_id) if self.has_pixel_labels else None
            if pixel is not None and pixel.shape != pair.t1.shape[-2:]:
                raise CorruptImage(f"label shape {tuple(pixel.shape)} mismatches {pair_id}")
            _, h, w = pair.t1.shape
            if h == patch and w == patch:
                yield validate_pair(pair), self._label_set(mode, pair_id, pixel)
                continue
            for r, c in _tiles(h, w, patch):
                sl = (slice(r * patch, (r + 1) * patch), slice(c * patch, (c + 1) * patch))
                tile_pair = ImagePair(
                    t1=pair.t1[:, sl[0], sl[1]],
                    t2=pair.t2[:, sl[0], sl[1]],
                    id=f"{pair_id}_r{r}_c{c}",
                )
                tile_pixel = pixel[sl[0], sl[1]] if pixel is not None else None
                yield validate_pair(tile_pair), self._label_set(mode, pair_id, tile_pixel)

    def _label_set(self, mode: str, pair_id: str, pixel) -> LabelSet:
        if mode == "supervised":
            if pixel is None:
                raise MissingPair(f"supervised mode needs pixel labels ({self.label_dir})")
            return LabelSet(mode=mode, pixel=pixel)
        if mode == "weak":
            if pixel is not None:
                image_level = int(bool(pixel.any()))
            elif pair_id in self.image_labels:
                image_level = int(self.image_labels[pair_id])
            else:
                raise MissingPair(f"weak mode needs image_labels.json entry for {pair_id}")
            return LabelSet(mode=mode, image_level=image_level)
        return LabelSet(mode="unsupervised")


def load_corpus(spec: CorpusSpec, mode: str = "supervised"):
    """Stream (ImagePair, LabelSet) for a corpus directory."""
    return Corpus(spec).items(mode)
