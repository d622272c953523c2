"""Synthetic bi-temporal scene generator with full ground truth.

Each pair is a textured land background plus axis-aligned rectangular
objects: persistent ones (drawn in both images) and change objects
(buildings added to or removed from the second image). The second image also
gets a global illumination shift, per-pixel noise, and optionally a re-rolled
seasonal background texture; none of those count as change. Outputs per
corpus: A/, B/, label/, masks/ (indexed instance PNGs), image_labels.json,
embeddings.npz, synth_spec.json.
"""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .pseudo import DEFAULT_BACKGROUND, DEFAULT_FOREGROUND, Vocabulary, class_image_embedding, save_embeddings, text_embedding


@dataclass
class SynthSpec:
    n_pairs: int = 20
    size: int = 64
    n_change_objects: tuple = (0, 3)
    n_persistent_objects: tuple = (1, 2)
    persistent_object_rate: float = 0.25
    change_object_size: tuple = None       # (lo, hi) px; None derives from size
    persistent_object_size: tuple = None
    illum_shift: tuple = (-0.08, 0.08)
    noise_sigma: float = 0.01
    season_texture: bool = False
    embed_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.size % 32:
            raise ValueError(f"size must be divisible by 32, got {self.size}")
        if self.n_change_objects[0] < 0 or self.n_change_objects[1] < self.n_change_objects[0]:
            raise ValueError(f"bad change-object range {self.n_change_objects}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _texture(rng, size, base, amplitude=0.05):
    """Low-frequency color field around a base color."""
    coarse = rng.normal(0.0, 1.0, size=(3, size // 8, size // 8))
    field = np.kron(coarse, np.ones((1, 8, 8)))
    img = np.asarray(base, dtype=np.float32)[:, None, None] + amplitude * field
    return img.astype(np.float32)


def _place_rect(rng, size, lo, hi, occupied, tries=50):
    """Non-overlapping rectangle (y0, y1, x0, x1) or None if crowded."""
    for _ in range(tries):
        h = int(rng.integers(lo, hi + 1))
        w = int(rng.integers(lo, hi + 1))
        y = int(rng.integers(1, size - h - 1))
        x = int(rng.integers(1, size - w - 1))
        box = (y, y + h, x, x + w)
        if all(box[1] + 1 <= o[0] or o[1] + 1 <= box[0]
               or box[3] + 1 <= o[2] or o[3] + 1 <= box[2] for o in occupied):
            occupied.append(box)
            return box
    return None


def _building_color(rng):
    v = rng.uniform(0.55, 0.85)
    return np.clip([v + rng.uniform(-0.03, 0.03) for _ in range(3)], 0, 1)


def _veg_color(rng):
    return np.array([rng.uniform(0.08, 0.18), rng.uniform(0.35, 0.5), rng.uniform(0.08, 0.18)])


def _paint(img, box, color):
    y0, y1, x0, x1 = box
    img[:, y0:y1, x0:x1] = np.asarray(color, dtype=np.float32)[:, None, None]


def _save_png(path, img):
    arr = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def _save_mask_png(path, index_map):
    im = Image.fromarray(index_map.astype(np.uint8), mode="P")
    palette = [0, 0, 0]
    rng = np.random.default_rng(7)
    for _ in range(255):
        palette.extend(int(v) for v in rng.integers(64, 256, size=3))
    im.putpalette(palette)
    im.save(path)


def generate_synthetic(spec: SynthSpec, out_dir) -> Path:
    """Write a corpus to out_dir; same spec (incl. seed) gives identical bytes."""
    out = Path(out_dir)
    for sub in ("A", "B", "label", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    image_labels = {}
    mask_vectors = {}
    size = spec.size

    for idx in range(spec.n_pairs):
        rng = np.random.default_rng([spec.seed, idx])
        pair_id = f"pair_{idx:04d}"

        base = np.array([rng.uniform(0.2, 0.3), rng.uniform(0.42, 0.55), rng.uniform(0.2, 0.3)])
        t1 = _texture(rng, size, base)
        t2 = _texture(rng, size, base) if spec.season_texture else t1.copy()

        occupied = []
        instances = []  # (box, class, where); where in {both, t1, t2}

        if rng.uniform() < spec.persistent_object_rate:
            lo, hi = spec.n_persistent_objects
            for _ in range(int(rng.integers(lo, hi + 1))):
                box = _place_rect(rng, size, max(4, size // 10), max(6, size // 6), occupied)
                if box is None:
                    continue
                clazz = "fg" if rng.uniform() < 0.5 else "bg"
                color = _building_color(rng) if clazz == "fg" else _veg_color(rng)
                _paint(t1, box, color)
                _paint(t2, box, color)
                instances.append((box, clazz, "both"))

        label = np.zeros((size, size), dtype=np.uint8)
        k_changes = int(rng.integers(spec.n_change_objects[0], spec.n_change_objects[1] + 1))
        for _ in range(k_changes):
            box = _place_rect(rng, size, max(10, size // 5), max(16, size // 3), occupied)
            if box is None:
                continue
            color = _building_color(rng)
            if rng.uniform() < 0.5:
                _paint(t2, box, color)  # appears
                where = "t2"
            else:
                _paint(t1, box, color)  # demolished
                where = "t1"
            label[box[0]:box[1], box[2]:box[3]] = 1
            instances.append((box, "fg", where))

        delta = rng.uniform(*spec.illum_shift)
        t2 = t2 + delta
        if spec.noise_sigma > 0:
            t1 = t1 + rng.normal(0.0, spec.noise_sigma, size=t1.shape)
            t2 = t2 + rng.normal(0.0, spec.noise_sigma, size=t2.shape)

        index_map = np.zeros((size, size), dtype=np.uint8)
        for i, (box, clazz, _) in enumerate(instances):
            index_map[box[0]:box[1], box[2]:box[3]] = i + 1
            mask_vectors[f"{pair_id}::{i}"] = class_image_embedding(
                clazz, f"{pair_id}::{i}", noise=spec.embed_noise
            )

        _save_png(out / "A" / f"{pair_id}.png", t1)
        _save_png(out / "B" / f"{pair_id}.png", t2)
        Image.fromarray(label * 255, mode="L").save(out / "label" / f"{pair_id}.png")
        _save_mask_png(out / "masks" / f"{pair_id}.png", index_map)
        image_labels[pair_id] = int(label.any())

    vocab = Vocabulary()
    text_vectors = {t: text_embedding(t, vocab) for t in DEFAULT_FOREGROUND + DEFAULT_BACKGROUND}
    save_embeddings(out / "embeddings.npz", text_vectors, mask_vectors)
    (out / "image_labels.json").write_text(json.dumps(image_labels, indent=2, sort_keys=True))
    (out / "synth_spec.json").write_text(json.dumps(spec.as_dict(), indent=2, sort_keys=True))
    return out
