"""Run configuration: one flat record of every knob the pipeline reads."""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import torch


@dataclass
class RunConfig:
    """Global configuration shared by training, pseudo-labeling and evaluation.

    Every CLI flag maps 1:1 onto one of these fields; the record round-trips
    through JSON so experiments can be replayed from a config file.
    """

    epsilon: float = 1e-6          # denominator guard in the region-contrast loss
    lr: float = 1e-4
    optimizer: str = "adamw"
    seed: int = 0
    cam_low: float = 0.3           # activation <= cam_low -> unchanged anchor
    cam_high: float = 0.7          # activation >= cam_high -> changed anchor
    v_binarize: float = 0.5        # pseudo-map binarization threshold
    v_image_frac: float = 1e-3     # changed fraction needed for image label 1
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    epochs: int = 30
    batch_size: int = 4
    threshold: float = 0.5         # score binarization threshold at inference
    use_stam: bool = True          # False -> plain concatenation fusion baseline
    use_scr: bool = False          # spatial-consistency regularizer (weak mode)
    use_cfr: bool = False          # region-contrast regularizer (weak mode)
    augment: bool = True           # random flips from the consistency transform set

    def __post_init__(self):
        if not 0.0 <= self.cam_low < self.cam_high <= 1.0:
            raise ValueError(
                f"require 0 <= cam_low < cam_high <= 1, got ({self.cam_low}, {self.cam_high})"
            )
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.optimizer != "adamw":
            raise ValueError(f"unsupported optimizer: {self.optimizer!r}")

    def generator(self) -> torch.Generator:
        """Fresh torch generator seeded from this config."""
        g = torch.Generator()
        g.manual_seed(self.seed)
        return g

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)


def field_names() -> list[str]:
    return [f.name for f in dataclasses.fields(RunConfig)]
