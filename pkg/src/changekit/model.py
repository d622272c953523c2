"""Full detector: shared encoder, fusion stack, score decoder, classifier head.

One module owns every trainable parameter so the optimizer and checkpoints
have a single root. Checkpoints are a torch archive holding the state dict
plus the encoder spec and run config as JSON-able headers.
"""

import os
import tempfile

import torch
import torch.nn as nn

from .config import RunConfig
from .core import ChangeMap, ImagePair, minmax_normalize, validate_pair
from .encoder import EncoderSpec, build_encoder
from .fusion import ConcatBaselineFusion, Decoder, SpatialFusion, TemporalFusion
from .weak import ClassifierHead

CHECKPOINT_VERSION = 1


class CheckpointVersionMismatch(RuntimeError):
    pass


class ChangeDetector(nn.Module):
    def __init__(self, enc_spec: EncoderSpec, cfg: RunConfig, in_channels: int = 3):
        super().__init__()
        self.enc_spec = enc_spec
        self.cfg = cfg
        self.mode = "supervised"  # set by the trainer; routes predict()
        self.encoder = build_encoder(enc_spec, in_channels=in_channels)
        channels = (
            enc_spec.channels
            if enc_spec.adapter_channels is None
            else [enc_spec.adapter_channels] * 4
        )
        self.channels = channels
        if cfg.use_stam:
            self.spatial = SpatialFusion(channels)
            self.temporal = TemporalFusion(channels)
            self.baseline = None
        else:
            self.spatial = None
            self.temporal = None
            self.baseline = ConcatBaselineFusion(channels)
        self.decoder = Decoder(channels)
        self.classifier = ClassifierHead(channels[0])

    # --- batched paths (tensors [B, C, H, W]) ---

    def features(self, t1: torch.Tensor, t2: torch.Tensor):
        both = torch.cat([t1, t2], dim=0)
        levels = self.encoder(both)
        b = t1.shape[0]
        return [lv[:b] for lv in levels], [lv[b:] for lv in levels]

    def fuse(self, levels1: list, levels2: list) -> list:
        if self.baseline is not None:
            return self.baseline(levels1, levels2)
        return self.temporal(self.spatial(levels1), self.spatial(levels2))

    def scores(self, t1: torch.Tensor, t2: torch.Tensor) -> torch.Tensor:
        levels1, levels2 = self.features(t1, t2)
        return self.decoder(self.fuse(levels1, levels2))

    def classify_batch(self, fused: list):
        return self.classifier(fused[0])

    # --- single-pair convenience ---

    def predict(self, pair: ImagePair, mode: str = None) -> ChangeMap:
        """Mode-appropriate change map for one pair.

        Supervised mode reads the decoder scores. Weak and unsupervised modes
        read the upsampled activation map, gated to all-zeros when the
        image-level classifier calls the pair unchanged.
        """
        validate_pair(pair)
        mode = mode or self.mode
        t1 = pair.t1.unsqueeze(0)
        t2 = pair.t2.unsqueeze(0)
        with torch.no_grad():
            if mode == "supervised":
                s = self.scores(t1, t2)[0]
            else:
                levels1, levels2 = self.features(t1, t2)
                fused = self.fuse(levels1, levels2)
                logits, cams = self.classify_batch(fused)
                if torch.sigmoid(logits[0]) < 0.5:
                    s = torch.zeros(pair.t1.shape[-2:])
                else:
                    cam = cams[0].unsqueeze(0).unsqueeze(0)
                    up = torch.nn.functional.interpolate(
                        cam, size=pair.t1.shape[-2:], mode="bilinear", align_corners=False
                    )
                    s = minmax_normalize(up.squeeze(0).squeeze(0))
        return ChangeMap(scores=s, threshold=self.cfg.threshold)


def build_model(enc_spec: EncoderSpec, cfg: RunConfig, in_channels: int = 3) -> ChangeDetector:
    """Deterministically constructed model: init draws come from cfg.seed."""
    torch.manual_seed(cfg.seed)
    return ChangeDetector(enc_spec, cfg, in_channels=in_channels)


def save_checkpoint(model: ChangeDetector, path):
    payload = {
        "version": CHECKPOINT_VERSION,
        "state_dict": model.state_dict(),
        "encoder_spec": model.enc_spec.as_dict(),
        "run_config": model.cfg.to_json(),
        "mode": model.mode,
    }
    # atomic: write to a temp file in the same directory, then rename
    d = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            torch.save(payload, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> ChangeDetector:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionMismatch(
            f"checkpoint version {payload.get('version')} != {CHECKPOINT_VERSION}"
        )
    spec = EncoderSpec.from_dict(payload["encoder_spec"])
    cfg = RunConfig.from_json(payload["run_config"])
    model = ChangeDetector(spec, cfg)
    model.load_state_dict(payload["state_dict"])
    model.mode = payload.get("mode", "supervised")
    model.eval()
    return model
