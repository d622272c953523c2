"""changekit: bi-temporal change detection with supervised, weakly-supervised
and unsupervised training under one shared encoder."""

from .config import RunConfig
from .core import ChangeMap, FeaturePyramid, ImagePair, LabelSet, validate_pair
from .data import Corpus, CorpusSpec, load_corpus
from .encoder import EncoderSpec, build_encoder, encode
from .losses import SupLossReport, sup_loss
from .metrics import ConfusionCounts, MetricsReport, confusion, metrics, render_error_map
from .model import ChangeDetector, build_model, load_checkpoint, save_checkpoint
from .pseudo import (
    EmbeddingFileBackend,
    InstanceMaskSet,
    PseudoLabelPacket,
    SyntheticOracleBackend,
    Vocabulary,
    compose_pseudo,
    distance_map,
    foreground_prob,
    pseudo_label_quality,
    saliency_map,
)
from .synth import SynthSpec, generate_synthetic
from .train import TrainState, evaluate, pseudo_label_corpus, train
from .weak import (
    AnchorRegions,
    CamOutput,
    SpatialTransform,
    cfr_loss,
    classify,
    cls_loss,
    extract_anchors,
    sample_transform,
    scr_loss,
    weak_loss,
)

__version__ = "0.1.0"
