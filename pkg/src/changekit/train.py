"""Training orchestration: mode dispatch, optimization loop, checkpointing,
evaluation, and the unsupervised-to-weak pseudo-label bridge.

Supervised mode optimizes the balanced pixel loss on decoder scores. Weak
mode optimizes classification plus the enabled regularizers. Unsupervised
mode first materializes image-level pseudo labels over the corpus (the
embedding backend is frozen, so one pass suffices), then trains the weak
path on them.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .config import RunConfig
from .core import FeaturePyramid, ImagePair
from .data import Corpus, CorpusSpec
from .encoder import EncoderSpec
from .losses import sup_loss
from .metrics import ConfusionCounts, confusion, metrics, save_error_map
from .model import ChangeDetector, build_model, load_checkpoint, save_checkpoint
from .pseudo import (
    EmbeddingFileBackend,
    SyntheticOracleBackend,
    Vocabulary,
    pseudo_label_pair,
    pseudo_label_quality,
    write_records,
)
from .weak import AnchorRegions, cfr_loss, extract_anchors, sample_transform, scr_loss_batched


class ModeLabelMismatch(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    mode: str = "supervised"
    param_snapshot_id: str = ""
    loss_history: list = field(default_factory=list)
    checkpoint_path: str = ""
    pseudo_accuracy: float = None


def _as_corpus(corpus) -> Corpus:
    if isinstance(corpus, Corpus):
        return corpus
    if isinstance(corpus, CorpusSpec):
        return Corpus(corpus)
    return Corpus(CorpusSpec(root=str(corpus)))


def _snapshot_id(model) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def make_backend(kind: str, corpus: Corpus, vocab: Vocabulary):
    if kind == "oracle":
        return SyntheticOracleBackend(vocab)
    if kind == "file":
        return EmbeddingFileBackend(corpus.embeddings_path)
    if kind == "auto":
        if corpus.embeddings_path.exists():
            return EmbeddingFileBackend(corpus.embeddings_path)
        return SyntheticOracleBackend(vocab)
    raise ValueError(f"unknown backend {kind!r}")


def pseudo_label_corpus(corpus, encoder, cfg: RunConfig, backend="oracle",
                        vocab: Vocabulary = None, out_path=None):
    """Run pseudo-label inference over every pair; returns (packets, accuracy).

    Accuracy is measured against ground-truth image labels when the corpus
    carries them, else None.
    """
    corpus = _as_corpus(corpus)
    vocab = vocab or Vocabulary()
    if isinstance(backend, str):
        backend = make_backend(backend, corpus, vocab)
    packets = []
    truth = []
    for pair_id in corpus.ids:
        pair = corpus.pair(pair_id)
        mask_set = corpus.mask_set(pair_id, shape=tuple(pair.t1.shape[-2:]))
        packets.append(pseudo_label_pair(pair, mask_set, vocab, backend, encoder, cfg))
        if corpus.has_pixel_labels:
            truth.append(int(bool(corpus.pixel_label(pair_id).any())))
        elif pair_id in corpus.image_labels:
            truth.append(int(corpus.image_labels[pair_id]))
    accuracy = pseudo_label_quality(packets, truth) if len(truth) == len(packets) and packets else None
    if out_path is not None:
        write_records(packets, out_path)
    return packets, accuracy


def _batches(n, batch_size, generator):
    order = torch.randperm(n, generator=generator).tolist()
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def _weak_step(model, t1, t2, labels, cfg, rng):
    levels1, levels2 = model.features(t1, t2)
    fused = model.fuse(levels1, levels2)
    logits, cams = model.classify_batch(fused)
    l_cls = F.binary_cross_entropy_with_logits(logits, labels.to(torch.float32))
    zero = logits.sum() * 0.0
    l_sc = zero
    if cfg.use_scr:
        t = sample_transform(rng)
        l_sc = scr_loss_batched(torch.cat([t1, t2], dim=0), t, model.encoder)
    l_cf = zero
    if cfg.use_cfr:
        terms = []
        for b in range(t1.shape[0]):
            if int(labels[b]) == 1:
                anchors = extract_anchors(cams[b].detach(), cfg)
            else:
                # image labeled unchanged: the whole frame is an unchanged anchor
                shape = cams[b].shape
                anchors = AnchorRegions(
                    r_c=torch.zeros(shape, dtype=torch.uint8),
                    r_u=torch.ones(shape, dtype=torch.uint8),
                    area_c=0, area_u=int(torch.tensor(shape).prod()),
                )
            f1 = FeaturePyramid([lv[b] for lv in levels1])
            f2 = FeaturePyramid([lv[b] for lv in levels2], temporal_tag="t2")
            terms.append(cfr_loss(f1, f2, anchors, cfg))
        l_cf = torch.stack(terms).mean()
    comps = {"cls": float(l_cls.detach()), "sc": float(l_sc.detach()), "cf": float(l_cf.detach())}
    return l_cls + l_sc + l_cf, comps


def train(mode, corpus, cfg: RunConfig, enc_spec: EncoderSpec = None,
          out_dir=None, backend="oracle"):
    """Train one model under the given supervision mode; returns (state, model)."""
    if mode not in ("supervised", "weak", "unsupervised"):
        raise ValueError(f"unknown mode {mode!r}")
    corpus = _as_corpus(corpus)
    enc_spec = enc_spec or EncoderSpec()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    model = build_model(enc_spec, cfg)
    model.mode = mode
    model.train()
    state = TrainState(mode=mode)

    if mode == "supervised":
        if not corpus.has_pixel_labels:
            raise ModeLabelMismatch(f"supervised mode needs {corpus.label_dir}")
        items = [(p, ls.pixel) for p, ls in corpus.items("supervised")]
        targets = [px for _, px in items]
    elif mode == "weak":
        items = [(p, ls.image_level) for p, ls in corpus.items("weak")]
        targets = [lbl for _, lbl in items]
    else:
        packets, acc = pseudo_label_corpus(
            corpus, model.encoder, cfg, backend=backend,
            out_path=(out / "pseudo_labels.json") if out else None,
        )
        state.pseudo_accuracy = acc
        by_id = {pk.pair_id: pk.image_label for pk in packets}
        items = []
        for p, _ in corpus.items("unsupervised"):
            base_id = p.id.split("_r")[0] if "_r" in p.id else p.id
            items.append((p, by_id[base_id]))
        targets = [lbl for _, lbl in items]

    pairs = [p for p, _ in items]
    t1_all = torch.stack([p.t1 for p in pairs])
    t2_all = torch.stack([p.t2 for p in pairs])
    if mode == "supervised":
        y_all = torch.stack([t.to(torch.float32) for t in targets])
    else:
        y_all = torch.tensor([float(t) for t in targets])

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
        weight_decay=cfg.weight_decay,
    )
    rng = cfg.generator()
    log_f = open(out / "train_log.jsonl", "w") if out else None
    try:
        for epoch in range(cfg.epochs):
            state.epoch = epoch
            for batch_idx in _batches(len(pairs), cfg.batch_size, rng):
                bt1 = t1_all[batch_idx]
                bt2 = t2_all[batch_idx]
                by = y_all[batch_idx]
                if cfg.augment and int(torch.randint(2, (1,), generator=rng)):
                    t = sample_transform(rng)
                    bt1 = t.apply(bt1)
                    bt2 = t.apply(bt2)
                    if mode == "supervised":
                        by = t.apply(by)
                if mode == "supervised":
                    report = sup_loss(model.scores(bt1, bt2), by)
                    loss = report.total
                    comps = {
                        "unchanged": float(report.unchanged_term.detach()),
                        "changed": float(report.changed_term.detach()),
                    }
                else:
                    loss, comps = _weak_step(model, bt1, bt2, by, cfg, rng)
                loss = loss if torch.is_tensor(loss) else torch.as_tensor(loss)
                if not torch.isfinite(loss):
                    raise NonFiniteLoss(
                        f"non-finite loss at step {state.step} (epoch {epoch}): {comps}"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                loss_val = float(loss.detach())
                state.loss_history.append(loss_val)
                if log_f:
                    log_f.write(json.dumps(
                        {"step": state.step, "epoch": epoch, "loss": loss_val,
                         "lr": cfg.lr, **comps}) + "\n")
                state.step += 1
    finally:
        if log_f:
            log_f.close()

    model.eval()
    state.param_snapshot_id = _snapshot_id(model)
    if out is not None:
        ckpt = out / "checkpoint.pt"
        save_checkpoint(model, ckpt)
        state.checkpoint_path = str(ckpt)
    return state, model


def evaluate(checkpoint_or_model, corpus, out_dir=None, mode=None) -> dict:
    """Per-image and micro-averaged metrics against pixel truth.

    Accepts a checkpoint path or a live model. Writes eval.json and error-map
    PNGs when out_dir is given.
    """
    if isinstance(checkpoint_or_model, ChangeDetector):
        model = checkpoint_or_model
    else:
        model = load_checkpoint(checkpoint_or_model)
    corpus = _as_corpus(corpus)
    if not corpus.has_pixel_labels:
        raise ModeLabelMismatch(f"evaluation needs pixel labels ({corpus.label_dir})")
    mode = mode or model.mode
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error_maps").mkdir(exist_ok=True)

    total = ConfusionCounts()
    per_image = {}
    for pair, label_set in corpus.items("supervised"):
        pred = model.predict(pair, mode=mode).binary()
        c = confusion(pred, label_set.pixel)
        total = total + c
        per_image[pair.id] = metrics(c).as_dict()
        if out is not None:
            save_error_map(pred, label_set.pixel, out / "error_maps" / f"{pair.id}.png")

    result = {
        "aggregate": metrics(total).as_dict(),
        "counts": {"tp": total.tp, "tn": total.tn, "fp": total.fp, "fn": total.fn},
        "per_image": per_image,
    }
    if out is not None:
        (out / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


def ablate_stam(train_corpus, eval_corpus, cfg: RunConfig, seeds=(0, 1, 2)) -> list:
    """Paired supervised runs with fusion on/off; rows of F1/IoU/OA per seed."""
    rows = []
    for seed in seeds:
        for use_stam in (False, True):
            run_cfg = cfg.replace(seed=seed, use_stam=use_stam)
            _, model = train("supervised", train_corpus, run_cfg)
            agg = evaluate(model, eval_corpus)["aggregate"]
            rows.append({"seed": seed, "stam": use_stam, **agg})
    return rows


def ablate_crr(train_corpus, eval_corpus, cfg: RunConfig, seeds=(0, 1, 2)) -> list:
    """Paired weak runs over the four regularizer settings."""
    rows = []
    for seed in seeds:
        for use_scr, use_cfr in ((False, False), (True, False), (False, True), (True, True)):
            run_cfg = cfg.replace(seed=seed, use_scr=use_scr, use_cfr=use_cfr)
            _, model = train("weak", train_corpus, run_cfg)
            agg = evaluate(model, eval_corpus)["aggregate"]
            rows.append({"seed": seed, "scr": use_scr, "cfr": use_cfr, **agg})
    return rows
