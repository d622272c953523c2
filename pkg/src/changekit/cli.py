"""Command-line entry point.

Subcommands: synth-data, train, eval, pseudo-label, predict, ablate.
Run configuration comes from --config (JSON) with per-field flag overrides;
flags win. Exit codes: 0 success, 2 invalid configuration or input,
3 runtime failure.
"""

import argparse
import dataclasses
import json
import sys
import traceback
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .data import Corpus, CorpusSpec, LayoutError, MissingPair
from .encoder import EncoderSpec
from .model import load_checkpoint
from .synth import SynthSpec, generate_synthetic
from .train import ModeLabelMismatch, ablate_crr, ablate_stam, evaluate, pseudo_label_corpus, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _add_config_flags(parser: argparse.ArgumentParser):
    """One kebab-case flag per RunConfig field; unset flags fall back to the
    config file, which falls back to defaults."""
    group = parser.add_argument_group("run config overrides")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type is bool or isinstance(f.default, bool):
            group.add_argument(flag, default=None, action=argparse.BooleanOptionalAction,
                               help=f"RunConfig.{f.name}")
        else:
            group.add_argument(flag, default=None, type=type(f.default),
                               help=f"RunConfig.{f.name}")


def _resolve_config(args) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    return RunConfig(**base)


def _corpus(path, split="train", patch_size=64) -> Corpus:
    return Corpus(CorpusSpec(root=str(path), split=split, patch_size=patch_size))


def _cmd_synth_data(args) -> int:
    out = Path(args.out)
    spec = SynthSpec(
        n_pairs=args.n_pairs, size=args.size, seed=args.seed,
        noise_sigma=args.noise_sigma, season_texture=args.season_texture,
        illum_shift=(args.illum_shift_lo, args.illum_shift_hi),
        embed_noise=args.embed_noise,
    )
    if args.flat:
        generate_synthetic(spec, out)
        print(f"wrote corpus: {out} ({spec.n_pairs} pairs)")
    else:
        n_test = max(4, spec.n_pairs // 4)
        generate_synthetic(spec, out / "train")
        test_spec = dataclasses.replace(spec, n_pairs=n_test, seed=spec.seed + 1000)
        generate_synthetic(test_spec, out / "test")
        print(f"wrote corpus: {out}/train ({spec.n_pairs} pairs), {out}/test ({n_test} pairs)")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    corpus = _corpus(args.corpus, split=args.split, patch_size=args.patch_size)
    enc_spec = EncoderSpec(backend=args.encoder_backend, feature_dir=args.feature_dir)
    state, _ = train(args.mode, corpus, cfg, enc_spec=enc_spec,
                     out_dir=args.out, backend=args.backend)
    print(f"trained {args.mode}: {state.step} steps, "
          f"final loss {state.loss_history[-1]:.4f}, checkpoint {state.checkpoint_path}")
    if state.pseudo_accuracy is not None:
        print(f"pseudo-label accuracy: {state.pseudo_accuracy:.4f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    corpus = _corpus(args.corpus, split=args.split, patch_size=args.patch_size)
    result = evaluate(args.checkpoint, corpus, out_dir=args.out, mode=args.mode)
    print(json.dumps(result["aggregate"], indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_pseudo_label(args) -> int:
    cfg = _resolve_config(args)
    corpus = _corpus(args.corpus, split=args.split, patch_size=args.patch_size)
    enc_spec = EncoderSpec(backend=args.encoder_backend, feature_dir=args.feature_dir)
    torch.manual_seed(cfg.seed)
    from .encoder import build_encoder

    encoder = build_encoder(enc_spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, accuracy = pseudo_label_corpus(
        corpus, encoder, cfg, backend=args.backend, out_path=out / "pseudo_labels.json"
    )
    msg = {"records": str(out / "pseudo_labels.json")}
    if accuracy is not None:
        msg["accuracy"] = accuracy
    print(json.dumps(msg, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_predict(args) -> int:
    from PIL import Image

    model = load_checkpoint(args.checkpoint)
    corpus = _corpus(args.corpus, split=args.split, patch_size=args.patch_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for pair_id in corpus.ids:
        pair = corpus.pair(pair_id)
        cm = model.predict(pair, mode=args.mode)
        Image.fromarray((cm.binary().numpy() * 255).astype(np.uint8), mode="L").save(
            out / f"{pair_id}.png"
        )
        if args.dump_cam:
            levels1, levels2 = model.features(pair.t1.unsqueeze(0), pair.t2.unsqueeze(0))
            _, cams = model.classify_batch(model.fuse(levels1, levels2))
            cam8 = (cams[0].detach().numpy() * 255).astype(np.uint8)
            Image.fromarray(cam8, mode="L").save(out / f"{pair_id}_cam.png")
    print(f"wrote {len(corpus.ids)} prediction maps to {out}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    train_c = _corpus(args.corpus, split="train", patch_size=args.patch_size)
    eval_c = _corpus(args.corpus, split="test", patch_size=args.patch_size)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    if args.which in ("stam", "both"):
        results["stam"] = ablate_stam(train_c, eval_c, cfg, seeds=seeds)
    if args.which in ("crr", "both"):
        results["crr"] = ablate_crr(train_c, eval_c, cfg, seeds=seeds)
    (out / "ablation.json").write_text(json.dumps(results, indent=2, sort_keys=True))
    for name, rows in results.items():
        print(f"== {name} ==")
        for row in rows:
            print(json.dumps(row, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="changekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_cfg=True):
        p.add_argument("--split", default="train")
        p.add_argument("--patch-size", type=int, default=64)
        if needs_cfg:
            p.add_argument("--config", default=None, help="JSON RunConfig file")
            _add_config_flags(p)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-pairs", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--illum-shift-lo", type=float, default=-0.08)
    p.add_argument("--illum-shift-hi", type=float, default=0.08)
    p.add_argument("--embed-noise", type=float, default=0.0)
    p.add_argument("--season-texture", action="store_true")
    p.add_argument("--flat", action="store_true", help="single corpus, no train/test split")
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("train", help="train one supervision mode")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", required=True, choices=["supervised", "weak", "unsupervised"])
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="oracle", choices=["oracle", "file", "auto"])
    p.add_argument("--encoder-backend", default="toy_cnn", choices=["toy_cnn", "frozen_file"])
    p.add_argument("--feature-dir", default=None)
    common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against pixel truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--mode", default=None)
    common(p, needs_cfg=False)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pseudo-label", help="run pseudo-label inference only")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="oracle", choices=["oracle", "file", "auto"])
    p.add_argument("--encoder-backend", default="toy_cnn", choices=["toy_cnn", "frozen_file"])
    p.add_argument("--feature-dir", default=None)
    common(p)
    p.set_defaults(func=_cmd_pseudo_label)

    p = sub.add_parser("predict", help="write binary prediction maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default=None)
    p.add_argument("--dump-cam", action="store_true", help="also export activation maps")
    common(p, needs_cfg=False)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("ablate", help="run the fusion and regularizer grids")
    p.add_argument("--corpus", required=True, help="root with train/ and test/ splits")
    p.add_argument("--out", required=True)
    p.add_argument("--which", default="both", choices=["stam", "crr", "both"])
    p.add_argument("--seeds", default="0,1,2")
    common(p)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ValueError, LayoutError, MissingPair, ModeLabelMismatch,
            FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        traceback.print_exc()
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
