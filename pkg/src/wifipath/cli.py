"""Command-line entry point.

Subcommands: gen-data, train-cls, train-lm, eval, predict.  Settings come
from built-in defaults, then a JSON config file with flat dotted keys
(e.g. {"train.learning_rate": 3e-4}), then command-line flags, in that
order of precedence.  Every run writes its fully resolved config next to
its outputs so the run can be reproduced exactly.

Exit codes: 0 success, 2 usage, 3 I/O failure, 4 divergence,
5 checkpoint/data incompatibility.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import evalgen, figures, lora, sigsynth, tokenizer, trainer, transformer
from .dataset import CLASS_NAMES, derive_seed

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGENCE, EXIT_INCOMPATIBLE = 0, 2, 3, 4, 5


class UsageError(ValueError):
    pass


class IncompatibilityError(ValueError):
    pass


GEN_DEFAULTS = {
    "data.mods": ",".join(ds.DEFAULT_MODULATIONS),
    "data.snr_min": -20.0, "data.snr_max": 30.0, "data.snr_step": 2.0,
    "data.frames_per_pair": 20, "data.preview_len": 8, "data.decimals": 3,
    "data.split_fracs": "0.8,0.1,0.1", "run.seed": 1,
}

TRAIN_DEFAULTS = {
    "model.d_model": 64, "model.n_heads": 4, "model.n_layers": 2,
    "model.d_ffn": 256, "model.max_len": None,
    "train.learning_rate": None, "train.batch_size": None, "train.epochs": None,
    "train.weight_decay": 0.01, "train.grad_clip": None,
    "train.completion_only_loss": None, "train.base_checkpoint": None,
    "lora.enabled": False, "lora.rank": 8, "lora.alpha": 16.0,
    "lora.targets": "wq,wv", "lora.train_head": True,
    "run.seed": 1, "run.preset": None,
}


def _load_config_file(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object of dotted keys")
    return cfg


def _resolve(defaults: dict, file_cfg: dict, flags: dict) -> dict:
    """defaults < config file < explicit flags."""
    resolved = dict(defaults)
    for key, value in file_cfg.items():
        if key not in resolved:
            raise UsageError(f"unknown config key: {key!r}")
        resolved[key] = value
    for key, value in flags.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _write_resolved(resolved: dict, out_dir: str, command: str) -> None:
    payload = {"command": command, **dict(sorted(resolved.items()))}
    ds.atomic_write(os.path.join(out_dir, "resolved_config.json"),
                    json.dumps(payload, indent=2) + "\n")


def _floats(csv: str):
    return [float(x) for x in str(csv).split(",") if x != ""]


def _strs(csv: str):
    return [x.strip() for x in str(csv).split(",") if x.strip()]


# --- gen-data ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    resolved = _resolve(GEN_DEFAULTS, _load_config_file(args.config), {
        "data.mods": args.mods, "data.snr_min": args.snr_min,
        "data.snr_max": args.snr_max, "data.snr_step": args.snr_step,
        "data.frames_per_pair": args.frames_per_pair,
        "data.preview_len": args.preview_len, "data.decimals": args.decimals,
        "data.split_fracs": args.split_fracs, "run.seed": args.seed,
    })
    lo, hi = float(resolved["data.snr_min"]), float(resolved["data.snr_max"])
    step = float(resolved["data.snr_step"])
    if step <= 0 or hi < lo:
        raise UsageError("invalid SNR grid")
    grid = list(np.arange(lo, hi + step / 2, step))
    examples, manifest = ds.build_dataset(
        modulations=_strs(resolved["data.mods"]), snr_levels=grid,
        frames_per_pair=int(resolved["data.frames_per_pair"]),
        split_fracs=tuple(_floats(resolved["data.split_fracs"])),
        seed=int(resolved["run.seed"]),
        preview_len=int(resolved["data.preview_len"]),
        decimals=int(resolved["data.decimals"]))

    os.makedirs(args.out, exist_ok=True)
    ds.save_examples(examples, os.path.join(args.out, "examples.jsonl"))
    ds.atomic_write(os.path.join(args.out, "manifest.json"), manifest.to_json())
    corpus = [e.prompt for e in examples] + list(CLASS_NAMES)
    vocab = tokenizer.build_prompt_vocab(corpus)
    vocab.save(os.path.join(args.out, "vocab.json"))

    hist = {name: sum(1 for e in examples if e.label == i)
            for i, name in enumerate(CLASS_NAMES)}
    figures.save_class_histogram(hist, os.path.join(args.out, "class_hist.png"))
    _write_resolved(resolved, args.out, "gen-data")
    print(f"wrote {len(examples)} examples to {args.out}")
    for name, count in hist.items():
        print(f"  {name}: {count}")
    return EXIT_OK


# --- training ---------------------------------------------------------------


def _load_data_dir(path):
    examples = ds.load_examples(os.path.join(path, "examples.jsonl"))
    vocab = tokenizer.Vocab.load(os.path.join(path, "vocab.json"))
    return examples, vocab


def _train_command(args, arch: str) -> int:
    flags = {
        "model.d_model": args.d_model, "model.n_heads": args.n_heads,
        "model.n_layers": args.n_layers, "model.d_ffn": args.d_ffn,
        "model.max_len": args.max_len,
        "train.learning_rate": args.lr, "train.batch_size": args.batch_size,
        "train.epochs": args.epochs, "train.weight_decay": args.weight_decay,
        "train.grad_clip": args.grad_clip,
        "train.base_checkpoint": args.base_checkpoint,
        "lora.enabled": True if args.lora else None,
        "lora.rank": args.lora_rank, "lora.alpha": args.lora_alpha,
        "lora.targets": args.lora_targets,
        "run.seed": args.seed, "run.preset": args.preset,
    }
    if arch == "decoder":
        flags["train.completion_only_loss"] = True if args.completion_only_loss else None
    resolved = _resolve(TRAIN_DEFAULTS, _load_config_file(args.config), flags)

    preset = resolved["run.preset"]
    if preset and preset not in trainer.PRESETS:
        raise UsageError(f"unknown preset: {preset!r}")
    preset_values = dict(trainer.PRESETS[preset]) if preset else {}
    for short, key in (("learning_rate", "train.learning_rate"),
                       ("batch_size", "train.batch_size"),
                       ("epochs", "train.epochs"),
                       ("max_len", "model.max_len"),
                       ("grad_clip", "train.grad_clip"),
                       ("completion_only_loss", "train.completion_only_loss")):
        if resolved[key] is None and short in preset_values:
            resolved[key] = preset_values[short]
    if resolved["train.learning_rate"] is None:
        resolved["train.learning_rate"] = 3e-4  # desk-scale default
    if resolved["train.batch_size"] is None:
        resolved["train.batch_size"] = 32 if arch == "encoder" else 4
    if resolved["train.epochs"] is None:
        resolved["train.epochs"] = 3 if arch == "encoder" else 2
    if resolved["model.max_len"] is None:
        resolved["model.max_len"] = 256

    examples, vocab = _load_data_dir(args.data)
    seed = int(resolved["run.seed"])
    base = resolved["train.base_checkpoint"]
    if base:
        params = _load_checkpoint_checked(base, vocab)
        if params.config.arch != arch:
            raise IncompatibilityError(
                f"base checkpoint is a {params.config.arch} model, expected {arch}")
    else:
        cfg = transformer.ModelConfig(
            vocab_size=len(vocab), arch=arch,
            d_model=int(resolved["model.d_model"]), n_heads=int(resolved["model.n_heads"]),
            n_layers=int(resolved["model.n_layers"]), d_ffn=int(resolved["model.d_ffn"]),
            max_len=int(resolved["model.max_len"]))
        params = transformer.init_params(cfg, seed=derive_seed(seed, "init"))

    if resolved["lora.enabled"]:
        lora_cfg = lora.LoraConfig(rank=int(resolved["lora.rank"]),
                                   alpha=float(resolved["lora.alpha"]),
                                   targets=_strs(resolved["lora.targets"]),
                                   train_head=bool(resolved["lora.train_head"]))
        params = lora.inject(params, lora_cfg, seed=derive_seed(seed, "lora"))
        rep = lora.report(params)
        print(f"LoRA: trainable {rep.trainable} of {rep.total} "
              f"({rep.reduction_percent:.2f}% reduction)")

    tcfg = trainer.TrainConfig(
        learning_rate=float(resolved["train.learning_rate"]),
        batch_size=int(resolved["train.batch_size"]),
        epochs=int(resolved["train.epochs"]),
        weight_decay=float(resolved["train.weight_decay"]),
        grad_clip=resolved["train.grad_clip"],
        completion_only_loss=bool(resolved["train.completion_only_loss"]),
        max_len=min(int(resolved["model.max_len"]), params.config.max_len),
        seed=seed)

    if arch == "encoder":
        best, rep = trainer.train_classifier(params, examples, vocab, tcfg)
    else:
        best, rep = trainer.train_causal(params, examples, vocab, tcfg)

    os.makedirs(args.out, exist_ok=True)
    if best.lora_cfg is not None:
        adapters = {n: t for n, t in best.tensors.items() if ".lora_" in n}
        _save_adapters(best, adapters, os.path.join(args.out, "adapters.bin"),
                       vocab.sha256())
        best = lora.merge(best)
    transformer.save_checkpoint(best, os.path.join(args.out, "checkpoint.bin"),
                                vocab_sha256=vocab.sha256())
    ds.atomic_write(os.path.join(args.out, "report.json"), rep.to_json())
    ds.atomic_write(os.path.join(args.out, "report.csv"), rep.to_csv())
    figures.save_training_curves(rep, os.path.join(args.out, "curves.png"))
    _write_resolved(resolved, args.out, "train-cls" if arch == "encoder" else "train-lm")
    print(rep.render_table())
    print(f"best epoch: {rep.best_epoch}; artifacts in {args.out}")
    return EXIT_OK


def _save_adapters(params, adapters: dict, path: str, vocab_sha256: str) -> None:
    """Adapter-only checkpoint: same binary container, adapter tensors only."""
    sub = transformer.ModelParams(params.config, adapters, params.lora_cfg)
    transformer.save_checkpoint(sub, path, vocab_sha256=vocab_sha256)


# --- eval / predict ---------------------------------------------------------


def _load_checkpoint_checked(path: str, vocab: tokenizer.Vocab):
    params, vocab_hash = transformer.load_checkpoint(path)
    if vocab_hash and vocab_hash != vocab.sha256():
        raise IncompatibilityError(
            "vocab hash mismatch: the checkpoint was trained with a different "
            "vocabulary than the one in --data")
    return params


def cmd_eval(args) -> int:
    examples, vocab = _load_data_dir(args.data)
    params = _load_checkpoint_checked(args.checkpoint, vocab)
    subset = [e for e in examples if e.split == args.split]
    if not subset:
        raise UsageError(f"no examples in split {args.split!r}")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
    if params.config.arch == "encoder":
        ids, mask, labels = trainer.encode_classifier_batch(subset, vocab,
                                                            params.config.max_len)
        preds = trainer.classifier_predict(params, ids, mask)
        m = trainer.metrics(preds, labels)
        payload = {"split": args.split, "n_examples": len(subset),
                   "accuracy": m.accuracy, "f1_macro": m.f1_macro,
                   "f1_weighted": m.f1_weighted,
                   "confusion": m.confusion.tolist()}
        print(json.dumps(payload, indent=2))
        print()
        print(_confusion_table(m.confusion))
        if args.out:
            ds.atomic_write(os.path.join(args.out, "eval.json"),
                            json.dumps(payload, indent=2) + "\n")
            figures.save_confusion_matrix(m.confusion,
                                          os.path.join(args.out, "confusion.png"))
    else:
        rep = evalgen.eval_causal(params, subset, vocab)
        print(rep.to_json())
        print(rep.render_samples())
        if args.out:
            ds.atomic_write(os.path.join(args.out, "eval.json"), rep.to_json())
            ds.atomic_write(os.path.join(args.out, "samples.txt"),
                            rep.render_samples() + "\n")
            figures.save_match_rates(rep.per_class_rates,
                                     os.path.join(args.out, "match_rates.png"))
    return EXIT_OK


def _confusion_table(confusion) -> str:
    width = max(len(n) for n in CLASS_NAMES) + 2
    header = " " * width + "".join(n.rjust(width) for n in CLASS_NAMES)
    lines = [header]
    for i, name in enumerate(CLASS_NAMES):
        row = name.rjust(width) + "".join(str(int(c)).rjust(width) for c in confusion[i])
        lines.append(row)
    return "\n".join(lines)


def cmd_predict(args) -> int:
    vocab = tokenizer.Vocab.load(os.path.join(args.data, "vocab.json"))
    params = _load_checkpoint_checked(args.checkpoint, vocab)

    if args.prompt_file:
        with open(args.prompt_file, encoding="utf-8") as fh:
            prompt = fh.read().strip("\n")
    else:
        if args.snr is None or args.mod is None:
            raise UsageError("predict needs --prompt-file or both --snr and --mod")
        frame = sigsynth.synth_frame(args.mod, args.snr, seed=args.frame_seed)
        prompt = ds.render_prompt(frame)

    if params.config.arch == "encoder":
        seq = tokenizer.encode(prompt, vocab, "classifier", params.config.max_len)
        logits = transformer.encoder_forward(params, seq.ids[None, :],
                                             seq.attention_mask[None, :])
        cls = int(np.argmax(logits.values[0]))
        print(CLASS_NAMES[cls])
    else:
        completion = evalgen.greedy_generate(params, prompt, vocab)
        print(completion)
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wifipath",
        description="Synthesize I/Q prompt datasets and train/evaluate "
                    "noise-pathology classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize frames, render prompts, write a dataset")
    g.add_argument("--mods", help="comma-separated modulation names")
    g.add_argument("--snr-min", type=float)
    g.add_argument("--snr-max", type=float)
    g.add_argument("--snr-step", type=float)
    g.add_argument("--frames-per-pair", type=int)
    g.add_argument("--preview-len", type=int)
    g.add_argument("--decimals", type=int)
    g.add_argument("--split-fracs", help="train,val,test fractions")
    g.add_argument("--seed", type=int)
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    for name, arch in (("train-cls", "encoder"), ("train-lm", "decoder")):
        t = sub.add_parser(name, help=f"train the {arch} model")
        t.add_argument("--data", required=True)
        t.add_argument("--out", required=True)
        t.add_argument("--config")
        t.add_argument("--seed", type=int)
        t.add_argument("--preset", choices=sorted(trainer.PRESETS))
        t.add_argument("--lr", type=float)
        t.add_argument("--batch-size", type=int)
        t.add_argument("--epochs", type=int)
        t.add_argument("--weight-decay", type=float)
        t.add_argument("--grad-clip", type=float)
        t.add_argument("--base-checkpoint",
                       help="start from this checkpoint instead of random init")
        t.add_argument("--d-model", type=int)
        t.add_argument("--n-heads", type=int)
        t.add_argument("--n-layers", type=int)
        t.add_argument("--d-ffn", type=int)
        t.add_argument("--max-len", type=int)
        t.add_argument("--lora", action="store_true")
        t.add_argument("--lora-rank", type=int)
        t.add_argument("--lora-alpha", type=float)
        t.add_argument("--lora-targets")
        if arch == "decoder":
            t.add_argument("--completion-only-loss", action="store_true")
        t.set_defaults(func=_train_command, arch=arch)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one prompt or synthesized frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset dir holding vocab.json")
    p.add_argument("--snr", type=float)
    p.add_argument("--mod")
    p.add_argument("--frame-seed", type=int, default=0)
    p.add_argument("--prompt-file")
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.func is _train_command:
            return _train_command(args, args.arch)
        return args.func(args)
    except trainer.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except IncompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
