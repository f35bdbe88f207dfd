"""Command-line entry point: train, transfer, evaluate, ablate, and utilities.

Every TrainConfig key is exposed one-to-one as a flag (``--gamma-initial``),
optionally seeded from a flat ``key = value`` config file; flags win.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .autograd import NumericalError
from .corpus import CorpusError, Vocab, build_vocab, corpus_paths, load_style_corpus
from .editops import NoiseSpec, neighbourhood_sample, new_rng
from .evaluation import evaluate_system, format_reports, train_classifier, write_reports
from .params import CheckpointError
from .seq2seq import load_transferrer
from .training import (
    ConfigError,
    TrainConfig,
    VARIANTS,
    load_config,
    make_synthetic_corpus,
    save_config,
    train_dgst,
    write_synthetic_dataset,
)

ABLATION_ORDER = ("no-rec", "rec-no-noise", "no-tran", "tran-no-noise", "pre-noise", "full")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(parser):
    """One flag per TrainConfig field, defaulting to 'not given'."""
    group = parser.add_argument_group("training configuration")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            group.add_argument(
                flag, dest=f.name, default=None, action=argparse.BooleanOptionalAction,
                help=f"{f.name} (default: {f.default})",
            )
        else:
            kind = {"int": int, "float": float}.get(f.type, str)
            group.add_argument(
                flag, dest=f.name, default=None, type=kind, metavar=f.type.upper(),
                help=f"{f.name} (default: {f.default})",
            )


def _config_from_args(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(TrainConfig)
        if getattr(args, f.name, None) is not None
    }
    return dataclasses.replace(cfg, **overrides).validate()


def _add_data_flags(parser, required=True):
    parser.add_argument("--data-root", help="directory with <style>.<split>.txt files")
    parser.add_argument("--style-x", default="neg", help="source style of the f direction")
    parser.add_argument("--style-y", default="pos", help="target style of the f direction")
    if not required:
        return
    parser.add_argument(
        "--synthetic", type=int, metavar="N", default=None,
        help="train on a generated N-sentences-per-style marker corpus instead of --data-root",
    )


def _load_dataset(args, cfg):
    if getattr(args, "synthetic", None):
        return make_synthetic_corpus(args.synthetic, seed=cfg.seed)
    if not args.data_root:
        raise UsageError("either --data-root or --synthetic is required")
    root = Path(args.data_root)
    train_files = [corpus_paths(root, s)["train"] for s in (args.style_x, args.style_y)]
    vocab = build_vocab(train_files, min_freq=cfg.min_freq, max_size=cfg.max_vocab)
    x = load_style_corpus(root, args.style_x, vocab)
    y = load_style_corpus(root, args.style_y, vocab)
    return x, y, vocab


def cmd_train(args):
    cfg = _config_from_args(args)
    x, y, vocab = _load_dataset(args, cfg)
    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(ckpt_dir / "vocab.txt")
    save_config(cfg, ckpt_dir / "train.cfg")
    result = train_dgst(cfg, x, y, vocab)
    last = result.history[-1]
    print(
        f"trained {cfg.epochs} epochs (variant={cfg.variant}); "
        f"dev acc {last.dev_accuracy:.4f}, dev self-BLEU {last.dev_self_bleu:.4f}"
    )
    print(f"checkpoints in {ckpt_dir}, metric log in {cfg.log_path}")
    return 0


def cmd_transfer(args):
    vocab = Vocab.load(args.vocab)
    blob = Path(args.checkpoint).read_bytes()
    prefix = "f." if args.direction == "x2y" else "g."
    model = load_transferrer(blob, prefix)
    if model.cfg.vocab_size != len(vocab):
        raise CorpusError(
            f"vocab mismatch: checkpoint embeds {model.cfg.vocab_size} tokens, "
            f"vocab file {args.vocab} has {len(vocab)}"
        )
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    out_lines = []
    pending = [(i, vocab.encode(line)) for i, line in enumerate(lines)]
    sentences = [(i, s) for i, s in pending if s]
    outputs = {}
    for lo in range(0, len(sentences), args.batch_size):
        chunk = sentences[lo : lo + args.batch_size]
        for (i, _), out in zip(chunk, model.transfer_batch([s for _, s in chunk])):
            outputs[i] = out
    for i, line in enumerate(lines):
        out_lines.append(vocab.decode(outputs[i]) if i in outputs else "")
    Path(args.output).write_text(
        "".join(line + "\n" for line in out_lines), encoding="utf-8"
    )
    print(f"transferred {len(sentences)} sentences -> {args.output}")
    return 0


def _evaluate_checkpoint(checkpoint, vocab, x, y, clf_seed=0):
    blob = Path(checkpoint).read_bytes()
    f = load_transferrer(blob, "f.")
    g = load_transferrer(blob, "g.")
    if f.cfg.vocab_size != len(vocab):
        raise CorpusError(
            f"vocab mismatch: checkpoint embeds {f.cfg.vocab_size} tokens, vocab has {len(vocab)}"
        )
    classifier = train_classifier({x.style: x.train, y.style: y.train}, seed=clf_seed)
    return evaluate_system(f, g, x, y, classifier)


def cmd_evaluate(args):
    cfg = _config_from_args(args)
    x, y, vocab = _load_dataset(args, cfg)
    reports = _evaluate_checkpoint(args.checkpoint, vocab, x, y, clf_seed=cfg.seed)
    print(format_reports(reports))
    if args.report:
        write_reports(reports, args.report)
        print(f"report written to {args.report}")
    return 0


def cmd_ablate(args):
    cfg = _config_from_args(args)
    x, y, vocab = _load_dataset(args, cfg)
    base_dir = Path(cfg.checkpoint_dir)
    classifier = train_classifier({x.style: x.train, y.style: y.train}, seed=cfg.seed)
    rows = []
    for variant in ABLATION_ORDER:
        run_dir = base_dir / variant
        run_dir.mkdir(parents=True, exist_ok=True)
        run_cfg = dataclasses.replace(
            cfg,
            variant=variant,
            checkpoint_dir=str(run_dir),
            log_path=str(run_dir / "train.log"),
        )
        result = train_dgst(run_cfg, x, y, vocab, classifier=classifier)
        reports = evaluate_system(result.f, result.g, x, y, classifier)
        rows.append((variant, reports["avg"].self_bleu, reports["avg"].accuracy))
        print(f"[{variant}] self_bleu={rows[-1][1]:.4f} acc={rows[-1][2]:.4f}", flush=True)
    table = "variant\tself_bleu\tacc\n" + "".join(
        f"{v}\t{sb:.4f}\t{acc:.4f}\n" for v, sb, acc in rows
    )
    print(table, end="")
    out = base_dir / "ablation.tsv"
    out.write_text(table, encoding="utf-8")
    print(f"ablation table written to {out}")
    return 0


def cmd_noise_demo(args):
    if args.input and args.vocab:
        vocab = Vocab.load(args.vocab)
        lines = Path(args.input).read_text(encoding="utf-8").splitlines()
        sentences = [vocab.encode(l) for l in lines if l.split()][: args.n]
    else:
        x, _, vocab = make_synthetic_corpus(max(args.n, 1), seed=args.seed, n_dev=0, n_test=0)
        sentences = x.train[: args.n]
    rng = new_rng(args.seed)
    spec = NoiseSpec(args.gamma)
    for s in sentences:
        noised, k = neighbourhood_sample(s, spec, vocab, rng, with_count=True)
        print(f"{vocab.decode(s)}\n  -[{k} edits]-> {vocab.decode(noised)}")
    return 0


def cmd_make_synthetic(args):
    root = write_synthetic_dataset(
        args.out,
        n_train=args.n,
        content_vocab_size=args.content_vocab,
        seed=args.seed,
        n_dev=args.dev_n,
        n_test=args.test_n,
        cross_marker_p=args.cross_marker_p,
    )
    print(f"synthetic dataset written to {root}")
    return 0


def build_parser():
    parser = _Parser(
        prog="dgst",
        description="Dual-generator text style transfer without discriminators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the two transferrers")
    p.add_argument("--config", help="flat key = value config file")
    _add_data_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="transfer an input file line by line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--direction", choices=("x2y", "y2x"), required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report", help="write a flat key<TAB>value report here")
    _add_data_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score all six variants")
    p.add_argument("--config", help="flat key = value config file")
    _add_data_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("noise-demo", help="print noisified samples")
    p.add_argument("--gamma", type=float, default=0.3)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input", help="corpus file to noisify (needs --vocab)")
    p.add_argument("--vocab", help="vocab file for --input")
    p.set_defaults(func=cmd_noise_demo)

    p = sub.add_parser("make-synthetic", help="write a synthetic marker dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000, help="training sentences per style")
    p.add_argument("--dev-n", type=int, default=200)
    p.add_argument("--test-n", type=int, default=500)
    p.add_argument("--content-vocab", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--cross-marker-p", type=float, default=0.0,
        help="rate of one opposite-style marker inside two-marker sentences",
    )
    p.set_defaults(func=cmd_make_synthetic)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (CorpusError, CheckpointError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
