"""Command-line entry point: ``mrlabel <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every artifact is written under ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .baseline import baseline_predictions, load_keywords
from .birads_mask import MaskRuleSet
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import class_weights, load_corpus, save_corpus, stratified_kfold
from .encoder import EncoderConfig, init_params
from .errors import DataError, FoldError, NumericError
from .evaluation import (
    PipelineConfig,
    cross_validate,
    format_table,
    label_corpus,
    task_inputs,
)
from .masking import build_domain_table, mask_stats
from .metrics import accuracy, macro_f1, mcc
from .synthetic import BIOPSY_KEYWORDS, GeneratorConfig, generate_synthetic_corpus
from .tokenizer import build_vocab, load_vocab, save_vocab, tokenize, tokenize_many
from .training import FineTuneConfig, LabeledSet, PretrainConfig, finetune, pretrain

log = logging.getLogger("mrlabel")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--seed", type=int, help=f"global seed (default {cfgmod.DEFAULT_SEED})")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--log-level", default="INFO")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrlabel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="write a synthetic bilingual report corpus")
    _common(p)
    p.add_argument("--n", type=int, dest="n_reports")
    p.add_argument("--misparse-rate", type=float)
    p.add_argument("--positive-rate", type=float, dest="biopsy_positive_rate")
    p.add_argument("--unlabeled", action="store_true", help="drop labels from the output")
    p.add_argument("--name", default="corpus.jsonl")

    p = sub.add_parser("build-vocab", help="induce a WordPiece vocabulary")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab-size", type=int)

    p = sub.add_parser("mask-stats", help="empirical DS-MLM corruption rates")
    _common(p)
    p.add_argument("--corpus", help="corpus JSONL (default: synthetic)")
    p.add_argument("--vocab", help="vocab.txt (default: induced from the corpus)")
    p.add_argument("--n", type=int, default=100_000, help="eligible tokens to sample")
    p.add_argument("--max-len", type=int)

    p = sub.add_parser("pretrain", help="DS-MLM pretraining")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-len", type=int)

    for name, help_ in (("finetune", "fine-tune a classifier on one fold"),
                        ("evaluate", "k-fold cross-validated fine-tuning")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--corpus", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--init", help="pretrained checkpoint (default: random init)")
        p.add_argument("--task", choices=("biopsy", "birads"), required=True)
        p.add_argument("--k", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--base-lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--birads-rules", help="BI-RADS keyword patterns, one per line")
        if name == "finetune":
            p.add_argument("--fold", type=int, default=0, help="held-out fold index")
        else:
            p.add_argument("--jobs", type=int)

    p = sub.add_parser("baseline", help="keyword biopsy baseline on a labeled corpus")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--keywords", help="keyword phrases, one per line")

    p = sub.add_parser("label", help="weak-label a corpus with a classifier checkpoint")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--birads-rules")
    return parser


# ------------------------------------------------------------------ helpers


def _resolve(args) -> dict:
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        for section in ("corpus", "pretrain", "finetune", "evaluate"):
            cfg[section]["seed"] = args.seed
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _enc_cfg(cfg, vocab_size: int) -> EncoderConfig:
    return EncoderConfig(vocab_size=vocab_size, max_len=cfg["tokenizer"]["max_len"],
                         **cfg["encoder"])


def _encoder_meta(enc: EncoderConfig, vocab) -> dict:
    return {"kind": "pretrained", "encoder": enc.to_dict(), "vocab_hash": vocab.content_hash()}


def _load_encoder(path, vocab):
    params, meta = load_checkpoint(path)
    if meta.get("vocab_hash") != vocab.content_hash():
        raise DataError(f"{path}: checkpoint was built with a different vocabulary")
    return params, EncoderConfig(**meta["encoder"])


def _rules(path):
    return MaskRuleSet.from_file(path) if path else MaskRuleSet()


def _ft_config(cfg, task) -> FineTuneConfig:
    f = dict(cfg["finetune"])
    preset = FineTuneConfig.for_task(task)
    for key in ("decay", "temperature", "smoothing"):
        if f[key] is None:
            f[key] = getattr(preset, key)
    return FineTuneConfig(**f)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ----------------------------------------------------------------- commands


def cmd_gen_corpus(args, cfg):
    cfgmod.override(cfg, "corpus", n_reports=args.n_reports, misparse_rate=args.misparse_rate,
                    biopsy_positive_rate=args.biopsy_positive_rate)
    log.info("resolved config:\n%s", cfgmod.dump_config({"corpus": cfg["corpus"]}))
    corpus = generate_synthetic_corpus(GeneratorConfig(**cfg["corpus"]))
    if args.unlabeled:
        corpus = corpus.unlabeled()
    path = _out(args) / args.name
    save_corpus(corpus, path)
    print(f"wrote {len(corpus)} reports to {path}")


def cmd_build_vocab(args, cfg):
    cfgmod.override(cfg, "tokenizer", vocab_size=args.vocab_size)
    vocab = build_vocab(load_corpus(args.corpus), cfg["tokenizer"]["vocab_size"])
    path = _out(args) / "vocab.txt"
    save_vocab(vocab, path)
    print(f"wrote {len(vocab)} tokens to {path}")


def cmd_mask_stats(args, cfg):
    cfgmod.override(cfg, "tokenizer", max_len=args.max_len)
    max_len = cfg["tokenizer"]["max_len"]
    if args.corpus:
        corpus = load_corpus(args.corpus)
    else:
        corpus = generate_synthetic_corpus(
            GeneratorConfig(n_reports=500, seed=cfg["corpus"]["seed"]))
    vocab = load_vocab(args.vocab) if args.vocab else build_vocab(
        corpus, cfg["tokenizer"]["vocab_size"])
    seqs = [tokenize(r.text, vocab, max_len) for r in corpus]
    table = build_domain_table(np.stack([s.ids for s in seqs]), vocab)
    rng = np.random.default_rng(cfg["pretrain"]["seed"])
    stats = mask_stats(seqs, table, vocab, args.n, rng)
    expected = {"selected": 0.20, "cond_mask": 0.60, "cond_replace": 0.30, "cond_keep": 0.10,
                "cond_domain_of_replace": 2 / 3, "mask": 0.12, "replace_domain": 0.04,
                "replace_global": 0.02, "keep": 0.02}
    rows = [(k, f"{stats[k]:.4f}", f"{v:.4f}") for k, v in expected.items()]
    print(f"eligible tokens: {int(stats['eligible'])}")
    print(f"{'rate':<24}{'empirical':>10}{'expected':>10}")
    for k, e, x in rows:
        print(f"{k:<24}{e:>10}{x:>10}")
    _write_csv(_out(args) / "mask_stats.csv", ["rate", "empirical", "expected"], rows)


def cmd_pretrain(args, cfg):
    cfgmod.override(cfg, "pretrain", epochs=args.epochs, batch_size=args.batch_size, lr=args.lr)
    cfgmod.override(cfg, "tokenizer", max_len=args.max_len)
    log.info("resolved config:\n%s", cfgmod.dump_config(cfg))
    corpus = load_corpus(args.corpus)
    vocab = load_vocab(args.vocab)
    enc = _enc_cfg(cfg, len(vocab))
    res = pretrain(corpus, vocab, enc, PretrainConfig(**cfg["pretrain"]))
    out = _out(args)
    meta = _encoder_meta(enc, vocab)
    save_checkpoint(out / "pretrained.ckpt", res.params, {**meta, "epoch": cfg["pretrain"]["epochs"]})
    save_checkpoint(out / "pretrained_best.ckpt", res.best_params, {**meta, "epoch": res.best_epoch})
    _write_csv(out / "pretrain_loss.csv", ["epoch", "split", "metric", "value"],
               [(e, s, m, repr(v)) for e, s, m, v in res.curve])
    print(f"final valid loss {res.values('valid', 'loss')[-1]:.4f} "
          f"(initial {res.values('valid', 'loss')[0]:.4f}); best epoch {res.best_epoch}")


def _init_for(args, cfg, vocab):
    if args.init:
        return _load_encoder(args.init, vocab)
    enc = _enc_cfg(cfg, len(vocab))
    return init_params(enc, np.random.default_rng(cfg["evaluate"]["seed"])), enc


def cmd_finetune(args, cfg):
    cfgmod.override(cfg, "finetune", epochs=args.epochs, base_lr=args.base_lr,
                    batch_size=args.batch_size)
    cfgmod.override(cfg, "evaluate", k=args.k)
    corpus = load_corpus(args.corpus)
    vocab = load_vocab(args.vocab)
    init, enc = _init_for(args, cfg, vocab)
    ft = _ft_config(cfg, args.task)
    log.info("resolved config:\n%s", cfgmod.dump_config(cfg))
    texts, y, classes = task_inputs(corpus, args.task, _rules(args.birads_rules))
    ids, lengths = tokenize_many(texts, vocab, enc.max_len)
    folds = stratified_kfold(corpus, args.task, cfg["evaluate"]["k"], cfg["evaluate"]["seed"])
    if not 0 <= args.fold < len(folds):
        raise UsageError(f"--fold must be in [0, {len(folds)})")
    pos = {rid: i for i, rid in enumerate(corpus.ids)}
    split = folds[args.fold]
    tr = np.array([pos[r] for r in split.train_ids])
    va = np.array([pos[r] for r in split.valid_ids])
    res = finetune(init, enc, LabeledSet(ids[tr], lengths[tr], y[tr]),
                   LabeledSet(ids[va], lengths[va], y[va]), classes, ft,
                   class_weights(list(y[tr])))
    out = _out(args)
    meta = {"kind": "classifier", "task": args.task, "classes": list(classes),
            "temperature": ft.temperature, "encoder": enc.to_dict(),
            "vocab_hash": vocab.content_hash(), "best_epoch": res.best_epoch}
    save_checkpoint(out / f"classifier_{args.task}.ckpt", res.params, meta)
    keys = [k for k in res.history[0] if k != "epoch"]
    _write_csv(out / f"finetune_{args.task}.csv", ["epoch", "split", "metric", "value"],
               [(h["epoch"], "train" if k == "train_loss" else "valid", k, repr(h[k]))
                for h in res.history for k in keys])
    print(f"best epoch {res.best_epoch}: {res.best_report.metrics()}")


def cmd_evaluate(args, cfg):
    cfgmod.override(cfg, "finetune", epochs=args.epochs, base_lr=args.base_lr,
                    batch_size=args.batch_size)
    cfgmod.override(cfg, "evaluate", k=args.k, jobs=args.jobs)
    corpus = load_corpus(args.corpus)
    vocab = load_vocab(args.vocab)
    init, enc = _init_for(args, cfg, vocab)
    log.info("resolved config:\n%s", cfgmod.dump_config(cfg))
    ev = cfg["evaluate"]
    pipe = PipelineConfig(vocab, enc, _ft_config(cfg, args.task), init,
                          rules=_rules(args.birads_rules))
    res = cross_validate(corpus, args.task, pipe, ev["k"], ev["seed"], ev["jobs"])
    out = _out(args)
    (out / f"evaluate_{args.task}.csv").write_text(res.csv(), encoding="utf-8")
    name = "pretrained" if args.init else "random init"
    table = res.table(name)
    (out / f"evaluate_{args.task}.txt").write_text(table + "\n", encoding="utf-8")
    print(table)


def cmd_baseline(args, cfg):
    corpus = load_corpus(args.corpus)
    keywords = load_keywords(args.keywords) if args.keywords else BIOPSY_KEYWORDS
    true = corpus.labels("biopsy")
    if any(t is None for t in true):
        raise DataError("baseline needs biopsy labels on every report")
    pred = baseline_predictions(corpus, keywords)
    m = {"accuracy": accuracy(pred, true), "macro_f1": macro_f1(pred, true), "mcc": mcc(pred, true)}
    _write_csv(_out(args) / "baseline.csv", ["metric", "value"], [(k, repr(v)) for k, v in m.items()])
    print(format_table({"biopsy - keyword baseline": m}))


def cmd_label(args, cfg):
    corpus = load_corpus(args.corpus)
    vocab = load_vocab(args.vocab)
    params, meta = load_checkpoint(args.checkpoint)
    if meta.get("kind") != "classifier":
        raise DataError(f"{args.checkpoint} is not a classifier checkpoint")
    if meta.get("vocab_hash") != vocab.content_hash():
        raise DataError(f"{args.checkpoint}: checkpoint was built with a different vocabulary")
    rows = label_corpus(corpus, vocab, params, meta, _rules(args.birads_rules))
    path = _out(args) / "labels.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    print(f"wrote {len(rows)} labels to {path}")


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "build-vocab": cmd_build_vocab,
    "mask-stats": cmd_mask_stats,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "label": cmd_label,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        COMMANDS[args.command](args, cfg)
    except FoldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3 if isinstance(exc.cause, (NumericError, FloatingPointError)) else 2
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
