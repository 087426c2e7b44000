"""Stratified k-fold fine-tuning harness and Table-style reporting."""

from __future__ import annotations

import io
import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .birads_mask import MaskRuleSet, mask_birads_mentions
from .corpus import BIOPSY_CLASSES, BIRADS_CLASSES, Corpus, class_weights, stratified_kfold
from .encoder import EncoderConfig, init_params
from .errors import FoldError
from .metrics import FoldReport, average_reports
from .tokenizer import Vocab, tokenize_many
from .training import FineTuneConfig, LabeledSet, finetune

log = logging.getLogger(__name__)

TASK_CLASSES = {"biopsy": BIOPSY_CLASSES, "birads": BIRADS_CLASSES}
METRIC_ORDER = ("accuracy", "roc_auc", "macro_f1", "mcc")


@dataclass
class PipelineConfig:
    vocab: Vocab
    enc_cfg: EncoderConfig
    ft: FineTuneConfig
    init: Optional[dict] = None  # pretrained encoder weights; None -> random init
    init_seed: int = 0
    rules: MaskRuleSet = field(default_factory=MaskRuleSet)


@dataclass
class CVResult:
    task: str
    reports: list[FoldReport]
    averages: dict
    histories: list = field(default_factory=list)

    def table(self, name: str = "classifier") -> str:
        return format_table({f"{self.task} - {name}": self.averages})

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "metric", "value"])
        for r in self.reports:
            for k, v in r.metrics().items():
                w.writerow([r.fold_index, k, repr(v)])
        for k, v in self.averages.items():
            w.writerow(["mean", k, repr(v)])
        return buf.getvalue()


def task_inputs(corpus: Corpus, task: str, rules: MaskRuleSet | None = None):
    """Texts (BI-RADS scores masked for that task) and class-index labels."""
    if task not in TASK_CLASSES:
        raise ValueError(f"unknown task {task!r}")
    classes = TASK_CLASSES[task]
    texts = [r.text for r in corpus]
    if task == "birads":
        texts = [mask_birads_mentions(t, rules)[0] for t in texts]
    lookup = {c: i for i, c in enumerate(classes)}
    y = np.array([lookup[r.label(task)] for r in corpus], dtype=np.int64)
    return texts, y, classes


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _run_fold(args):
    fold, train, valid, classes, pipe = args
    init = pipe.init
    if init is None:
        init = init_params(pipe.enc_cfg, np.random.default_rng(pipe.init_seed))
    weights = class_weights(list(train.y))
    ft = replace(pipe.ft, seed=fold_seed(pipe.ft.seed, fold))
    res = finetune(init, pipe.enc_cfg, train, valid, classes, ft, weights)
    report = res.best_report
    report.fold_index = fold
    log.info("fold %d best epoch %d %s", fold, res.best_epoch, report.metrics())
    return fold, report, res.history


def cross_validate(
    corpus: Corpus, task: str, pipe: PipelineConfig, k: int = 5, seed: int = 0, jobs: int = 1
) -> CVResult:
    """Fine-tune on each fold's training part and score its best epoch on the
    held-out part; averages are unweighted means over folds."""
    texts, y, classes = task_inputs(corpus, task, pipe.rules)
    ids, lengths = tokenize_many(texts, pipe.vocab, pipe.enc_cfg.max_len)
    position = {rid: i for i, rid in enumerate(corpus.ids)}
    jobs_args = []
    for split in stratified_kfold(corpus, task, k, seed):
        tr = np.array([position[r] for r in split.train_ids])
        va = np.array([position[r] for r in split.valid_ids])
        jobs_args.append((
            split.fold_index,
            LabeledSet(ids[tr], lengths[tr], y[tr]),
            LabeledSet(ids[va], lengths[va], y[va]),
            classes,
            pipe,
        ))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_fold, jobs_args))
    else:
        results = []
        for a in jobs_args:
            try:
                results.append(_run_fold(a))
            except Exception as exc:
                raise FoldError(a[0], exc) from exc
    results.sort(key=lambda t: t[0])
    reports = [r for _, r, _ in results]
    return CVResult(task, reports, average_reports(reports), [h for _, _, h in results])


def format_table(rows: dict[str, dict]) -> str:
    """Fixed-width summary: one row per model, metric columns, '-' when absent."""
    header = ["Task (k-fold average)", "Accuracy", "ROC-AUC", "Macro Avg F1", "MCC"]
    body = []
    for name, m in rows.items():
        body.append([name] + [f"{m[k]:.4f}" if m.get(k) is not None else "-" for k in METRIC_ORDER])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    line = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths))
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in body])


def label_corpus(corpus: Corpus, vocab: Vocab, params: dict, meta: dict,
                 rules: MaskRuleSet | None = None) -> list[dict]:
    """Weak labels for every report: predicted class and class probabilities."""
    from .training import predict_proba

    enc_cfg = EncoderConfig(**meta["encoder"])
    classes = meta["classes"]
    texts = [r.text for r in corpus]
    if meta.get("task") == "birads":
        texts = [mask_birads_mentions(t, rules)[0] for t in texts]
    ids, lengths = tokenize_many(texts, vocab, enc_cfg.max_len)
    probs = predict_proba(params, enc_cfg, ids, lengths, meta["temperature"])
    out = []
    for r, p in zip(corpus, probs):
        out.append({
            "id": r.id,
            "label": classes[int(p.argmax())],
            "probabilities": {str(c): float(v) for c, v in zip(classes, p)},
        })
    return out
