"""Adam, progressive layer-wise learning rates, MLM pretraining and fine-tuning."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import heads
from .encoder import (
    EncoderConfig,
    encode_backward,
    encode_batch,
    init_head,
    init_params,
    mlm_backward,
    mlm_logits,
)
from .errors import DataError, NumericError
from .masking import DomainTokenTable, MaskingPlan, build_domain_table, sample_masking_plan
from .metrics import evaluate_predictions
from .tokenizer import TokenSequence, Vocab, tokenize_many

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


# ------------------------------------------------------- learning-rate map


def layer_lr(depth: int, base_lr: float, decay: float) -> float:
    """Learning rate of the encoder layer ``depth`` steps below the top."""
    if not 0.0 < decay <= 1.0:
        raise ValueError("decay must be in (0, 1]")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    return base_lr * decay**depth


def param_group(name: str) -> str:
    if name.startswith("embed."):
        return "embeddings"
    if name.startswith("layer"):
        return name.split(".", 1)[0]
    if name.startswith("head."):
        return "head"
    if name.startswith("mlm."):
        return "mlm"
    raise KeyError(f"parameter {name!r} belongs to no group")


def assign_param_lrs(cfg: EncoderConfig, base_lr: float, decay: float) -> dict[str, float]:
    """Head and top layer get ``base_lr``; each layer below is ``decay`` times slower.

    Storage index ``j`` counts from the bottom, so its depth from the top is
    ``L - 1 - j``. The embeddings sit one step below the deepest layer.
    """
    L = cfg.n_layers
    lrs = {"head": base_lr}
    for j in range(L):
        lrs[f"layer{j}"] = layer_lr(L - 1 - j, base_lr, decay)
    lrs["embeddings"] = layer_lr(L, base_lr, decay)
    return lrs


def uniform_lrs(params: dict, lr: float) -> dict[str, float]:
    return {param_group(n): lr for n in params}


# --------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    betas: tuple = ADAM_BETAS
    eps: float = ADAM_EPS


def adam_step(params: dict, grads: dict, state: AdamState, lr_map: dict) -> dict:
    """One bias-corrected Adam update, in place; parameters without a
    gradient are treated as having a zero gradient."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in group {param_group(name)!r} ({name})")
    b1, b2 = state.betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        group = param_group(name)
        if group not in lr_map:
            raise KeyError(f"no learning rate for group {group!r}")
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        lr = lr_map[group]
        if lr == 0.0:
            continue
        denom = np.sqrt(v / c2) + state.eps
        p -= (lr * (m / c1) / denom).astype(p.dtype)
    return params


# ------------------------------------------------------------- objectives


def _trim(ids, lengths):
    n = int(lengths.max())
    return ids[:, :n]


def mlm_loss_and_grads(params, cfg, ids, lengths, positions, targets, rng=None):
    """MLM cross-entropy at ``positions = (batch_idx, pos_idx)`` and its gradients."""
    z, cache = encode_batch(params, cfg, ids, lengths, rng)
    logits, zs = mlm_logits(params, z, positions)
    loss, dlogits = heads.mlm_cross_entropy_and_grad(logits, targets)
    grads = {}
    dzs = mlm_backward(params, zs, dlogits.astype(z.dtype), grads)
    dz = np.zeros_like(z)
    bi, pi = positions
    dz[bi, pi] = dzs
    encode_backward(params, cfg, cache, dz, grads)
    return loss, grads, logits


def classifier_loss_and_grads(params, cfg, ids, lengths, y, loss_cfg, T, rng=None):
    """Weighted label-smoothing loss of the pooled classifier and its gradients."""
    z, cache = encode_batch(params, cfg, ids, lengths, rng)
    pad_mask = np.arange(ids.shape[1])[None, :] >= np.asarray(lengths)[:, None]
    pooled = heads.mean_pool(z, pad_mask)
    logits = heads.head_logits(params, pooled)
    loss, dlogits, probs = heads.label_smoothing_loss_and_grad(logits, y, loss_cfg, T)
    grads = {
        "head.weight": dlogits.T @ pooled,
        "head.bias": dlogits.sum(0),
    }
    dz = heads.mean_pool_backward(dlogits @ params["head.weight"], pad_mask)
    encode_backward(params, cfg, cache, dz, grads)
    return loss, grads, probs


def predict_proba(params, cfg, ids, lengths, T: float = 1.0, batch_size: int = 64):
    """Inference-mode class probabilities for a tokenized set."""
    out = []
    order = np.argsort(lengths, kind="stable")
    for s in range(0, len(ids), batch_size):
        idx = order[s : s + batch_size]
        b_ids, b_len = ids[idx], lengths[idx]
        z, _ = encode_batch(params, cfg, _trim(b_ids, b_len), b_len)
        pad_mask = np.arange(z.shape[1])[None, :] >= b_len[:, None]
        out.append((idx, heads.classify(params, heads.mean_pool(z, pad_mask), T)))
    probs = np.zeros((len(ids), params["head.bias"].shape[0]))
    for idx, p in out:
        probs[idx] = p
    return probs


# ------------------------------------------------------------- pretraining


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    train_fraction: float = 0.85
    seed: int = 0


@dataclass
class PretrainResult:
    params: dict
    best_params: dict
    best_epoch: int
    curve: list = field(default_factory=list)  # (epoch, split, metric, value)
    table: Optional[DomainTokenTable] = None
    train_ids: tuple = ()
    valid_ids: tuple = ()

    def values(self, split: str, metric: str) -> list[float]:
        return [v for _, s, m, v in self.curve if s == split and m == metric]


def split_sizes(n: int, train_fraction: float) -> tuple[int, int]:
    n_train = int(math.floor(n * train_fraction + 0.5))
    return n_train, n - n_train


def _corrupt_batch(ids, lengths, rows, table, vocab, rng, global_ids):
    out = ids[rows].copy()
    bi, pi, tg = [], [], []
    for r, row in enumerate(rows):
        plan = sample_masking_plan(TokenSequence(ids[row], int(lengths[row])), table, vocab,
                                   rng, global_ids)
        out[r, plan.positions] = plan.replacements
        bi.append(np.full(len(plan), r))
        pi.append(plan.positions)
        tg.append(plan.targets)
    return out, (np.concatenate(bi), np.concatenate(pi)), np.concatenate(tg)


def evaluate_mlm(params, cfg, corrupted, lengths, positions, targets, batch_size=64):
    """Mean MLM loss and top-1 recovery over all selected positions."""
    bi_all, pi_all = positions
    total, correct, count = 0.0, 0, 0
    for s in range(0, len(corrupted), batch_size):
        sel = (bi_all >= s) & (bi_all < s + batch_size)
        if not sel.any():
            continue
        b_ids = corrupted[s : s + batch_size]
        b_len = lengths[s : s + batch_size]
        z, _ = encode_batch(params, cfg, _trim(b_ids, b_len), b_len)
        logits, _ = mlm_logits(params, z, (bi_all[sel] - s, pi_all[sel]))
        m = int(sel.sum())
        total += heads.mlm_cross_entropy(logits, targets[sel]) * m
        correct += int((logits.argmax(-1) == targets[sel]).sum())
        count += m
    return total / count, correct / count


def pretrain(
    corpus,
    vocab: Vocab,
    enc_cfg: EncoderConfig,
    pt: PretrainConfig,
    init: Optional[dict] = None,
    progress: Optional[Callable[[int, dict], None]] = None,
) -> PretrainResult:
    """DS-MLM pretraining with fresh masking plans every epoch.

    Reports are split ``train_fraction`` / rest into training and
    validation. Validation corruption is drawn once so epochs compare on
    the same targets. ``best_params`` has the lowest validation loss.
    """
    texts = [getattr(r, "text", r) for r in corpus]
    report_ids = [getattr(r, "id", str(i)) for i, r in enumerate(corpus)]
    if not texts:
        raise DataError("cannot pretrain on an empty corpus")
    split_rng, init_rng, mask_rng, shuffle_rng, drop_rng, valid_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(pt.seed).spawn(6)
    )
    perm = split_rng.permutation(len(texts))
    n_train, n_valid = split_sizes(len(texts), pt.train_fraction)
    if n_train == 0 or n_valid == 0:
        raise DataError(f"{len(texts)} reports are too few for a train/validation split")
    tr_idx, va_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    ids, lengths = tokenize_many(texts, vocab, enc_cfg.max_len)
    tr_ids, tr_len = ids[tr_idx], lengths[tr_idx]
    va_ids, va_len = ids[va_idx], lengths[va_idx]
    table = build_domain_table(tr_ids, vocab)
    global_ids = vocab.non_special_ids()

    va_corrupt, va_pos, va_tgt = _corrupt_batch(
        va_ids, va_len, np.arange(len(va_ids)), table, vocab, valid_rng, global_ids
    )
    params = init if init is not None else init_params(enc_cfg, init_rng)
    params = {k: v.copy() for k, v in params.items()}
    state = AdamState()
    lrs = uniform_lrs(params, pt.lr)

    curve = []
    loss0, acc0 = evaluate_mlm(params, enc_cfg, va_corrupt, va_len, va_pos, va_tgt)
    curve += [(0, "valid", "loss", loss0), (0, "valid", "top1", acc0)]
    best_loss, best_epoch, best = loss0, 0, {k: v.copy() for k, v in params.items()}
    log.info("pretrain epoch 0 valid loss %.4f top1 %.4f", loss0, acc0)

    for epoch in range(1, pt.epochs + 1):
        order = shuffle_rng.permutation(len(tr_ids))
        seen, total = 0, 0.0
        for s in range(0, len(order), pt.batch_size):
            rows = order[s : s + pt.batch_size]
            b_ids, pos, tgt = _corrupt_batch(tr_ids, tr_len, rows, table, vocab, mask_rng,
                                             global_ids)
            if tgt.size == 0:
                warnings.warn(f"epoch {epoch}: batch without selected positions skipped")
                continue
            b_len = tr_len[rows]
            loss, grads, _ = mlm_loss_and_grads(
                params, enc_cfg, _trim(b_ids, b_len), b_len, pos, tgt, drop_rng
            )
            if not math.isfinite(loss):
                raise NumericError(f"non-finite MLM loss at epoch {epoch}")
            adam_step(params, grads, state, lrs)
            total += loss * tgt.size
            seen += tgt.size
        v_loss, v_acc = evaluate_mlm(params, enc_cfg, va_corrupt, va_len, va_pos, va_tgt)
        curve += [(epoch, "train", "loss", total / max(seen, 1)),
                  (epoch, "valid", "loss", v_loss), (epoch, "valid", "top1", v_acc)]
        log.info("pretrain epoch %d train %.4f valid %.4f top1 %.4f",
                 epoch, total / max(seen, 1), v_loss, v_acc)
        if progress:
            progress(epoch, {"train_loss": total / max(seen, 1), "valid_loss": v_loss,
                             "valid_top1": v_acc})
        if v_loss < best_loss:
            best_loss, best_epoch = v_loss, epoch
            best = {k: v.copy() for k, v in params.items()}

    return PretrainResult(
        params=params,
        best_params=best,
        best_epoch=best_epoch,
        curve=curve,
        table=table,
        train_ids=tuple(report_ids[i] for i in tr_idx),
        valid_ids=tuple(report_ids[i] for i in va_idx),
    )


# -------------------------------------------------------------- fine-tuning


@dataclass(frozen=True)
class FineTuneConfig:
    base_lr: float = 1e-4
    decay: float = 0.25
    batch_size: int = 8
    epochs: int = 70
    temperature: float = 1.0
    smoothing: float = 0.0
    seed: int = 0
    selection_metric: str = "accuracy"

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must be in [0, 1)")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "FineTuneConfig":
        return replace(TASK_DEFAULTS[task], **overrides)


TASK_DEFAULTS = {
    "biopsy": FineTuneConfig(decay=1 / 4, temperature=1.0, smoothing=0.0),
    "birads": FineTuneConfig(decay=1 / 3, temperature=math.sqrt(2.0), smoothing=1 / 3),
}


@dataclass
class LabeledSet:
    ids: np.ndarray
    lengths: np.ndarray
    y: np.ndarray  # class indices into ``classes``

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class FineTuneResult:
    params: dict  # best epoch
    best_epoch: int
    best_report: object
    history: list = field(default_factory=list)  # dicts: epoch, train_loss, metrics
    final_params: Optional[dict] = None


def finetune(
    init: dict,
    enc_cfg: EncoderConfig,
    train: LabeledSet,
    valid: LabeledSet,
    classes: Sequence,
    ft: FineTuneConfig,
    weights: dict,
    lr_map: Optional[dict] = None,
    progress: Optional[Callable[[int, dict], None]] = None,
) -> FineTuneResult:
    """Fine-tune encoder + head; keep the epoch with the best validation metric.

    ``weights`` maps class index -> loss weight. ``init`` holds encoder
    weights (any MLM or previous head parameters are dropped).
    """
    K = len(classes)
    if len(np.unique(train.y)) < 2:
        raise DataError("training data contains a single class")
    head_rng, shuffle_rng, drop_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(ft.seed).spawn(3)
    )
    params = init_head(init, K, head_rng)
    params = {k: v.copy() for k, v in params.items()}
    loss_cfg = heads.LossConfig.from_mapping(weights, range(K), ft.smoothing)
    lrs = lr_map if lr_map is not None else assign_param_lrs(enc_cfg, ft.base_lr, ft.decay)
    state = AdamState()

    history = []
    best_score, best_epoch, best, best_report = -np.inf, 0, None, None
    for epoch in range(1, ft.epochs + 1):
        order = shuffle_rng.permutation(len(train))
        total = 0.0
        for s in range(0, len(order), ft.batch_size):
            rows = order[s : s + ft.batch_size]
            b_len = train.lengths[rows]
            loss, grads, _ = classifier_loss_and_grads(
                params, enc_cfg, _trim(train.ids[rows], b_len), b_len, train.y[rows],
                loss_cfg, ft.temperature, drop_rng,
            )
            if not math.isfinite(loss):
                raise NumericError(f"non-finite classification loss at epoch {epoch}")
            adam_step(params, grads, state, lrs)
            total += loss * len(rows)
        probs = predict_proba(params, enc_cfg, valid.ids, valid.lengths, ft.temperature)
        report = evaluate_predictions(probs, valid.y, classes)
        report.best_epoch = epoch
        row = {"epoch": epoch, "train_loss": total / len(train), **report.metrics()}
        history.append(row)
        log.debug("finetune epoch %d %s", epoch, row)
        if progress:
            progress(epoch, row)
        score = report.metrics()[ft.selection_metric]
        if score > best_score:
            best_score, best_epoch, best_report = score, epoch, report
            best = {k: v.copy() for k, v in params.items()}
    return FineTuneResult(best, best_epoch, best_report, history, params)
