"""Mean-pooled tempered-softmax classifier head and the training losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Class weights (indexed by class position), smoothing and class count."""

    weights: tuple[float, ...]
    smoothing: float = 0.0

    def __post_init__(self):
        if len(self.weights) < 2:
            raise ValueError("need at least two classes")
        if any(w <= 0 for w in self.weights):
            raise ValueError("class weights must be positive")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must be in [0, 1)")

    @property
    def n_classes(self) -> int:
        return len(self.weights)

    @classmethod
    def from_mapping(cls, weights: Mapping, classes: Sequence, smoothing: float = 0.0):
        """Order a ``{class: weight}`` map by ``classes``; absent classes get weight 1."""
        return cls(tuple(float(weights.get(c, 1.0)) for c in classes), smoothing)


def mean_pool(z: np.ndarray, pad_mask: np.ndarray) -> np.ndarray:
    """Average of ``z`` over non-pad positions; [CLS]/[SEP] count.

    Works on one sequence ``(n, d)`` with mask ``(n,)`` or a batch
    ``(B, n, d)`` with mask ``(B, n)``.
    """
    keep = ~np.asarray(pad_mask, dtype=bool)
    count = keep.sum(-1)
    if np.any(count == 0):
        raise ValueError("mean_pool needs at least one non-pad position")
    w = keep.astype(z.dtype)
    return (z * w[..., None]).sum(-2) / count[..., None].astype(z.dtype)


def mean_pool_backward(dpooled, pad_mask):
    keep = (~np.asarray(pad_mask, dtype=bool)).astype(dpooled.dtype)
    count = keep.sum(-1, keepdims=True)
    return dpooled[..., None, :] * (keep / count)[..., None]


def tempered_softmax(logits, T: float = 1.0) -> np.ndarray:
    if T <= 0:
        raise ValueError("temperature must be positive")
    u = np.asarray(logits)
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite logits")
    s = u / T
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


def head_logits(params, pooled):
    return pooled @ params["head.weight"].T + params["head.bias"]


def classify(params, pooled, T: float = 1.0) -> np.ndarray:
    """Class probabilities for pooled embedding(s)."""
    return tempered_softmax(head_logits(params, pooled), T)


def _soft_targets(y, cfg: LossConfig):
    y = np.atleast_1d(np.asarray(y))
    K = cfg.n_classes
    onehot = np.zeros((y.size, K))
    onehot[np.arange(y.size), y] = 1.0
    w = np.asarray(cfg.weights)
    return w * ((1.0 - cfg.smoothing) * onehot + cfg.smoothing / K)


def weighted_label_smoothing_loss(p, y, cfg: LossConfig) -> float:
    """Weighted, label-smoothed cross-entropy; batch value is the plain mean.

    ``p`` holds class probabilities ``(K,)`` or ``(B, K)``; ``y`` class
    indices into ``cfg.weights``.
    """
    p = np.atleast_2d(p)
    q = _soft_targets(y, cfg)
    return float(np.mean(-(q * np.log(np.maximum(p, PROB_FLOOR))).sum(-1)))


def label_smoothing_loss_and_grad(logits, y, cfg: LossConfig, T: float = 1.0):
    """Loss and its gradient with respect to the pre-temperature logits."""
    logits = np.atleast_2d(logits)
    p = tempered_softmax(logits, T)
    q = _soft_targets(y, cfg)
    loss = float(np.mean(-(q * np.log(np.maximum(p, PROB_FLOOR))).sum(-1)))
    # d/du_k of -sum_c q_c log p_c with p = softmax(u / T)
    grad = (p * q.sum(-1, keepdims=True) - q) / (T * logits.shape[0])
    return loss, grad.astype(logits.dtype), p


def mlm_cross_entropy(logits, targets) -> float:
    return mlm_cross_entropy_and_grad(logits, targets)[0]


def mlm_cross_entropy_and_grad(logits, targets):
    """Mean of ``-log softmax(logits)[target]`` over the selected rows."""
    logits = np.atleast_2d(logits)
    targets = np.asarray(targets)
    m = logits.shape[0]
    if m == 0:
        raise ValueError("no selected positions")
    s = logits - logits.max(-1, keepdims=True)
    logz = np.log(np.exp(s).sum(-1, keepdims=True))
    logp = s - logz
    loss = float(-logp[np.arange(m), targets].mean())
    grad = np.exp(logp)
    grad[np.arange(m), targets] -= 1.0
    return loss, grad / m
