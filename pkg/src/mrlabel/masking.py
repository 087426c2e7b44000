"""Domain-specific MLM corruption: selection, masking and replacement sampling.

Each non-special position is selected independently with probability 0.20.
A selected position is masked (0.60), replaced (0.30) or kept (0.10).
Replacements come from the corpus token-frequency table two thirds of the
time and uniformly from the whole non-special vocabulary otherwise. Plans
are re-sampled every time they are requested (dynamic masking).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tokenizer import TokenSequence, Vocab, tokenize

SELECT_RATE = 0.20
MASK_SHARE = 0.60
REPLACE_SHARE = 0.30
KEEP_SHARE = 0.10
DOMAIN_SHARE = 2.0 / 3.0

# action codes
MASK, REPLACE_DOMAIN, REPLACE_GLOBAL, KEEP = 0, 1, 2, 3
ACTION_NAMES = ("MASK", "REPLACE_DOMAIN", "REPLACE_GLOBAL", "KEEP")


@dataclass(frozen=True)
class DomainTokenTable:
    ids: np.ndarray
    counts: np.ndarray
    cdf: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def frequency(self, token_id: int) -> int:
        hit = np.flatnonzero(self.ids == token_id)
        return int(self.counts[hit[0]]) if hit.size else 0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        return self.ids[np.searchsorted(self.cdf, u, side="right").clip(max=len(self.ids) - 1)]


def build_domain_table(corpus, vocab: Vocab, max_len: int = 128) -> DomainTokenTable:
    """Exact token counts over the tokenized corpus, specials excluded.

    ``corpus`` may be a :class:`~mrlabel.corpus.Corpus`, an iterable of
    texts, or an already tokenized ``(n, max_len)`` id array.
    """
    if isinstance(corpus, np.ndarray):
        flat = corpus.ravel()
    else:
        texts = [getattr(r, "text", r) for r in corpus]
        flat = np.concatenate(
            [tokenize(t, vocab, max_len).ids for t in texts] or [np.zeros(0, np.int64)]
        )
    counts = np.bincount(flat, minlength=len(vocab)).astype(np.int64)
    counts[list(vocab.special_ids)] = 0
    ids = np.flatnonzero(counts)
    if ids.size == 0:
        raise ValueError("corpus has no non-special tokens")
    c = counts[ids]
    cdf = np.cumsum(c) / c.sum()
    cdf[-1] = 1.0
    return DomainTokenTable(ids, c, cdf)


@dataclass(frozen=True)
class MaskingPlan:
    """Selected positions, their actions, recovery targets and substitutes.

    ``replacements[i]`` is the id written at ``positions[i]``: [MASK] for
    MASK, the sampled id for REPLACE_*, the original id for KEEP.
    """

    length: int
    positions: np.ndarray
    actions: np.ndarray
    targets: np.ndarray
    replacements: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)


def eligible_positions(ids: np.ndarray, vocab: Vocab) -> np.ndarray:
    special = np.isin(ids, list(vocab.special_ids))
    return np.flatnonzero(~special)


def sample_masking_plan(
    seq: TokenSequence,
    table: DomainTokenTable,
    vocab: Vocab,
    rng: np.random.Generator,
    global_ids: np.ndarray | None = None,
) -> MaskingPlan:
    ids = np.asarray(seq.ids)
    cand = eligible_positions(ids, vocab)
    chosen = cand[rng.random(cand.size) < SELECT_RATE]
    m = chosen.size
    r = rng.random(m)
    actions = np.full(m, KEEP, dtype=np.int8)
    actions[r < MASK_SHARE + REPLACE_SHARE] = REPLACE_DOMAIN
    actions[r < MASK_SHARE] = MASK
    is_replace = actions == REPLACE_DOMAIN
    to_global = is_replace & (rng.random(m) >= DOMAIN_SHARE)
    actions[to_global] = REPLACE_GLOBAL

    targets = ids[chosen].copy()
    replacements = targets.copy()
    replacements[actions == MASK] = vocab.mask_id
    dom = actions == REPLACE_DOMAIN
    replacements[dom] = table.sample(rng, int(dom.sum()))
    if global_ids is None:
        global_ids = vocab.non_special_ids()
    n_glob = int(to_global.sum())
    replacements[to_global] = global_ids[rng.integers(0, global_ids.size, n_glob)]
    return MaskingPlan(len(ids), chosen, actions, targets, replacements)


def apply_plan(
    seq: TokenSequence, plan: MaskingPlan, vocab: Vocab
) -> tuple[TokenSequence, dict[int, int]]:
    """Write the plan's substitutes; return the corrupted sequence and targets."""
    ids = np.asarray(seq.ids)
    if plan.length != len(ids):
        raise ValueError(f"plan built for length {plan.length}, sequence has {len(ids)}")
    if np.any(plan.positions >= seq.length) or np.any(plan.positions < 1):
        raise ValueError("plan selects positions outside the sequence body")
    out = ids.copy()
    out[plan.positions] = plan.replacements
    targets = {int(p): int(t) for p, t in zip(plan.positions, plan.targets)}
    return TokenSequence(out, seq.length), targets


def rate_table(plans) -> dict[str, float]:
    """Empirical selection / action rates over a collection of plans."""
    n_eligible = 0
    counts = np.zeros(4, dtype=np.int64)
    for plan, eligible in plans:
        n_eligible += eligible
        counts += np.bincount(plan.actions, minlength=4)
    selected = counts.sum()
    table = {"eligible": float(n_eligible), "selected": selected / n_eligible}
    replace = counts[REPLACE_DOMAIN] + counts[REPLACE_GLOBAL]
    table["cond_mask"] = counts[MASK] / selected
    table["cond_replace"] = replace / selected
    table["cond_keep"] = counts[KEEP] / selected
    table["cond_domain_of_replace"] = counts[REPLACE_DOMAIN] / replace
    for code, name in enumerate(ACTION_NAMES):
        table[name.lower()] = counts[code] / n_eligible
    return table


def mask_stats(seqs, table: DomainTokenTable, vocab: Vocab, n_tokens: int, rng) -> dict:
    """Sample plans over ``seqs`` (cycling) until ``n_tokens`` eligible tokens are seen."""
    global_ids = vocab.non_special_ids()
    seqs = list(seqs)
    total = 0
    collected = []
    while total < n_tokens:
        for seq in seqs:
            plan = sample_masking_plan(seq, table, vocab, rng, global_ids)
            eligible = eligible_positions(seq.ids, vocab).size
            collected.append((plan, eligible))
            total += eligible
            if total >= n_tokens:
                break
        if total == 0:
            raise ValueError("sequences contain no eligible tokens")
    return rate_table(collected)
