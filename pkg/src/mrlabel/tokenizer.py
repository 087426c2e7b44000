"""WordPiece vocabulary induction, vocab files and report tokenization."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus
from .errors import DataError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
CONTINUATION = "##"
MAX_CHARS_PER_WORD = 100


class Vocab:
    """Dense token <-> id bijection with the five special tokens present."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        index = {}
        for i, tok in enumerate(tokens):
            if not tok or any(ch.isspace() for ch in tok):
                raise DataError(f"token {i}: empty or contains whitespace")
            if tok in index:
                raise DataError(f"duplicate token {tok!r} at ids {index[tok]} and {i}")
            index[tok] = i
        for sp in SPECIAL_TOKENS:
            if sp not in index:
                raise DataError(f"vocab is missing special token {sp}")
        if index[PAD] != 0:
            raise DataError(f"{PAD} must have id 0, found {index[PAD]}")
        self.tokens = tokens
        self.index = index
        self.pad_id = 0
        self.unk_id = index[UNK]
        self.cls_id = index[CLS]
        self.sep_id = index[SEP]
        self.mask_id = index[MASK]
        self.special_ids = frozenset(index[sp] for sp in SPECIAL_TOKENS)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"Vocab(size={len(self)})"

    def id(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    def non_special_ids(self) -> np.ndarray:
        return np.array([i for i in range(len(self)) if i not in self.special_ids], dtype=np.int64)

    def dumps(self) -> str:
        return "".join(t + "\n" for t in self.tokens)

    def content_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()


def save_vocab(vocab: Vocab, path) -> None:
    Path(path).write_bytes(vocab.dumps().encode("utf-8"))


def load_vocab(path) -> Vocab:
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return Vocab(lines)


def _word_symbols(word: str) -> tuple[str, ...]:
    return (word[0],) + tuple(CONTINUATION + ch for ch in word[1:])


def _merge_symbols(a: str, b: str) -> str:
    return a + b[len(CONTINUATION):]


def minimum_vocab_size(words: Iterable[str]) -> int:
    alphabet = set()
    for w in words:
        alphabet.update(_word_symbols(w))
    return len(SPECIAL_TOKENS) + len(alphabet)


def build_vocab(corpus, target_size: int) -> Vocab:
    """Induce a WordPiece vocabulary by frequency-greedy pair merging.

    Starts from every character (word-initial form and ``##`` continuation
    form) and repeatedly merges the most frequent adjacent symbol pair until
    ``target_size`` tokens exist or no pair is left. Ties break on the pair
    itself, so the result is deterministic.
    """
    texts = [r.text for r in corpus] if isinstance(corpus, Corpus) else corpus
    word_counts = Counter()
    for text in texts:
        word_counts.update(w for w in text.split() if len(w) <= MAX_CHARS_PER_WORD)
    if not word_counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    minimum = minimum_vocab_size(word_counts)
    if target_size < minimum:
        raise DataError(f"target_size {target_size} too small; minimum is {minimum}")

    words = {w: list(_word_symbols(w)) for w in word_counts}
    tokens = list(SPECIAL_TOKENS)
    alphabet = sorted({s for syms in words.values() for s in syms})
    tokens += alphabet
    seen = set(tokens)

    while len(tokens) < target_size:
        pairs = Counter()
        for w, syms in words.items():
            c = word_counts[w]
            for a, b in zip(syms, syms[1:]):
                pairs[a, b] += c
        if not pairs:
            break
        best = max(pairs.items(), key=lambda kv: (kv[1], kv[0]))[0]
        merged = _merge_symbols(*best)
        for w, syms in words.items():
            if len(syms) < 2:
                continue
            out, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[w] = out
        if merged not in seen:
            seen.add(merged)
            tokens.append(merged)
    return Vocab(tokens)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    length: int  # non-pad prefix length; [SEP] sits at length - 1

    @property
    def pad_mask(self) -> np.ndarray:
        """True at [PAD] positions."""
        return np.arange(len(self.ids)) >= self.length


def wordpiece(word: str, vocab: Vocab) -> list[int]:
    """Greedy longest-match split of one word; [UNK] if any span is unmatched."""
    if len(word) > MAX_CHARS_PER_WORD:
        return [vocab.unk_id]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = CONTINUATION + piece
            if piece in vocab.index:
                found = vocab.index[piece]
                break
            end -= 1
        if found is None:
            return [vocab.unk_id]
        pieces.append(found)
        start = end
    return pieces


def tokenize(text: str, vocab: Vocab, max_len: int = 128) -> TokenSequence:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    body = []
    for word in text.split():
        body.extend(wordpiece(word, vocab))
        if len(body) >= max_len - 2:
            break
    body = body[: max_len - 2]
    ids = np.full(max_len, vocab.pad_id, dtype=np.int64)
    ids[0] = vocab.cls_id
    ids[1 : 1 + len(body)] = body
    ids[1 + len(body)] = vocab.sep_id
    return TokenSequence(ids, len(body) + 2)


def tokenize_many(texts: Iterable[str], vocab: Vocab, max_len: int = 128):
    """Stack tokenized texts into an (n, max_len) id array and a length vector."""
    seqs = [tokenize(t, vocab, max_len) for t in texts]
    if not seqs:
        return np.zeros((0, max_len), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.stack([s.ids for s in seqs]), np.array([s.length for s in seqs])
