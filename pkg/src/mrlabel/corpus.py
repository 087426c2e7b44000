"""Report records, JSON-lines corpus I/O, class weights and stratified folds."""

from __future__ import annotations

import json
import random
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import DataError, StratificationWarning

BIRADS_CLASSES = (0, 1, 2, 3, 4, 6)
BIOPSY_CLASSES = (0, 1)
LABEL_KINDS = ("biopsy", "birads")


@dataclass(frozen=True)
class Report:
    id: str
    text: str
    biopsy_label: Optional[bool] = None
    birads_label: Optional[int] = None
    misparsed: Optional[bool] = None

    def __post_init__(self):
        if not self.text.strip():
            raise DataError(f"report {self.id!r}: empty text")
        if self.birads_label is not None and self.birads_label not in BIRADS_CLASSES:
            raise DataError(
                f"report {self.id!r}: BI-RADS {self.birads_label!r} not in {BIRADS_CLASSES}"
            )

    def label(self, kind: str) -> Optional[int]:
        """Integer class for ``kind`` ('biopsy' -> 0/1, 'birads' -> score)."""
        if kind == "biopsy":
            return None if self.biopsy_label is None else int(self.biopsy_label)
        if kind == "birads":
            return self.birads_label
        raise ValueError(f"unknown label kind {kind!r}; expected one of {LABEL_KINDS}")

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "biopsy": self.biopsy_label,
            "birads": self.birads_label,
            "misparsed": self.misparsed,
        }


@dataclass(frozen=True)
class Corpus:
    reports: tuple[Report, ...]
    provenance: str = "ingested"
    seed: Optional[int] = None
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "reports", tuple(self.reports))
        if self.provenance not in ("ingested", "synthetic"):
            raise ValueError(f"bad provenance {self.provenance!r}")
        index = {}
        for i, r in enumerate(self.reports):
            if r.id in index:
                raise DataError(f"duplicate report id {r.id!r}")
            index[r.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.reports)

    def __iter__(self):
        return iter(self.reports)

    def __getitem__(self, report_id: str) -> Report:
        return self.reports[self._index[report_id]]

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.reports]

    def labels(self, kind: str) -> list[Optional[int]]:
        return [r.label(kind) for r in self.reports]

    def subset(self, ids: Iterable[str]) -> "Corpus":
        """Reports with the given ids, in corpus order."""
        wanted = set(ids)
        missing = wanted - self._index.keys()
        if missing:
            raise KeyError(f"unknown ids: {sorted(missing)[:5]}")
        return Corpus(
            tuple(r for r in self.reports if r.id in wanted), self.provenance, self.seed
        )

    def slice(self, start: int, stop: Optional[int] = None) -> "Corpus":
        return Corpus(self.reports[start:stop], self.provenance, self.seed)

    def unlabeled(self) -> "Corpus":
        return Corpus(
            tuple(Report(r.id, r.text) for r in self.reports), self.provenance, self.seed
        )


def _parse_record(rec: dict, lineno: int) -> Report:
    if not isinstance(rec, dict):
        raise DataError(f"line {lineno}: expected a JSON object")
    try:
        rid, text = rec["id"], rec["text"]
    except KeyError as exc:
        raise DataError(f"line {lineno}: missing field {exc.args[0]!r}") from None
    if not isinstance(rid, str) or not isinstance(text, str):
        raise DataError(f"line {lineno}: 'id' and 'text' must be strings")
    biopsy = rec.get("biopsy")
    if biopsy is not None and not isinstance(biopsy, bool):
        raise DataError(f"line {lineno}: 'biopsy' must be a boolean")
    birads = rec.get("birads")
    if birads is not None and (isinstance(birads, bool) or not isinstance(birads, int)):
        raise DataError(f"line {lineno}: 'birads' must be an integer")
    if birads is not None and birads not in BIRADS_CLASSES:
        raise DataError(
            f"line {lineno}: BI-RADS class {birads} outside {list(BIRADS_CLASSES)}"
        )
    misparsed = rec.get("misparsed")
    try:
        return Report(rid, text, biopsy, birads, misparsed)
    except DataError as exc:
        raise DataError(f"line {lineno}: {exc}") from None


def load_corpus(path) -> Corpus:
    """Read a JSON-lines corpus. Blank lines are skipped, unknown fields ignored."""
    reports = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            report = _parse_record(rec, lineno)
            if report.id in seen:
                raise DataError(f"line {lineno}: duplicate id {report.id!r}")
            seen.add(report.id)
            reports.append(report)
    return Corpus(tuple(reports))


def dump_corpus(corpus: Corpus) -> str:
    return "".join(
        json.dumps(r.to_record(), ensure_ascii=False) + "\n" for r in corpus.reports
    )


def save_corpus(corpus: Corpus, path) -> None:
    Path(path).write_text(dump_corpus(corpus), encoding="utf-8")


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: tuple[str, ...]
    valid_ids: tuple[str, ...]


def stratified_kfold(
    corpus: Corpus, label_kind: str, k: int = 5, seed: int = 0
) -> list[FoldSplit]:
    """Per-class shuffle, then deal ids round-robin across folds.

    The dealing position carries over between classes so fold sizes also
    differ by at most one. Classes smaller than ``k`` trigger a
    :class:`StratificationWarning`; the split is still returned.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    by_class: dict[int, list[str]] = defaultdict(list)
    for r in corpus.reports:
        y = r.label(label_kind)
        if y is None:
            raise DataError(f"report {r.id!r} has no {label_kind} label")
        by_class[y].append(r.id)
    if len(corpus) < k:
        raise DataError(f"{len(corpus)} labeled reports cannot fill {k} folds")
    small = sorted(c for c, ids in by_class.items() if len(ids) < k)
    if small:
        warnings.warn(
            f"classes {small} have fewer than k={k} members", StratificationWarning
        )
    rng = random.Random(seed)
    assignment: dict[str, int] = {}
    cursor = 0
    for c in sorted(by_class):
        ids = list(by_class[c])
        rng.shuffle(ids)
        for rid in ids:
            assignment[rid] = cursor % k
            cursor += 1
    folds = []
    for f in range(k):
        valid = tuple(rid for rid in corpus.ids if assignment[rid] == f)
        train = tuple(rid for rid in corpus.ids if assignment[rid] != f)
        folds.append(FoldSplit(f, train, valid))
    return folds


def class_weights(labels: Sequence) -> dict:
    """Inverse class frequency, ``w(c) = 1 / count(c)``, unnormalized."""
    if len(labels) == 0:
        raise ValueError("class_weights needs at least one label")
    counts = Counter(labels)
    return {c: 1.0 / n for c, n in sorted(counts.items())}
