"""Keyword-matching biopsy labeler used as the comparison baseline."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

from .synthetic import BIOPSY_KEYWORDS


def load_keywords(path) -> tuple[str, ...]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return tuple(ln.strip() for ln in lines if ln.strip())


def keyword_biopsy_classifier(report, keywords: Sequence[str] = BIOPSY_KEYWORDS) -> bool:
    """True iff any keyword phrase occurs (case-insensitively) anywhere in the text."""
    if not keywords:
        raise ValueError("keyword list is empty")
    text = getattr(report, "text", report).casefold()
    return any(k.casefold() in text for k in keywords)


def baseline_predictions(reports: Iterable, keywords: Sequence[str] = BIOPSY_KEYWORDS) -> list[int]:
    return [int(keyword_biopsy_classifier(r, keywords)) for r in reports]
