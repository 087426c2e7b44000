"""Strip BI-RADS scores from report text, keeping the bare keyword."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .synthetic import BIRADS_KEYWORD_HEBREW

# keyword variants; each becomes "<variant> [sep] <digit 0-6>" with the digit removed
DEFAULT_KEYWORDS = (
    r"BI[-\s]?RADS",
    BIRADS_KEYWORD_HEBREW,
    r"בי-ראדס",
)
_SCORE = r"(?:\s*[:=\-]\s*|\s+)?[0-6](?![0-9])"


@dataclass(frozen=True)
class MaskRuleSet:
    keywords: tuple[str, ...] = DEFAULT_KEYWORDS

    def __post_init__(self):
        if not self.keywords:
            raise ValueError("rule set needs at least one keyword pattern")
        object.__setattr__(self, "keywords", tuple(self.keywords))

    @property
    def pattern(self) -> re.Pattern:
        alts = "|".join(f"(?:{k})" for k in self.keywords)
        return re.compile(f"(?P<kw>{alts}){_SCORE}", re.IGNORECASE)

    @property
    def keyword_pattern(self) -> re.Pattern:
        return re.compile("|".join(f"(?:{k})" for k in self.keywords), re.IGNORECASE)

    @classmethod
    def from_file(cls, path) -> "MaskRuleSet":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")))


def mask_birads_mentions(text: str, rules: MaskRuleSet | None = None) -> tuple[str, int]:
    """Remove the score after every BI-RADS keyword; returns (text, removals).

    Substitution repeats until nothing matches, so "BI-RADS 4 3" loses both
    digits and the function is idempotent.
    """
    pattern = (rules or MaskRuleSet()).pattern
    total = 0
    while True:
        text, n = pattern.subn(lambda m: m.group("kw"), text)
        if n == 0:
            return text, total
        total += n


def mask_corpus_texts(texts: Sequence[str], rules: MaskRuleSet | None = None) -> list[str]:
    return [mask_birads_mentions(t, rules)[0] for t in texts]
