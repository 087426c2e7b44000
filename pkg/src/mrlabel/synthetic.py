"""Deterministic synthetic bilingual breast-MRI report generator.

Reports mix two disjoint token inventories: Latin-script English terms and
pseudo-words written in Hebrew letters (stored in logical order, displayed
right-to-left). Every concept has one rendering in each script and each
occurrence picks a script at random, so the text code-switches the way real
reports do. The assessment ("impression") section carries the BI-RADS score
and, for biopsy-positive cases, a recommendation phrase from
:data:`BIOPSY_KEYWORDS`. A misparsed report loses its whole assessment.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

from .corpus import Corpus, Report

HEBREW_LETTERS = "אבגדהוזחטיכלמנסעפצקרשת"
BIRADS_KEYWORD_LATIN = "BI-RADS"
BIRADS_KEYWORD_HEBREW = "ביראדס"

_pseudo_cache: dict[str, str] = {}
_pseudo_taken: set[str] = set()


def pseudo_word(concept: str) -> str:
    """Stable Hebrew-letter rendering of ``concept`` (3-6 letters, unique)."""
    if concept in _pseudo_cache:
        return _pseudo_cache[concept]
    salt = 0
    while True:
        h = hashlib.sha256(f"{concept}/{salt}".encode()).digest()
        n = 3 + h[0] % 4
        word = "".join(HEBREW_LETTERS[b % len(HEBREW_LETTERS)] for b in h[1 : 1 + n])
        if word not in _pseudo_taken and word != BIRADS_KEYWORD_HEBREW:
            break
        salt += 1
    _pseudo_taken.add(word)
    _pseudo_cache[concept] = word
    return word


CLASS_DESCRIPTORS = {
    0: ["motion", "artifact", "limited", "incomplete", "suboptimal", "nondiagnostic",
        "inadequate", "degraded", "misregistration", "extravasation", "blurring",
        "nonuniform-suppression"],
    1: ["unremarkable", "symmetric", "normal", "negative", "homogeneous", "clear",
        "intact", "preserved", "physiologic", "bland", "quiescent", "uniform"],
    2: ["cyst", "fibroadenoma", "intramammary-node", "fat-necrosis", "lipoma",
        "hamartoma", "seroma", "scar", "calcified", "duct-ectasia", "stable",
        "hemangioma"],
    3: ["focus", "oval", "circumscribed", "persistent", "probably-benign",
        "indeterminate", "solitary", "tiny", "smooth", "plateau", "subcentimeter",
        "isolated"],
    4: ["irregular", "spiculated", "heterogeneous", "rim-enhancing", "washout",
        "clustered", "segmental", "non-mass", "distortion", "linear-branching",
        "microlobulated", "suspicious"],
    6: ["known", "carcinoma", "biopsy-proven", "neoadjuvant", "malignancy",
        "residual", "tumor", "treated", "chemotherapy", "invasive", "ductal",
        "metastatic"],
}
# confusable class for descriptor noise
NEIGHBOR = {0: 1, 1: 2, 2: 1, 3: 2, 4: 3, 6: 4}

RECOMMENDATIONS = {
    0: ["additional evaluation recommended", "repeat examination advised"],
    1: ["routine annual screening", "continue routine surveillance"],
    2: ["routine annual screening", "continue routine surveillance"],
    3: ["short interval follow-up", "follow-up MRI advised"],
    6: ["continue oncologic treatment", "oncologic follow-up"],
}
BIOPSY_PHRASES = ["biopsy is recommended", "MRI-guided biopsy is recommended",
                  "recommend tissue biopsy"]


def _hebrew_phrase(phrase: str) -> str:
    return " ".join(pseudo_word(w) for w in phrase.split())


COMPOSITION = ["fatty", "scattered", "heterogeneously-dense", "extremely-dense"]
BACKGROUND = ["minimal", "mild", "moderate", "marked"]
SIDES = ["left", "right"]
QUADRANTS = ["upper outer quadrant", "upper inner quadrant", "lower outer quadrant",
             "lower inner quadrant", "retroareolar region", "axillary tail"]
FUNCTION_WORDS = [f"fn{i}" for i in range(24)]
HEADERS = {"history": "HISTORY:", "findings": "FINDINGS:", "impression": "IMPRESSION:"}
_PLAIN_TERMS = ["comparison", "fibroglandular", "tissue", "background", "enhancement", "mm"]


def _lexicon() -> list[str]:
    words = set(FUNCTION_WORDS) | set(HEADERS.values()) | set(_PLAIN_TERMS)
    words |= set(COMPOSITION) | set(BACKGROUND) | set(SIDES)
    for group in (QUADRANTS, BIOPSY_PHRASES, *RECOMMENDATIONS.values()):
        for phrase in group:
            words.update(phrase.split())
    for pool in CLASS_DESCRIPTORS.values():
        words.update(pool)
    return sorted(words)


# fix the collision-resolution order so renderings never depend on call order
for _concept in _lexicon():
    pseudo_word(_concept)

BIOPSY_KEYWORDS = tuple(BIOPSY_PHRASES) + tuple(_hebrew_phrase(p) for p in BIOPSY_PHRASES)


@dataclass(frozen=True)
class GeneratorConfig:
    n_reports: int = 541
    misparse_rate: float = 0.0
    biopsy_positive_rate: float = 0.266
    seed: int = 0

    def __post_init__(self):
        if self.n_reports < 1:
            raise ValueError("n_reports must be >= 1")
        for name in ("misparse_rate", "biopsy_positive_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def impression_header_forms() -> tuple[str, str]:
    return HEADERS["impression"], pseudo_word(HEADERS["impression"])


def assessment_section(text: str) -> str:
    """The assessment line of a generated report, or '' when truncated."""
    heads = impression_header_forms()
    for line in text.split("\n"):
        if line.split(" ", 1)[0] in heads:
            return line
    return ""


class _Writer:
    def __init__(self, rng: random.Random, english_rate: float = 0.4):
        self.rng = rng
        self.english_rate = english_rate

    def term(self, concept: str) -> str:
        if self.rng.random() < self.english_rate:
            return concept
        return pseudo_word(concept)

    def phrase(self, phrase: str) -> str:
        return phrase if self.rng.random() < 0.5 else _hebrew_phrase(phrase)

    def zipf(self, items):
        weights = [1.0 / (i + 1) for i in range(len(items))]
        return self.rng.choices(items, weights=weights)[0]

    def filler(self, lo: int = 1, hi: int = 2) -> list[str]:
        return [pseudo_word(self.zipf(FUNCTION_WORDS)) for _ in range(self.rng.randint(lo, hi))]

    def header(self, name: str) -> str:
        return HEADERS[name] if self.rng.random() < 0.5 else pseudo_word(HEADERS[name])

    def birads(self, score: int) -> str:
        kw = BIRADS_KEYWORD_LATIN if self.rng.random() < 0.5 else BIRADS_KEYWORD_HEBREW
        return f"{kw} {score}"


def _draw_labels(rng: random.Random, positive_rate: float) -> tuple[bool, int]:
    biopsy = rng.random() < positive_rate
    if biopsy:
        birads = rng.choices([4, 6], weights=[0.85, 0.15])[0]
    else:
        birads = rng.choices([0, 1, 2, 3, 6], weights=[0.10, 0.30, 0.35, 0.15, 0.10])[0]
    return biopsy, birads


def _render(w: _Writer, biopsy: bool, birads: int) -> tuple[list[str], str]:
    rng = w.rng
    lines = []
    if rng.random() < 0.25:
        prior = rng.choice([1, 2, 3])
        date = f"{rng.randint(1, 12):02d}/{rng.randint(2012, 2015)}"
        words = [w.header("history"), *w.filler(), w.term("comparison"), date,
                 *w.filler(1, 1), w.birads(prior), *w.filler(3, 3), "."]
        lines.append(" ".join(words))

    findings = [w.header("findings"), *w.filler(), w.term("fibroglandular"),
                w.term("tissue"), w.term(rng.choice(COMPOSITION)), "."]
    findings += [*w.filler(), w.term("background"), w.term("enhancement"),
                 w.term(rng.choice(BACKGROUND)), "."]
    descriptors = []
    for _ in range(rng.choice([2, 2, 3])):
        cls = birads if rng.random() < 0.85 else NEIGHBOR[birads]
        descriptors.append(w.zipf(CLASS_DESCRIPTORS[cls]))
    if biopsy and birads == 6:
        descriptors.append(w.zipf(CLASS_DESCRIPTORS[4]))
    for d in descriptors:
        sent = [*w.filler(), w.term(d), *w.filler(1, 1), w.term(rng.choice(SIDES))]
        sent += [w.term(t) for t in rng.choice(QUADRANTS).split()]
        if rng.random() < 0.7:
            sent += [str(rng.randint(3, 45)), w.term("mm")]
        findings += [*sent, "."]
    lines.append(" ".join(findings))

    summary = w.term(w.zipf(CLASS_DESCRIPTORS[birads]))
    if biopsy:
        rec = w.phrase(rng.choice(BIOPSY_PHRASES))
    else:
        rec = w.phrase(rng.choice(RECOMMENDATIONS[birads]))
    impression = " ".join([w.header("impression"), *w.filler(1, 1), summary, ".",
                           rec, ".", w.birads(birads), "."])
    return lines, impression


def generate_synthetic_corpus(cfg: GeneratorConfig) -> Corpus:
    """Generate ``cfg.n_reports`` labeled reports; byte-identical per seed."""
    rng = random.Random(cfg.seed)
    w = _Writer(rng)
    reports = []
    for i in range(cfg.n_reports):
        biopsy, birads = _draw_labels(rng, cfg.biopsy_positive_rate)
        lines, impression = _render(w, biopsy, birads)
        misparsed = rng.random() < cfg.misparse_rate
        if not misparsed:
            lines.append(impression)
        reports.append(Report(f"rpt-{i:05d}", "\n".join(lines), biopsy, birads, misparsed))
    return Corpus(tuple(reports), provenance="synthetic", seed=cfg.seed)
