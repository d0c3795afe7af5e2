"""Narrative normalization: lowercase, strip, stopword removal, stemming.

The stemmer is a small deterministic suffix stripper, not a full
morphological analyzer: its one job is to conflate inflections of the
alcohol cue vocabulary (consuming/consumed/consumes, impaired/impairs,
influence/influenced, ...) onto a single stem.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Optional

from .redact import RedactedNarrative

_PLACEHOLDER_RE = re.compile(r"<[a-z]+>")
_NON_ALPHA_RE = re.compile(r"[^a-z]+")


def load_stopwords(path=None) -> frozenset:
    """Stopword set; defaults to the versioned list shipped with the package."""
    if path is None:
        raw = resources.files("aimaudit.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as handle:
            raw = handle.read()
    return frozenset(word.strip() for word in raw.splitlines() if word.strip())


def stem(word: str) -> str:
    """Suffix-stripping stem of a lowercase word.

    Rules, applied in order (first hit wins), each requiring the stem to
    keep a minimum length: -ies -> -y, -ing, -ed, -es, -s (but not -ss);
    afterwards a trailing -e is always dropped.  So consuming, consumed,
    consumes and consume all map to "consum"; influence and influenced
    both map to "influenc".
    """
    if word.endswith("ies") and len(word) >= 5:
        word = word[:-3] + "y"
    elif word.endswith("ing") and len(word) >= 6:
        word = word[:-3]
    elif word.endswith("ed") and len(word) >= 5:
        word = word[:-2]
    elif word.endswith("es") and len(word) >= 5:
        word = word[:-2]
    elif word.endswith("s") and not word.endswith("ss") and len(word) >= 4:
        word = word[:-1]
    if word.endswith("e") and len(word) >= 4:
        word = word[:-1]
    return word


@dataclass(frozen=True)
class TokenizedDoc:
    tokens: tuple
    crash_key: Optional[int] = None


def normalize(
    narrative,
    stopwords: Optional[frozenset] = None,
    crash_key: Optional[int] = None,
) -> TokenizedDoc:
    """Turn a (redacted) narrative into lowercase word stems.

    Accepts either a RedactedNarrative or a plain string.  Placeholder
    markers, punctuation, and digits never survive into tokens.
    """
    if isinstance(narrative, RedactedNarrative):
        text = narrative.text
        if crash_key is None:
            crash_key = narrative.crash_key
    else:
        text = narrative or ""
    if stopwords is None:
        stopwords = load_stopwords()

    text = text.lower()
    text = _PLACEHOLDER_RE.sub(" ", text)
    text = _NON_ALPHA_RE.sub(" ", text)
    tokens = []
    for word in text.split():
        if len(word) < 2 or word in stopwords:
            continue
        stemmed = stem(word)
        if len(stemmed) >= 2:
            tokens.append(stemmed)
    return TokenizedDoc(tokens=tuple(tokens), crash_key=crash_key)


def normalize_all(narratives: Iterable, stopwords: Optional[frozenset] = None) -> list:
    if stopwords is None:
        stopwords = load_stopwords()
    return [normalize(n, stopwords) for n in narratives]
