"""Rule-based PII redaction for crash narratives.

Deterministic regex rules replace phone numbers, plate-like tokens, long
digit runs, dates, and personal names with ``<CATEGORY>`` placeholders.
Names are caught two ways: any capitalized sequence following an
honorific (Officer, Mr., ...) and any known given name (shipped lexicon)
optionally followed by capitalized surname tokens.  Placeholders are
inert under re-redaction, so the operation is idempotent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Optional

NAME = "NAME"
PHONE = "PHONE"
PLATE = "PLATE"
NUMBER = "NUMBER"
DATE = "DATE"

CATEGORIES = (NAME, PHONE, PLATE, NUMBER, DATE)

_HONORIFICS = (
    "Mr\\.", "Mrs\\.", "Ms\\.", "Dr\\.", "Officer", "Deputy", "Trooper",
    "Sergeant", "Sgt\\.",
)


@dataclass(frozen=True)
class Redaction:
    start: int  # span within the original text
    end: int
    category: str
    text: str


@dataclass(frozen=True)
class RedactedNarrative:
    text: str
    redactions: tuple
    crash_key: Optional[int] = None


def _given_name_lexicon() -> list:
    raw = resources.files("aimaudit.data").joinpath("given_names.txt").read_text("utf-8")
    return [line.strip() for line in raw.splitlines() if line.strip()]


def default_rules() -> list:
    """(category, pattern) pairs in match-precedence order."""
    names = "|".join(sorted(_given_name_lexicon(), key=len, reverse=True))
    honorifics = "|".join(_HONORIFICS)
    return [
        (PHONE, r"\(\d{3}\)\s*\d{3}[-. ]\d{4}"),
        (PHONE, r"\b\d{3}[-. ]\d{3}[-. ]\d{4}\b"),
        (DATE, r"\b\d{1,2}/\d{1,2}/\d{2,4}\b"),
        (DATE, r"\b\d{4}-\d{2}-\d{2}\b"),
        (NUMBER, r"\d{7,}"),
        (PLATE, r"\b[A-Z]{2,3}[- ]?\d{3,4}\b"),
        # Honorific keeps its place; only the following capitalized
        # sequence is replaced.
        (NAME, r"(?:%s)\s+(?P<name>[A-Z][a-z]+(?:\s+[A-Z][a-z]+)*)" % honorifics),
        (NAME, r"\b(?:%s)\b(?:\s+[A-Z][a-z]+)*" % names),
    ]


def load_rules(path) -> list:
    """Read a custom rule file: one ``CATEGORY<TAB>pattern`` per line."""
    rules = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                category, pattern = line.split("\t", 1)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected CATEGORY<TAB>pattern") from None
            re.compile(pattern)  # fail fast on bad patterns
            rules.append((category.strip(), pattern))
    return rules


class Redactor:
    """Applies an ordered rule set in a single left-to-right pass."""

    def __init__(self, rules=None):
        self.rules = list(rules) if rules is not None else default_rules()
        parts = []
        for idx, (category, pattern) in enumerate(self.rules):
            parts.append(f"(?P<r{idx}>{pattern})")
        self._pattern = re.compile("|".join(parts)) if parts else None
        self._categories = [category for category, _ in self.rules]

    def redact(self, narrative: str) -> RedactedNarrative:
        if not narrative or self._pattern is None:
            return RedactedNarrative(text=narrative or "", redactions=())

        redactions = []

        def _replace(match: re.Match) -> str:
            rule_idx = next(
                i for i in range(len(self.rules)) if match.group(f"r{i}") is not None
            )
            category = self._categories[rule_idx]
            start, end = match.span()
            placeholder = f"<{category}>"
            groups = match.groupdict()
            if category == NAME and groups.get("name") is not None and match.group("name"):
                # honorific rule: keep the leading title text
                name_start, name_end = match.span("name")
                redactions.append(
                    Redaction(name_start, name_end, category, match.group("name"))
                )
                return narrative[start:name_start] + placeholder
            redactions.append(Redaction(start, end, category, match.group(0)))
            return placeholder

        text = self._pattern.sub(_replace, narrative)
        return RedactedNarrative(text=text, redactions=tuple(redactions))


_DEFAULT_REDACTOR = None


def redact(narrative: str) -> RedactedNarrative:
    """Redact with the default rule set (module-level singleton)."""
    global _DEFAULT_REDACTOR
    if _DEFAULT_REDACTOR is None:
        _DEFAULT_REDACTOR = Redactor()
    return _DEFAULT_REDACTOR.redact(narrative)


def redact_all(narratives: Iterable[str]) -> list:
    redactor = Redactor()
    return [redactor.redact(text) for text in narratives]
