"""Alcohol-involvement mismatch audit.

A crash predicted Alcoholic but recorded NonAlcohol is a mismatch (AIM);
predicted Alcoholic and recorded Alcohol is NonAIM; crashes predicted
NonAlcoholic are out of scope (NotApplicable) and never enter any
denominator.  Rates aggregate overall and by year, severity, and county,
with empty strata reported as explicitly undefined, never as zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .classifier import PredictionSet, _is_positive
from .records import AlcoholFlag, Dataset


class MismatchCategory(str, Enum):
    AIM = "AIM"
    NON_AIM = "NonAIM"
    NOT_APPLICABLE = "NotApplicable"


@dataclass(frozen=True)
class MismatchLabel:
    crash_key: int
    category: MismatchCategory


def categorize(preds: PredictionSet, ds: Dataset) -> list:
    """One MismatchLabel per prediction; unknown keys are an error."""
    labels = []
    for key, pred in preds:
        if key not in ds:
            raise KeyError(f"prediction for crash_key {key} has no dataset record")
        if not _is_positive(pred.label):
            category = MismatchCategory.NOT_APPLICABLE
        elif ds.get(key).alcohol_rel is AlcoholFlag.NON_ALCOHOL:
            category = MismatchCategory.AIM
        else:
            category = MismatchCategory.NON_AIM
        labels.append(MismatchLabel(key, category))
    return labels


@dataclass(frozen=True)
class StratumCounts:
    aim: int = 0
    nonaim: int = 0

    @property
    def denominator(self) -> int:
        return self.aim + self.nonaim

    @property
    def aim_pct(self):
        """Percent of mismatches among predicted-alcoholic crashes.

        None when the stratum has no predicted-alcoholic crashes at all
        (undefined, deliberately not zero).
        """
        if self.denominator == 0:
            return None
        return 100.0 * self.aim / self.denominator

    def add(self, category: MismatchCategory) -> "StratumCounts":
        if category is MismatchCategory.AIM:
            return StratumCounts(self.aim + 1, self.nonaim)
        if category is MismatchCategory.NON_AIM:
            return StratumCounts(self.aim, self.nonaim + 1)
        return self


@dataclass(frozen=True)
class AimReport:
    overall: StratumCounts
    by_year: dict
    by_severity: dict
    by_county: dict
    county_universe: tuple
    n_not_applicable: int

    def to_dict(self) -> dict:
        def block(counts: StratumCounts) -> dict:
            return {"aim": counts.aim, "nonaim": counts.nonaim, "aim_pct": counts.aim_pct}

        return {
            "overall": block(self.overall),
            "not_applicable": self.n_not_applicable,
            "by_year": {str(k): block(v) for k, v in sorted(self.by_year.items())},
            "by_severity": {k.value: block(v) for k, v in self.by_severity.items()},
            "by_county": {k: block(v) for k, v in sorted(self.by_county.items())},
            "county_universe": list(self.county_universe),
        }

    def write(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def aggregate(labels, ds: Dataset) -> AimReport:
    """Roll mismatch labels up into overall and stratified counts."""
    overall = StratumCounts()
    by_year: dict = {}
    by_severity: dict = {}
    by_county: dict = {}
    n_na = 0
    for label in labels:
        rec = ds.get(label.crash_key)
        if label.category is MismatchCategory.NOT_APPLICABLE:
            n_na += 1
            continue
        overall = overall.add(label.category)
        by_year[rec.crash_year] = by_year.get(rec.crash_year, StratumCounts()).add(label.category)
        by_severity[rec.severity] = by_severity.get(rec.severity, StratumCounts()).add(
            label.category
        )
        by_county[rec.county] = by_county.get(rec.county, StratumCounts()).add(label.category)
    return AimReport(
        overall=overall,
        by_year=by_year,
        by_severity=by_severity,
        by_county=by_county,
        county_universe=tuple(ds.counties()),
        n_not_applicable=n_na,
    )


def county_rates(report: AimReport):
    """Defined per-county AIM rates as fractions, plus the excluded list.

    Counties with no predicted-alcoholic crash have an undefined rate and
    are returned separately so spatial statistics never see made-up
    zeros.
    """
    rates = {}
    excluded = []
    for county in report.county_universe:
        counts = report.by_county.get(county)
        if counts is None or counts.denominator == 0:
            excluded.append(county)
        else:
            rates[county] = counts.aim / counts.denominator
    return rates, excluded


def write_labels(labels, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["CRASH_KEY", "MISMATCH_CATEGORY"])
        for label in labels:
            writer.writerow([label.crash_key, label.category.value])


def read_labels(path) -> list:
    labels = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            labels.append(
                MismatchLabel(int(row["CRASH_KEY"]), MismatchCategory(row["MISMATCH_CATEGORY"]))
            )
    return labels


def recorded_counts_by_severity_year(ds: Dataset) -> list:
    """Rows of recorded alcohol / non-alcohol counts per severity and year."""
    cells: dict = {}
    years = sorted({rec.crash_year for rec in ds})
    for rec in ds:
        slot = cells.setdefault((rec.crash_year, rec.severity), [0, 0])
        if rec.alcohol_rel is AlcoholFlag.ALCOHOL:
            slot[0] += 1
        else:
            slot[1] += 1
    rows = []
    from .records import Severity

    for year in years:
        row = {"year": year}
        total_alc = total_non = 0
        for severity in Severity:
            alc, non = cells.get((year, severity), (0, 0))
            row[f"{severity.value}_alcohol"] = alc
            row[f"{severity.value}_non_alcohol"] = non
            total_alc += alc
            total_non += non
        row["total_alcohol"] = total_alc
        row["total_non_alcohol"] = total_non
        rows.append(row)
    return rows
