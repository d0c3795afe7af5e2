"""Ingest of the three source tables and dataset artifact file I/O.

The driver, crash, and narrative tables are delimited text files sharing
a CRASH_KEY column.  Ingest inner-joins them on that key, validates every
categorical domain, and reports each rejected key with a reason.  The
accepted + rejected counts always add up to the number of distinct keys
seen across the three inputs.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .records import (
    DATASET_COLUMNS,
    Dataset,
    Provenance,
    RecordError,
    record_from_row,
    record_to_row,
)


class IngestError(ValueError):
    """Fatal ingest problem (bad schema, duplicate keys)."""


@dataclass
class IngestReport:
    sources: tuple
    accepted: int = 0
    rejections: list = field(default_factory=list)  # (crash_key, reason) pairs

    @property
    def total(self) -> int:
        return self.accepted + len(self.rejections)

    def to_dict(self) -> dict:
        return {
            "sources": list(self.sources),
            "accepted": self.accepted,
            "rejected": len(self.rejections),
            "total": self.total,
            "rejections": [
                {"crash_key": key, "reason": reason} for key, reason in self.rejections
            ],
        }

    def write(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def _read_table(path, delimiter: str, expect_columns=()) -> dict:
    """Read one delimited table keyed by CRASH_KEY; duplicates are fatal."""
    rows = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle, delimiter=delimiter)
        header = reader.fieldnames or []
        if "CRASH_KEY" not in header:
            raise IngestError(f"{path}: missing CRASH_KEY column")
        for name in expect_columns:
            if name not in header:
                raise IngestError(f"{path}: missing required column {name}")
        for row in reader:
            raw_key = (row.get("CRASH_KEY") or "").strip()
            try:
                key = int(raw_key)
            except ValueError:
                raise IngestError(f"{path}: non-integer CRASH_KEY {raw_key!r}") from None
            if key in rows:
                raise IngestError(f"{path}: duplicate crash_key {key}")
            rows[key] = row
    return rows


def ingest(
    driver_table,
    crash_table,
    narrative_table,
    delimiter: str = ",",
) -> tuple:
    """Join the three source tables into a validated Dataset.

    Returns (dataset, report).  Keys missing a join partner or failing
    domain validation land in the report's rejection list; everything
    else becomes a CrashRecord.  Record order follows the crash table.
    """
    drivers = _read_table(driver_table, delimiter)
    crashes = _read_table(crash_table, delimiter)
    narratives = _read_table(narrative_table, delimiter, expect_columns=("CRASH_NARRATION",))

    report = IngestReport(sources=(str(driver_table), str(crash_table), str(narrative_table)))
    records = []

    # Crash-table order drives output order; stray keys from the side
    # tables are appended afterwards (they can only be rejections).
    ordered_keys = list(crashes)
    crash_keys = set(ordered_keys)
    for side in (drivers, narratives):
        ordered_keys.extend(k for k in side if k not in crash_keys)
        crash_keys.update(side)

    for key in ordered_keys:
        if key not in crashes:
            report.rejections.append((key, "no crash row"))
            continue
        if key not in drivers:
            report.rejections.append((key, "no driver row"))
            continue
        if key not in narratives:
            report.rejections.append((key, "no narrative"))
            continue
        merged = dict(crashes[key])
        merged.update(drivers[key])
        merged.update(narratives[key])
        try:
            records.append(record_from_row(merged))
        except RecordError as err:
            report.rejections.append((key, str(err)))

    report.accepted = len(records)
    provenance = Provenance(
        sources=report.sources, ingested_at=dt.datetime.now(dt.timezone.utc).isoformat()
    )
    return Dataset(records, provenance), report


def save_dataset(ds: Dataset, path) -> None:
    """Write the single-file dataset artifact (deterministic bytes)."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=DATASET_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for rec in ds:
            writer.writerow(record_to_row(rec))


def load_dataset(path, provenance: Optional[Provenance] = None) -> Dataset:
    """Read a dataset artifact back; any invalid row is an error."""
    records = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        missing = [c for c in DATASET_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise IngestError(f"{path}: missing columns {missing}")
        for row in reader:
            records.append(record_from_row(row))
    return Dataset(records, provenance or Provenance(sources=(str(path),)))
