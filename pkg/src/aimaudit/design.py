"""Balanced sampling and dummy coding for the mismatch regression.

Reference levels: vehicle Car, driver age 25-64, light Dark, severity
Fatal, functional class ArterialRoad, speed 25-55, road user None,
gender Female, location Rural, road type Intersection, unprotected No.
Log-AADT enters standardized to mean 0 / sd 1 over the analysis sample.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .audit import MismatchCategory
from .records import (
    Dataset,
    FunctionalClass,
    Gender,
    Light,
    RoadType,
    RoadUser,
    RuralUrban,
    Severity,
    SpeedBand,
    VehicleType,
)


@dataclass(frozen=True)
class BalancedSample:
    """Equal numbers of mismatch and non-mismatch crashes."""

    records: tuple  # CrashRecord
    outcomes: tuple  # 1 = mismatch (AIM), 0 = NonAIM
    seed: int


def balance(labels, ds: Dataset, seed: int) -> BalancedSample:
    """Keep the minority category whole, downsample the majority.

    NotApplicable crashes never enter the regression sample.
    """
    aim_keys = [l.crash_key for l in labels if l.category is MismatchCategory.AIM]
    non_keys = [l.crash_key for l in labels if l.category is MismatchCategory.NON_AIM]
    if not aim_keys or not non_keys:
        raise ValueError(
            f"cannot balance: {len(aim_keys)} mismatch vs {len(non_keys)} non-mismatch crashes"
        )
    target = min(len(aim_keys), len(non_keys))
    rng = random.Random(seed)
    if len(aim_keys) > target:
        aim_keys = sorted(rng.sample(aim_keys, target))
    if len(non_keys) > target:
        non_keys = sorted(rng.sample(non_keys, target))
    chosen = {k: 1 for k in aim_keys}
    chosen.update({k: 0 for k in non_keys})
    records = []
    outcomes = []
    for rec in ds:  # dataset order keeps the sample deterministic
        if rec.crash_key in chosen:
            records.append(rec)
            outcomes.append(chosen[rec.crash_key])
    return BalancedSample(records=tuple(records), outcomes=tuple(outcomes), seed=seed)


def age_band(age_years: int) -> str:
    if age_years >= 65:
        return "65plus"
    if age_years >= 25:
        return "25to64"
    return "15to24"


# (variable name, accessor, ordered non-reference levels, reference level)
_CATEGORICALS = (
    ("VehicleType", lambda r: r.vehicle_type.value,
     [v.value for v in VehicleType if v is not VehicleType.CAR], VehicleType.CAR.value),
    ("DriverAge", lambda r: age_band(r.driver_age_years),
     ["15to24", "65plus"], "25to64"),
    ("Light", lambda r: r.light.value,
     [Light.DAYLIGHT.value, Light.DUSK.value], Light.DARK.value),
    ("Severity", lambda r: r.severity.value,
     [s.value for s in Severity if s is not Severity.FATAL], Severity.FATAL.value),
    ("FunctionalClass", lambda r: r.functional_class.value,
     [f.value for f in FunctionalClass if f is not FunctionalClass.ARTERIAL_ROAD],
     FunctionalClass.ARTERIAL_ROAD.value),
    ("SpeedLimit", lambda r: r.speed_limit_band.value,
     [SpeedBand.UNDER_25.value, SpeedBand.OVER_55.value], SpeedBand.FROM_25_TO_55.value),
    ("RoadUser", lambda r: r.road_user.value,
     [RoadUser.PEDESTRIAN.value, RoadUser.BICYCLIST.value], RoadUser.NONE.value),
    ("Gender", lambda r: r.driver_gender.value,
     [Gender.MALE.value, Gender.UNKNOWN.value], Gender.FEMALE.value),
    ("Location", lambda r: r.rural_urban.value,
     [RuralUrban.URBAN.value], RuralUrban.RURAL.value),
    ("RoadType", lambda r: r.road_type.value,
     [RoadType.NON_INTERSECTION.value], RoadType.INTERSECTION.value),
    ("Unprotected", lambda r: "Yes" if r.unprotected else "No",
     ["Yes"], "No"),
)

INTERCEPT = "(Intercept)"
LOG_AADT = "LogAADT-scaled"


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray  # (n, p) including the leading intercept column
    y: np.ndarray  # 1 = mismatch
    columns: tuple
    county_of_row: tuple
    rejected: tuple  # (crash_key, reason)
    log_aadt_mean: float
    log_aadt_sd: float
    dropped_levels: tuple = ()  # (variable, level, count) merged into reference

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]


def encode(sample: BalancedSample, min_level_count: int = 1) -> DesignMatrix:
    """Dummy-code the balanced sample into a regression design.

    Only levels actually observed get a dummy column, so the matrix never
    carries constant-zero columns; a non-reference level observed on
    every row would make a constant-one column and is an error.  Rows
    with unknown driver age or non-positive AADT are rejected with a
    reason rather than silently dropped.

    Levels with fewer than `min_level_count` observations are merged into
    the reference (and reported in dropped_levels): a near-empty dummy is
    unestimable and invites quasi-separation on small balanced samples.
    """
    usable = []
    outcomes = []
    rejected = []
    for rec, outcome in zip(sample.records, sample.outcomes):
        if rec.driver_age_years is None:
            rejected.append((rec.crash_key, "unknown driver age"))
            continue
        if not (rec.aadt > 0):
            rejected.append((rec.crash_key, f"non-positive aadt {rec.aadt}"))
            continue
        usable.append(rec)
        outcomes.append(outcome)
    if not usable:
        raise ValueError("no usable rows after rejection")

    columns = [INTERCEPT]
    column_values = [np.ones(len(usable))]
    dropped = []
    for name, accessor, levels, reference in _CATEGORICALS:
        observed = [accessor(rec) for rec in usable]
        known = set(levels) | {reference}
        for value in observed:
            if value not in known:
                raise ValueError(f"unseen level {value!r} for variable {name}")
        for level in levels:
            col = np.array([1.0 if value == level else 0.0 for value in observed])
            total = int(col.sum())
            if total == 0:
                continue  # level absent from the sample: no dummy
            if total < min_level_count:
                dropped.append((name, level, total))
                continue
            if total == len(usable):
                raise ValueError(
                    f"variable {name} is constant at level {level!r}; cannot encode"
                )
            columns.append(f"{name}-{level}")
            column_values.append(col)

    log_aadt = np.array([math.log(rec.aadt) for rec in usable])
    mean = float(log_aadt.mean())
    sd = float(log_aadt.std())
    if sd == 0:
        raise ValueError("log AADT is constant; cannot standardize")
    columns.append(LOG_AADT)
    column_values.append((log_aadt - mean) / sd)

    X = np.column_stack(column_values)
    # design invariants: no constant column, no duplicated pair
    for idx in range(1, X.shape[1]):
        if np.all(X[:, idx] == X[0, idx]):
            raise ValueError(f"constant column {columns[idx]}")
    for a in range(X.shape[1]):
        for b in range(a + 1, X.shape[1]):
            if np.array_equal(X[:, a], X[:, b]):
                raise ValueError(f"identical columns {columns[a]} and {columns[b]}")

    return DesignMatrix(
        X=X,
        y=np.array(outcomes, dtype=np.int64),
        columns=tuple(columns),
        county_of_row=tuple(rec.county for rec in usable),
        rejected=tuple(rejected),
        log_aadt_mean=mean,
        log_aadt_sd=sd,
        dropped_levels=tuple(dropped),
    )
