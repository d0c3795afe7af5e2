"""Synthetic crash corpus generator with controllable injected mismatch.

Produces datasets whose narratives carry deterministic ground truth: a
true-alcohol narrative always contains at least one alcohol cue phrase
(influence / consuming / odor / impaired and friends) and a non-alcohol
narrative never does.  The recorded alcohol flag equals the true label
except for a chosen fraction of true-alcohol records flipped to
NonAlcohol.  The same spec always yields byte-identical output.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import random
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from .records import (
    AlcoholFlag,
    CrashRecord,
    Dataset,
    FunctionalClass,
    Gender,
    Light,
    Provenance,
    RoadType,
    RoadUser,
    RuralUrban,
    Severity,
    SpeedBand,
    VehicleType,
    Weather,
)


def _data_lines(name: str) -> list:
    text = resources.files("aimaudit.data").joinpath(name).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def iowa_counties() -> list:
    """The 99 county names used as the default synthetic geography."""
    return _data_lines("iowa_counties.txt")


def given_names() -> list:
    return _data_lines("given_names.txt")


@dataclass(frozen=True)
class SynthSpec:
    n_records: int
    alcohol_prevalence: float = 0.06
    injected_mismatch_rate: float = 0.0
    seed: int = 0
    severity_weights: Optional[dict] = None
    county_weights: Optional[dict] = None
    counties: tuple = field(default_factory=lambda: tuple(iowa_counties()))

    def __post_init__(self):
        if self.n_records < 0:
            raise ValueError("n_records must be non-negative")
        if not 0.0 <= self.alcohol_prevalence <= 1.0:
            raise ValueError("alcohol_prevalence must be in [0, 1]")
        if not 0.0 <= self.injected_mismatch_rate <= 1.0:
            raise ValueError("injected_mismatch_rate must be in [0, 1]")
        if not self.counties:
            raise ValueError("need at least one county")


@dataclass(frozen=True)
class TruthEntry:
    crash_key: int
    true_label: AlcoholFlag
    flipped: bool


_SURNAMES = [
    "Anderson", "Baker", "Brown", "Carlson", "Carter", "Clark", "Davis",
    "Evans", "Fisher", "Garcia", "Hansen", "Harris", "Jackson", "Jensen",
    "Johnson", "Jones", "King", "Larson", "Lewis", "Martin", "Martinez",
    "Meyer", "Miller", "Moore", "Nelson", "Olson", "Peterson", "Roberts",
    "Robinson", "Schmidt", "Schultz", "Smith", "Taylor", "Thompson",
    "Walker", "White", "Williams", "Wilson", "Wright", "Young",
]

_HONORIFICS = ["Mr.", "Mrs.", "Ms.", "Dr.", "Officer", "Deputy", "Trooper", "Sergeant"]

_UNITS = ["Driver 1", "Driver 2", "Unit 1", "Unit 2", "Vehicle 1", "Vehicle 2"]
_DIRECTIONS = ["northbound", "southbound", "eastbound", "westbound"]
_ROADS = [
    "Highway 30", "Highway 20", "Interstate 80", "Interstate 35", "Route 63",
    "Main Street", "First Avenue", "County Road", "Market Street", "Grand Avenue",
    "Lincoln Way", "Center Street", "Park Boulevard", "Ridge Road", "Mill Road",
]
_EVENTS = [
    "struck a deer crossing the roadway",
    "rear ended the vehicle ahead",
    "crossed the center line and sideswiped another vehicle",
    "lost control on the curve and entered the ditch",
    "failed to stop at the posted stop sign",
    "slid on the icy surface and struck the guardrail",
    "backed into a parked vehicle",
    "swerved to avoid debris and left the roadway",
    "collided with a second vehicle at the crossing",
    "drifted onto the shoulder and overcorrected",
    "struck a utility pole near the driveway",
    "failed to yield while turning left",
    "hydroplaned through the median",
    "clipped a trailer while changing lanes",
]
_CONDITION_SENTENCES = [
    "The roadway was wet from earlier rain.",
    "Snow was blowing across the pavement at the time.",
    "Visibility was reduced by fog near the bridge.",
    "The pavement was dry and the sky was clear.",
    "Traffic was heavy in the construction zone.",
    "The crash occurred near the bottom of a steep grade.",
    "Gravel on the surface contributed to the loss of traction.",
    "The sun glare made the signal difficult to see.",
]
_CLOSING_SENTENCES = [
    "Both vehicles were towed from the scene.",
    "The driver was cited for failure to yield.",
    "Minor damage was noted on the passenger side.",
    "Airbags deployed and the occupants were evaluated at the scene.",
    "The vehicle came to rest facing the wrong direction.",
    "No citations were issued pending further review.",
    "The driver complained of neck pain after the collision.",
    "Damage was estimated by the responding officer.",
    "The roadway was closed briefly while the scene was cleared.",
    "The second vehicle sustained heavy front end damage.",
]

# Every true-alcohol narrative carries at least one of these; the stems
# (influenc-, consum-, odor, impair-, intoxicat-, alcohol, sobriety)
# never appear in the non-alcohol sentence pools above.
_ALCOHOL_SENTENCES = [
    "The driver admitted to consuming several beers before the crash.",
    "A strong odor of an alcoholic beverage was noted on the driver.",
    "Driver 1 appeared impaired and failed standardized field sobriety testing.",
    "The driver was operating while under the influence of alcohol.",
    "The driver was visibly intoxicated at the scene.",
    "An open container of alcohol was located inside the vehicle.",
    "The driver smelled of alcohol but no test was administered.",
    "Bloodshot eyes and slurred speech indicated the driver was impaired.",
    "The passenger stated the driver had been consuming drinks all evening.",
    "A preliminary breath test confirmed the driver was under the influence.",
]

_DEFAULT_SEVERITY_WEIGHTS = {
    Severity.PROPERTY_DAMAGE_ONLY: 0.70,
    Severity.POSSIBLE_UNKNOWN: 0.16,
    Severity.MINOR_INJURY: 0.09,
    Severity.MAJOR_INJURY: 0.04,
    Severity.FATAL: 0.01,
}


def _weighted_choice(rng: random.Random, table: dict):
    values = list(table.keys())
    weights = list(table.values())
    return rng.choices(values, weights=weights, k=1)[0]


def round_half_up(x: float) -> int:
    """Deterministic rounding that avoids the banker's-rounding surprise."""
    return int(x + 0.5) if x >= 0 else -int(-x + 0.5)


def _phone(rng: random.Random) -> str:
    return f"{rng.randrange(200, 999)}-555-{rng.randrange(1000, 9999)}"


def _plate(rng: random.Random) -> str:
    letters = "".join(rng.choice("ABCDEFGHJKLMNPRSTUVWXYZ") for _ in range(3))
    return f"{letters} {rng.randrange(1000, 9999)}"


def _pii_sentence(rng: random.Random, names: list) -> str:
    kind = rng.randrange(5)
    if kind == 0:
        person = f"{rng.choice(_HONORIFICS)} {rng.choice(names)} {rng.choice(_SURNAMES)}"
        return f"{person} stated the other vehicle appeared suddenly."
    if kind == 1:
        person = f"{rng.choice(names)} {rng.choice(_SURNAMES)}"
        return f"Witness {person} was contacted at {_phone(rng)}."
    if kind == 2:
        return f"The vehicle displayed plate {_plate(rng)}."
    if kind == 3:
        return f"Report number {rng.randrange(10_000_000, 99_999_999)} was assigned."
    month = rng.randrange(1, 13)
    day = rng.randrange(1, 29)
    year = rng.randrange(2016, 2023)
    return f"The tow was requested on {month:02d}/{day:02d}/{year}."


def _narrative(rng: random.Random, names: list, alcohol: bool) -> str:
    parts = [
        f"{rng.choice(_UNITS)} was traveling {rng.choice(_DIRECTIONS)} on "
        f"{rng.choice(_ROADS)} and {rng.choice(_EVENTS)}."
    ]
    if rng.random() < 0.55:
        parts.append(rng.choice(_CONDITION_SENTENCES))
    if alcohol:
        # officers typically record several impairment observations, so
        # impairment evidence stays prominent even in long narratives
        n_cues = 3 if rng.random() < 0.3 else 2
        parts.extend(rng.sample(_ALCOHOL_SENTENCES, n_cues))
    if rng.random() < 0.35:
        parts.append(_pii_sentence(rng, names))
    if rng.random() < 0.6:
        parts.append(rng.choice(_CLOSING_SENTENCES))
    return " ".join(parts)


def synthesize(spec: SynthSpec) -> tuple:
    """Generate (dataset, truth) deterministically from a SynthSpec.

    truth is a list of TruthEntry (crash_key, true label, flipped?) in
    record order; it backs the ground-truth sidecar used only by tests.
    """
    rng = random.Random(spec.seed)
    names = given_names()
    counties = list(spec.counties)
    county_weights = None
    if spec.county_weights is not None:
        county_weights = [float(spec.county_weights.get(c, 0.0)) for c in counties]
        if sum(county_weights) <= 0:
            raise ValueError("county weights must have positive sum")
    severity_table = dict(_DEFAULT_SEVERITY_WEIGHTS)
    if spec.severity_weights is not None:
        severity_table = {
            Severity(k) if not isinstance(k, Severity) else k: float(v)
            for k, v in spec.severity_weights.items()
        }

    rows = []
    true_alcohol_positions = []
    for i in range(spec.n_records):
        crash_key = 100_000 + i
        alcohol = rng.random() < spec.alcohol_prevalence
        if alcohol:
            true_alcohol_positions.append(i)
        year = rng.randrange(2016, 2023)
        start = dt.date(year, 1, 1)
        crash_date = start + dt.timedelta(days=rng.randrange(365))
        if county_weights is None:
            county = rng.choice(counties)
        else:
            county = rng.choices(counties, weights=county_weights, k=1)[0]
        age = None if rng.random() < 0.03 else rng.randrange(15, 91)
        log_aadt = min(11.7, max(-4.5, rng.gauss(7.0, 1.6)))
        rows.append(
            {
                "crash_key": crash_key,
                "driver_gender": _weighted_choice(
                    rng, {Gender.MALE: 0.53, Gender.FEMALE: 0.44, Gender.UNKNOWN: 0.03}
                ),
                "driver_age_years": age,
                "county": county,
                "weather": _weighted_choice(
                    rng,
                    {
                        Weather.CLEAR: 0.60,
                        Weather.CLOUDY: 0.18,
                        Weather.RAIN: 0.12,
                        Weather.SNOW: 0.07,
                        Weather.FOG_SMOKE_SMOG: 0.02,
                        Weather.SEVERE_WINDS: 0.01,
                    },
                ),
                "light": _weighted_choice(
                    rng, {Light.DAYLIGHT: 0.60, Light.DARK: 0.33, Light.DUSK: 0.07}
                ),
                "road_type": _weighted_choice(
                    rng, {RoadType.INTERSECTION: 0.35, RoadType.NON_INTERSECTION: 0.65}
                ),
                "severity": _weighted_choice(rng, severity_table),
                "crash_year": year,
                "crash_date": crash_date,
                "driver_distracted": rng.random() < 0.20,
                "work_zone": rng.random() < 0.02,
                "speed_limit_band": _weighted_choice(
                    rng,
                    {SpeedBand.UNDER_25: 0.08, SpeedBand.FROM_25_TO_55: 0.72, SpeedBand.OVER_55: 0.20},
                ),
                "alcohol_rel": AlcoholFlag.ALCOHOL if alcohol else AlcoholFlag.NON_ALCOHOL,
                "narration": _narrative(rng, names, alcohol),
                "vehicle_type": _weighted_choice(
                    rng,
                    {
                        VehicleType.CAR: 0.85,
                        VehicleType.HEAVY_TRUCK: 0.05,
                        VehicleType.MOTORCYCLE: 0.04,
                        VehicleType.OTHER_VEHICLE: 0.05,
                        VehicleType.UNKNOWN: 0.01,
                    },
                ),
                "road_user": _weighted_choice(
                    rng,
                    {RoadUser.NONE: 0.96, RoadUser.PEDESTRIAN: 0.025, RoadUser.BICYCLIST: 0.015},
                ),
                "unprotected": rng.random() < 0.10,
                "functional_class": _weighted_choice(
                    rng,
                    {
                        FunctionalClass.MAJOR_ROAD: 0.20,
                        FunctionalClass.ARTERIAL_ROAD: 0.25,
                        FunctionalClass.COLLECTOR_ROAD: 0.20,
                        FunctionalClass.LOCAL_ROAD: 0.35,
                    },
                ),
                "rural_urban": _weighted_choice(
                    rng, {RuralUrban.URBAN: 0.55, RuralUrban.RURAL: 0.45}
                ),
                "aadt": round(math.exp(log_aadt), 3),
            }
        )

    n_flip = round_half_up(spec.injected_mismatch_rate * len(true_alcohol_positions))
    flipped_positions = set(rng.sample(true_alcohol_positions, n_flip)) if n_flip else set()

    records = []
    truth = []
    for i, row in enumerate(rows):
        true_label = row["alcohol_rel"]
        flipped = i in flipped_positions
        if flipped:
            row = dict(row, alcohol_rel=AlcoholFlag.NON_ALCOHOL)
        records.append(CrashRecord(**row))
        truth.append(TruthEntry(row["crash_key"], true_label, flipped))

    provenance = Provenance(sources=(f"synthetic(seed={spec.seed})",))
    return Dataset(records, provenance), truth


def write_truth(truth, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["CRASH_KEY", "TRUE_LABEL", "FLIPPED"])
        for entry in truth:
            writer.writerow(
                [entry.crash_key, entry.true_label.value, "Yes" if entry.flipped else "No"]
            )


def load_truth(path) -> list:
    truth = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            truth.append(
                TruthEntry(
                    int(row["CRASH_KEY"]),
                    AlcoholFlag(row["TRUE_LABEL"]),
                    row["FLIPPED"] == "Yes",
                )
            )
    return truth
