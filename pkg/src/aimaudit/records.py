"""Crash data model: categorical domains, crash records, datasets.

A :class:`CrashRecord` is one fully joined crash row (driver + crash +
narrative attributes).  All categorical fields are closed enumerations;
parsing accepts the common source spellings via alias tables and maps
blank cells to an explicit ``Unknown`` level only where the domain
defines one.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional


class RecordError(ValueError):
    """A single row failed validation; carries the offending field."""

    def __init__(self, field_name: str, value, reason: str):
        self.field_name = field_name
        self.value = value
        self.reason = reason
        super().__init__(f"{field_name}={value!r}: {reason}")


class Gender(str, Enum):
    MALE = "Male"
    FEMALE = "Female"
    UNKNOWN = "Unknown"


class Weather(str, Enum):
    CLEAR = "Clear"
    CLOUDY = "Cloudy"
    RAIN = "Rain"
    SNOW = "Snow"
    FOG_SMOKE_SMOG = "FogSmokeSmog"
    SEVERE_WINDS = "SevereWinds"


class Light(str, Enum):
    DAYLIGHT = "Daylight"
    DARK = "Dark"
    DUSK = "Dusk"


class RoadType(str, Enum):
    INTERSECTION = "Intersection"
    NON_INTERSECTION = "NonIntersection"


class Severity(str, Enum):
    """Five-level KABCO severity scale."""

    PROPERTY_DAMAGE_ONLY = "PropertyDamageOnly"
    POSSIBLE_UNKNOWN = "PossibleUnknown"
    MINOR_INJURY = "MinorInjury"
    MAJOR_INJURY = "MajorInjury"
    FATAL = "Fatal"


class SpeedBand(str, Enum):
    UNDER_25 = "Under25"
    FROM_25_TO_55 = "From25To55"
    OVER_55 = "Over55"


class AlcoholFlag(str, Enum):
    ALCOHOL = "Alcohol"
    NON_ALCOHOL = "NonAlcohol"


class VehicleType(str, Enum):
    CAR = "Car"
    HEAVY_TRUCK = "HeavyTruck"
    MOTORCYCLE = "Motorcycle"
    OTHER_VEHICLE = "OtherVehicle"
    UNKNOWN = "Unknown"


class RoadUser(str, Enum):
    NONE = "None"
    PEDESTRIAN = "Pedestrian"
    BICYCLIST = "Bicyclist"


class Season(str, Enum):
    WINTER = "Winter"
    SPRING = "Spring"
    SUMMER = "Summer"
    FALL = "Fall"


class FunctionalClass(str, Enum):
    MAJOR_ROAD = "MajorRoad"
    ARTERIAL_ROAD = "ArterialRoad"
    COLLECTOR_ROAD = "CollectorRoad"
    LOCAL_ROAD = "LocalRoad"


class RuralUrban(str, Enum):
    URBAN = "Urban"
    RURAL = "Rural"


def season_for_month(month: int) -> Season:
    """Dec-Feb Winter, Mar-May Spring, Jun-Aug Summer, Sep-Nov Fall."""
    if month in (12, 1, 2):
        return Season.WINTER
    if month in (3, 4, 5):
        return Season.SPRING
    if month in (6, 7, 8):
        return Season.SUMMER
    if month in (9, 10, 11):
        return Season.FALL
    raise ValueError(f"month out of range: {month}")


# Source spellings vary across export vintages; normalize through alias
# tables keyed on a lowercased, alphanumeric-only form of the cell.
def _key(text: str) -> str:
    return "".join(ch for ch in text.lower() if ch.isalnum())


def _alias_table(enum_cls, extra: dict) -> dict:
    table = {}
    for member in enum_cls:
        table[_key(member.value)] = member
        table[_key(member.name)] = member
    for raw, member in extra.items():
        table[_key(raw)] = member
    return table


_GENDER_ALIASES = _alias_table(Gender, {"m": Gender.MALE, "f": Gender.FEMALE})
_WEATHER_ALIASES = _alias_table(
    Weather,
    {
        "fog smoke smog": Weather.FOG_SMOKE_SMOG,
        "fog, smoke, smog": Weather.FOG_SMOKE_SMOG,
        "severe winds": Weather.SEVERE_WINDS,
    },
)
_LIGHT_ALIASES = _alias_table(Light, {})
_ROAD_TYPE_ALIASES = _alias_table(RoadType, {"non-intersection": RoadType.NON_INTERSECTION})
_SEVERITY_ALIASES = _alias_table(
    Severity,
    {
        "property damage only": Severity.PROPERTY_DAMAGE_ONLY,
        "possible/unknown": Severity.POSSIBLE_UNKNOWN,
        "possible/unknown injury": Severity.POSSIBLE_UNKNOWN,
        "minor injury": Severity.MINOR_INJURY,
        "major injury": Severity.MAJOR_INJURY,
        "fatal crashes": Severity.FATAL,
    },
)
_SPEED_ALIASES = _alias_table(
    SpeedBand,
    {
        "<25 mph": SpeedBand.UNDER_25,
        "25-55 mph": SpeedBand.FROM_25_TO_55,
        "over 55 mph": SpeedBand.OVER_55,
        ">55 mph": SpeedBand.OVER_55,
    },
)
_ALCOHOL_ALIASES = _alias_table(
    AlcoholFlag,
    {
        "alcohol-related": AlcoholFlag.ALCOHOL,
        "non-alcohol-related": AlcoholFlag.NON_ALCOHOL,
        "non-alcohol": AlcoholFlag.NON_ALCOHOL,
    },
)
_VEHICLE_ALIASES = _alias_table(
    VehicleType,
    {
        "cars": VehicleType.CAR,
        "heavy trucks": VehicleType.HEAVY_TRUCK,
        "heavy_trucks": VehicleType.HEAVY_TRUCK,
        "motorcycles": VehicleType.MOTORCYCLE,
        "other vehicles": VehicleType.OTHER_VEHICLE,
        "other_vehicles": VehicleType.OTHER_VEHICLE,
    },
)
_ROAD_USER_ALIASES = _alias_table(
    RoadUser,
    {"pedestrians": RoadUser.PEDESTRIAN, "bicyclists": RoadUser.BICYCLIST},
)
_FUNCTIONAL_ALIASES = _alias_table(
    FunctionalClass,
    {
        "major roads": FunctionalClass.MAJOR_ROAD,
        "majorroads": FunctionalClass.MAJOR_ROAD,
        "arterial roads": FunctionalClass.ARTERIAL_ROAD,
        "arterialroads": FunctionalClass.ARTERIAL_ROAD,
        "collector roads": FunctionalClass.COLLECTOR_ROAD,
        "collectorroads": FunctionalClass.COLLECTOR_ROAD,
        "local roads": FunctionalClass.LOCAL_ROAD,
        "localroads": FunctionalClass.LOCAL_ROAD,
    },
)
_RURAL_URBAN_ALIASES = _alias_table(RuralUrban, {})

_TRUE_TOKENS = {"yes", "y", "true", "1", "distracted", "driverdistracted", "workzone"}
_FALSE_TOKENS = {"no", "n", "false", "0", "notdistracted", "nonworkzone", "none"}

# Enums whose domain includes an explicit Unknown level; blank cells for
# these map to Unknown, all other blank categorical cells reject the row.
_HAS_UNKNOWN_LEVEL = {Gender, VehicleType}


def parse_enum(enum_cls, raw: str, field_name: str):
    text = (raw or "").strip()
    if not text:
        if enum_cls in _HAS_UNKNOWN_LEVEL:
            return enum_cls.UNKNOWN
        raise RecordError(field_name, raw, "blank value")
    table = _ENUM_ALIAS_TABLES[enum_cls]
    try:
        return table[_key(text)]
    except KeyError:
        raise RecordError(field_name, raw, f"unmappable {enum_cls.__name__} value") from None


_ENUM_ALIAS_TABLES = {
    Gender: _GENDER_ALIASES,
    Weather: _WEATHER_ALIASES,
    Light: _LIGHT_ALIASES,
    RoadType: _ROAD_TYPE_ALIASES,
    Severity: _SEVERITY_ALIASES,
    SpeedBand: _SPEED_ALIASES,
    AlcoholFlag: _ALCOHOL_ALIASES,
    VehicleType: _VEHICLE_ALIASES,
    RoadUser: _ROAD_USER_ALIASES,
    FunctionalClass: _FUNCTIONAL_ALIASES,
    RuralUrban: _RURAL_URBAN_ALIASES,
}


def parse_bool(raw: str, field_name: str) -> bool:
    token = _key(raw or "")
    if token in _TRUE_TOKENS:
        return True
    if token in _FALSE_TOKENS:
        return False
    raise RecordError(field_name, raw, "unmappable boolean value")


@dataclass(frozen=True)
class CrashRecord:
    crash_key: int
    driver_gender: Gender
    driver_age_years: Optional[int]  # None encodes Unknown
    county: str
    weather: Weather
    light: Light
    road_type: RoadType
    severity: Severity
    crash_year: int
    crash_date: dt.date
    driver_distracted: bool
    work_zone: bool
    speed_limit_band: SpeedBand
    alcohol_rel: AlcoholFlag
    narration: str
    vehicle_type: VehicleType
    road_user: RoadUser
    unprotected: bool
    functional_class: FunctionalClass
    rural_urban: RuralUrban
    aadt: float

    @property
    def season(self) -> Season:
        # Derived from the crash date so the date/season invariant holds
        # by construction.
        return season_for_month(self.crash_date.month)

    def __post_init__(self):
        if self.crash_key < 0:
            raise RecordError("crash_key", self.crash_key, "negative key")
        if self.driver_age_years is not None and self.driver_age_years < 0:
            raise RecordError("driver_age_years", self.driver_age_years, "negative age")
        if self.crash_year != self.crash_date.year:
            raise RecordError(
                "crash_year", self.crash_year, f"does not match crash_date {self.crash_date}"
            )
        if not (self.aadt > 0):
            raise RecordError("aadt", self.aadt, "must be positive")


@dataclass(frozen=True)
class Provenance:
    sources: tuple
    ingested_at: str = ""


class Dataset:
    """Immutable ordered collection of validated crash records."""

    def __init__(self, records: Iterable[CrashRecord], provenance: Provenance = Provenance(())):
        self._records = tuple(records)
        self.provenance = provenance
        self._by_key = {}
        for rec in self._records:
            if rec.crash_key in self._by_key:
                raise ValueError(f"duplicate crash_key {rec.crash_key}")
            self._by_key[rec.crash_key] = rec

    @property
    def records(self) -> tuple:
        return self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __contains__(self, crash_key: int) -> bool:
        return crash_key in self._by_key

    def get(self, crash_key: int) -> CrashRecord:
        return self._by_key[crash_key]

    def keys(self):
        return self._by_key.keys()

    def counties(self) -> list:
        return sorted({rec.county for rec in self._records})


# Canonical column names for the single-file dataset artifact.
DATASET_COLUMNS = (
    "CRASH_KEY",
    "DRIVERGEN",
    "DRIVERAGE",
    "COUNTY",
    "WEATHER",
    "LIGHT",
    "ROADTYPE",
    "CSEVERITY",
    "CRASH_YEAR",
    "CRASH_DATE",
    "DRIVERDIST",
    "WZ_RELATED",
    "SPEED_LIMIT",
    "ALCOHOL_REL",
    "VEHICLE_TYPE",
    "ROAD_USER",
    "UNPROTECTED",
    "FUNCTIONAL_CLASS",
    "RURALURBAN",
    "AADT",
    "CRASH_NARRATION",
)


def record_to_row(rec: CrashRecord) -> dict:
    return {
        "CRASH_KEY": str(rec.crash_key),
        "DRIVERGEN": rec.driver_gender.value,
        "DRIVERAGE": "Unknown" if rec.driver_age_years is None else str(rec.driver_age_years),
        "COUNTY": rec.county,
        "WEATHER": rec.weather.value,
        "LIGHT": rec.light.value,
        "ROADTYPE": rec.road_type.value,
        "CSEVERITY": rec.severity.value,
        "CRASH_YEAR": str(rec.crash_year),
        "CRASH_DATE": rec.crash_date.isoformat(),
        "DRIVERDIST": "Yes" if rec.driver_distracted else "No",
        "WZ_RELATED": "Yes" if rec.work_zone else "No",
        "SPEED_LIMIT": rec.speed_limit_band.value,
        "ALCOHOL_REL": rec.alcohol_rel.value,
        "VEHICLE_TYPE": rec.vehicle_type.value,
        "ROAD_USER": rec.road_user.value,
        "UNPROTECTED": "Yes" if rec.unprotected else "No",
        "FUNCTIONAL_CLASS": rec.functional_class.value,
        "RURALURBAN": rec.rural_urban.value,
        "AADT": repr(rec.aadt),
        "CRASH_NARRATION": rec.narration,
    }


def record_from_row(row: dict) -> CrashRecord:
    """Build a validated record from a column->cell mapping.

    Raises RecordError on the first failing field.
    """
    key_raw = (row.get("CRASH_KEY") or "").strip()
    try:
        crash_key = int(key_raw)
    except ValueError:
        raise RecordError("CRASH_KEY", key_raw, "not an integer") from None

    age_raw = (row.get("DRIVERAGE") or "").strip()
    if not age_raw or _key(age_raw) == "unknown":
        age = None
    else:
        try:
            age = int(age_raw)
        except ValueError:
            raise RecordError("DRIVERAGE", age_raw, "not an integer or Unknown") from None
        if age < 0:
            raise RecordError("DRIVERAGE", age_raw, "negative age")

    county = (row.get("COUNTY") or "").strip()
    if not county:
        raise RecordError("COUNTY", row.get("COUNTY"), "blank county")

    date_raw = (row.get("CRASH_DATE") or "").strip()
    try:
        crash_date = dt.date.fromisoformat(date_raw)
    except ValueError:
        raise RecordError("CRASH_DATE", date_raw, "not an ISO date") from None

    year_raw = (row.get("CRASH_YEAR") or "").strip()
    try:
        crash_year = int(year_raw)
    except ValueError:
        raise RecordError("CRASH_YEAR", year_raw, "not an integer") from None

    aadt_raw = (row.get("AADT") or "").strip()
    try:
        aadt = float(aadt_raw)
    except ValueError:
        raise RecordError("AADT", aadt_raw, "not a number") from None
    if not (aadt > 0):
        raise RecordError("AADT", aadt_raw, "must be positive")

    return CrashRecord(
        crash_key=crash_key,
        driver_gender=parse_enum(Gender, row.get("DRIVERGEN", ""), "DRIVERGEN"),
        driver_age_years=age,
        county=county,
        weather=parse_enum(Weather, row.get("WEATHER", ""), "WEATHER"),
        light=parse_enum(Light, row.get("LIGHT", ""), "LIGHT"),
        road_type=parse_enum(RoadType, row.get("ROADTYPE", ""), "ROADTYPE"),
        severity=parse_enum(Severity, row.get("CSEVERITY", ""), "CSEVERITY"),
        crash_year=crash_year,
        crash_date=crash_date,
        driver_distracted=parse_bool(row.get("DRIVERDIST", ""), "DRIVERDIST"),
        work_zone=parse_bool(row.get("WZ_RELATED", ""), "WZ_RELATED"),
        speed_limit_band=parse_enum(SpeedBand, row.get("SPEED_LIMIT", ""), "SPEED_LIMIT"),
        alcohol_rel=parse_enum(AlcoholFlag, row.get("ALCOHOL_REL", ""), "ALCOHOL_REL"),
        narration=row.get("CRASH_NARRATION", ""),
        vehicle_type=parse_enum(VehicleType, row.get("VEHICLE_TYPE", ""), "VEHICLE_TYPE"),
        road_user=parse_enum(RoadUser, row.get("ROAD_USER", ""), "ROAD_USER"),
        unprotected=parse_bool(row.get("UNPROTECTED", ""), "UNPROTECTED"),
        functional_class=parse_enum(
            FunctionalClass, row.get("FUNCTIONAL_CLASS", ""), "FUNCTIONAL_CLASS"
        ),
        rural_urban=parse_enum(RuralUrban, row.get("RURALURBAN", ""), "RURALURBAN"),
        aadt=aadt,
    )
