"""Parsing, validation, and caching of the five raw data families: tract
geometries, crime events, venues, subway (stations + turnstile intervals),
and taxi trips, plus the per-tract census tables.

Loaders run in strict mode by default (malformed row -> DataError with file
and line). Lenient mode skips bad rows and tallies them. build_dataset ties
everything together and precomputes the buffered tract assignment of every
point record.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .geo import (
    GeometryError,
    PlanarPoint,
    PolygonShape,
    TractGeometry,
    assign_points,
)

__all__ = [
    "CRIME_TYPES",
    "DEFAULT_ONTOLOGY",
    "POPULAR_BUCKETS",
    "DataError",
    "LoadStats",
    "EventRecord",
    "VenueRecord",
    "StationRecord",
    "TurnstileInterval",
    "TaxiTrip",
    "CensusRow",
    "RegionDataset",
    "load_tracts",
    "load_events",
    "load_venues",
    "load_stations",
    "load_turnstile",
    "load_taxi",
    "load_census",
    "bucket_taxi",
    "build_dataset",
    "write_cache",
    "load_cache",
    "describe_counts",
]

CRIME_TYPES = (
    "grand_larceny",
    "robbery",
    "burglary",
    "assault",
    "vehicle_larceny",
    "other",
)

DEFAULT_ONTOLOGY = (
    "arts_entertainment",
    "college_university",
    "event",
    "food",
    "nightlife_spot",
    "outdoors_recreation",
    "professional_other",
    "residence",
    "shop_service",
    "travel_transport",
)

# daypart x weekpart flags, in CSV column order
POPULAR_BUCKETS = (
    "wd_morning", "wd_afternoon", "wd_evening", "wd_night",
    "we_morning", "we_afternoon", "we_evening", "we_night",
)

CACHE_FORMAT_VERSION = 1


class DataError(ValueError):
    """Parse or validation failure, carrying the file and row locus."""

    def __init__(self, path, locus, message):
        self.path = str(path)
        self.locus = locus
        super().__init__(f"{path}:{locus}: {message}")


@dataclass
class LoadStats:
    rows_read: int = 0
    kept: int = 0
    dropped_year: int = 0
    skipped_bad: int = 0


@dataclass(frozen=True)
class EventRecord:
    event_id: str
    timestamp: datetime
    location: PlanarPoint
    crime_type: str


@dataclass(frozen=True)
class VenueRecord:
    venue_id: str
    location: PlanarPoint
    category: str | None  # None = explicitly uncategorized
    checkins_total: int
    popular_flags: tuple[bool, ...]  # 8 flags, POPULAR_BUCKETS order


@dataclass(frozen=True)
class StationRecord:
    station_id: str
    location: PlanarPoint


@dataclass(frozen=True)
class TurnstileInterval:
    station_id: str
    interval_start: datetime
    entries: int
    exits: int


@dataclass(frozen=True)
class TaxiTrip:
    pickup_time: datetime
    dropoff_time: datetime
    pickup: PlanarPoint
    dropoff: PlanarPoint
    passengers: int


@dataclass(frozen=True)
class CensusRow:
    tract_id: str
    population: int
    frac_male: float
    frac_black: float
    frac_hispanic: float
    frac_poverty: float
    frac_vacant: float
    frac_rented: float
    frac_stable: float
    race_counts: tuple[int, ...]    # 5 groups
    age_counts: tuple[int, ...]     # 4 groups
    income_counts: tuple[int, ...]  # 3 groups


_CENSUS_FRACTIONS = (
    "frac_male", "frac_black", "frac_hispanic", "frac_poverty",
    "frac_vacant", "frac_rented", "frac_stable",
)
_CENSUS_RACE_COLS = ("race_white", "race_black", "race_hispanic", "race_asian", "race_other")
_CENSUS_AGE_COLS = ("age_under_18", "age_18_34", "age_35_64", "age_65_plus")
_CENSUS_INCOME_COLS = ("income_low", "income_mid", "income_high")

EVENT_COLUMNS = ("event_id", "timestamp", "x", "y", "crime_type")
VENUE_COLUMNS = ("venue_id", "x", "y", "category", "checkins_total") + tuple(
    f"pop_{b}" for b in POPULAR_BUCKETS
)
STATION_COLUMNS = ("station_id", "x", "y")
TURNSTILE_COLUMNS = ("station_id", "interval_start", "entries", "exits")
TAXI_COLUMNS = ("pickup_ts", "dropoff_ts", "pickup_x", "pickup_y", "dropoff_x", "dropoff_y", "passengers")
CENSUS_COLUMNS = ("tract_id", "population") + _CENSUS_FRACTIONS + _CENSUS_RACE_COLS + _CENSUS_AGE_COLS + _CENSUS_INCOME_COLS


def _open_csv(path, expected_columns):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise DataError(path, 1, "missing header row")
    if tuple(header) != tuple(expected_columns):
        fh.close()
        raise DataError(path, 1, f"unexpected header {header!r}; expected {list(expected_columns)!r}")
    return fh, reader


def _parse_rows(path, expected_columns, parse_row, strict, stats):
    """Shared loader loop: strict mode raises on the first bad row, lenient
    mode skips it and tallies."""
    fh, reader = _open_csv(path, expected_columns)
    records = []
    stats = stats if stats is not None else LoadStats()
    with fh:
        for lineno, row in enumerate(reader, start=2):
            stats.rows_read += 1
            if len(row) != len(expected_columns):
                if strict:
                    raise DataError(path, lineno, f"expected {len(expected_columns)} fields, got {len(row)}")
                stats.skipped_bad += 1
                continue
            try:
                rec = parse_row(row)
            except DataError:
                raise
            except (ValueError, KeyError) as exc:
                if strict:
                    raise DataError(path, lineno, str(exc)) from exc
                stats.skipped_bad += 1
                continue
            if rec is None:
                stats.dropped_year += 1
                continue
            records.append(rec)
            stats.kept += 1
    return records


def _parse_ts(text: str) -> datetime:
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is not None:
        raise ValueError(f"timezone-aware timestamp not supported: {text!r}")
    return ts


def load_tracts(path, *, units_per_mile: float = 5280.0, exclude=()) -> list[TractGeometry]:
    """Load tract polygons from a GeoJSON-style feature collection.

    Each feature needs a Polygon/MultiPolygon geometry and a "tract_id"
    property; "area_sq_mi" is optional and cross-checked against the
    shoelace area when present. Duplicate ids and invalid rings are rejected
    with the offending feature named.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(path, exc.lineno, f"invalid JSON: {exc.msg}") from exc
    if doc.get("type") != "FeatureCollection" or "features" not in doc:
        raise DataError(path, 0, "expected a FeatureCollection with a 'features' list")
    exclude = set(exclude)
    tracts: list[TractGeometry] = []
    seen: set[str] = set()
    for i, feature in enumerate(doc["features"]):
        locus = f"feature[{i}]"
        props = feature.get("properties") or {}
        tract_id = props.get("tract_id")
        if not tract_id:
            raise DataError(path, locus, "missing 'tract_id' property")
        tract_id = str(tract_id)
        if tract_id in seen:
            raise DataError(path, locus, f"duplicate tract_id {tract_id!r}")
        seen.add(tract_id)
        if tract_id in exclude:
            continue
        geom = feature.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            polys = [geom.get("coordinates")]
        elif gtype == "MultiPolygon":
            polys = list(geom.get("coordinates") or [])
        else:
            raise DataError(path, locus, f"unsupported geometry type {gtype!r}")
        try:
            shapes = [PolygonShape(rings[0], rings[1:]) for rings in polys]
            area = props.get("area_sq_mi")
            tracts.append(TractGeometry(tract_id, shapes, area_sq_mi=area, units_per_mile=units_per_mile))
        except GeometryError as exc:
            raise DataError(path, locus, f"tract {tract_id}: {exc}") from exc
    return tracts


def load_events(path, years, *, strict: bool = True, stats: LoadStats | None = None) -> list[EventRecord]:
    """Load crime events; rows outside `years` are dropped (tallied in
    stats). Unknown crime types fall back to the closed-enum value "other"."""
    years = set(int(y) for y in years)

    def parse(row):
        event_id, ts_text, x, y, ctype = row
        ts = _parse_ts(ts_text)
        if ts.year not in years:
            return None
        if ctype not in CRIME_TYPES:
            ctype = "other"
        return EventRecord(event_id, ts, PlanarPoint(float(x), float(y)), ctype)

    return _parse_rows(path, EVENT_COLUMNS, parse, strict, stats)


def load_venues(path, *, ontology=DEFAULT_ONTOLOGY, strict: bool = True,
                stats: LoadStats | None = None) -> list[VenueRecord]:
    """Load the venue snapshot. An empty category field means explicitly
    uncategorized; any other value must be in the ontology."""
    known = set(ontology)

    def parse(row):
        venue_id, x, y, category, checkins = row[:5]
        flags = row[5:]
        if category == "":
            cat = None
        elif category in known:
            cat = category
        else:
            raise ValueError(f"unknown venue category {category!r}")
        n = int(checkins)
        if n < 0:
            raise ValueError(f"negative checkins_total {n}")
        parsed_flags = []
        for f in flags:
            if f not in ("0", "1"):
                raise ValueError(f"popular flag must be 0 or 1, got {f!r}")
            parsed_flags.append(f == "1")
        return VenueRecord(venue_id, PlanarPoint(float(x), float(y)), cat, n, tuple(parsed_flags))

    return _parse_rows(path, VENUE_COLUMNS, parse, strict, stats)


def load_stations(path, *, strict: bool = True, stats: LoadStats | None = None) -> list[StationRecord]:
    seen: set[str] = set()

    def parse(row):
        station_id, x, y = row
        if station_id in seen:
            raise ValueError(f"duplicate station_id {station_id!r}")
        seen.add(station_id)
        return StationRecord(station_id, PlanarPoint(float(x), float(y)))

    return _parse_rows(path, STATION_COLUMNS, parse, strict, stats)


def load_turnstile(path, years, *, strict: bool = True, stats: LoadStats | None = None) -> list[TurnstileInterval]:
    """Load pre-differenced turnstile interval counts (cumulative-counter
    cleaning is upstream of this tool). Negative counts are rejected."""
    years = set(int(y) for y in years)

    def parse(row):
        station_id, ts_text, entries, exits = row
        ts = _parse_ts(ts_text)
        if ts.year not in years:
            return None
        e, x = int(entries), int(exits)
        if e < 0 or x < 0:
            raise ValueError(f"negative interval count (entries={e}, exits={x})")
        return TurnstileInterval(station_id, ts, e, x)

    return _parse_rows(path, TURNSTILE_COLUMNS, parse, strict, stats)


def load_taxi(path, years, *, strict: bool = True, stats: LoadStats | None = None) -> list[TaxiTrip]:
    """Load taxi trips; a trip is kept when either endpoint's year is in
    range (pickups and drop-offs aggregate independently by their own
    timestamps)."""
    years = set(int(y) for y in years)

    def parse(row):
        pu_text, do_text, px, py, dx, dy, pax = row
        pu = _parse_ts(pu_text)
        do = _parse_ts(do_text)
        if do < pu:
            raise ValueError("dropoff_time before pickup_time")
        n = int(pax)
        if n < 1:
            raise ValueError(f"passengers must be >= 1, got {n}")
        if pu.year not in years and do.year not in years:
            return None
        return TaxiTrip(pu, do, PlanarPoint(float(px), float(py)), PlanarPoint(float(dx), float(dy)), n)

    return _parse_rows(path, TAXI_COLUMNS, parse, strict, stats)


def bucket_taxi(trips, years) -> dict[int, list[TaxiTrip]]:
    """Assign each trip to exactly one storage bucket: the pickup year when
    it is in range, else the dropoff year. Aggregations always filter by the
    relevant endpoint's own timestamp, so bucketing is storage only."""
    years = set(int(y) for y in years)
    out: dict[int, list[TaxiTrip]] = {int(y): [] for y in years}
    for t in trips:
        y = t.pickup_time.year if t.pickup_time.year in years else t.dropoff_time.year
        if y in out:
            out[y].append(t)
    return out


def load_census(path, *, strict: bool = True, stats: LoadStats | None = None) -> dict[str, CensusRow]:
    """Load one census vintage keyed by tract_id. Fractions outside [0, 1]
    are rejected; group counts exceeding the population are tolerated with a
    warning (survey tables routinely disagree at the margin)."""
    import warnings

    rows: dict[str, CensusRow] = {}

    def parse(row):
        vals = dict(zip(CENSUS_COLUMNS, row))
        tract_id = vals["tract_id"]
        if tract_id in rows:
            raise ValueError(f"duplicate tract_id {tract_id!r}")
        population = int(vals["population"])
        if population < 0:
            raise ValueError("negative population")
        fracs = {}
        for name in _CENSUS_FRACTIONS:
            v = float(vals[name])
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
            fracs[name] = v
        race = tuple(int(vals[c]) for c in _CENSUS_RACE_COLS)
        age = tuple(int(vals[c]) for c in _CENSUS_AGE_COLS)
        income = tuple(int(vals[c]) for c in _CENSUS_INCOME_COLS)
        for group, counts in (("race", race), ("age", age), ("income", income)):
            if any(c < 0 for c in counts):
                raise ValueError(f"negative {group} count")
            if population and sum(counts) > population:
                warnings.warn(
                    f"tract {tract_id}: {group} counts sum to {sum(counts)} > population {population}",
                    stacklevel=2,
                )
        rec = CensusRow(tract_id, population, race_counts=race, age_counts=age,
                        income_counts=income, **fracs)
        rows[tract_id] = rec
        return rec

    _parse_rows(path, CENSUS_COLUMNS, parse, strict, stats)
    return rows


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

@dataclass
class DatasetSummary:
    """Exactly reproducible aggregates: per-tract counts, descriptive stats,
    and the multi-assignment accounting."""

    counts: dict  # counts[year][crime_type_or_total] -> np.ndarray aligned with tracts
    stats: dict   # stats[year][crime_type_or_total] -> {min, q1, median, mean, q3, max}
    total_events: dict          # year -> number of loaded events
    assigned_events: dict       # year -> events with at least one tract
    extra_assignments: dict     # year -> sum over events of (len(assignment) - 1)


def describe_counts(values) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {k: 0.0 for k in ("min", "q1", "median", "mean", "q3", "max")}
    q1, med, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    return {
        "min": float(arr.min()),
        "q1": float(q1),
        "median": float(med),
        "mean": float(arr.mean()),
        "q3": float(q3),
        "max": float(arr.max()),
    }


@dataclass
class RegionDataset:
    """The canonical per-region dataset: all sources plus the precomputed
    buffered tract assignment of every point record. Immutable by convention
    after build_dataset; safe for shared concurrent reads."""

    tracts: list[TractGeometry]
    census: dict[str, dict[str, CensusRow]]      # vintage -> tract_id -> row
    vintage_of_year: dict[int, str]
    events: dict[int, list[EventRecord]]
    venues: list[VenueRecord]
    stations: list[StationRecord]
    turnstile: dict[int, list[TurnstileInterval]]
    taxi: dict[int, list[TaxiTrip]]
    buffer: float
    ontology: tuple[str, ...]
    event_tracts: dict[int, list[tuple[str, ...]]]
    venue_tracts: list[tuple[str, ...]]
    station_tracts: list[tuple[str, ...]]
    pickup_tracts: dict[int, list[tuple[str, ...]]]
    dropoff_tracts: dict[int, list[tuple[str, ...]]]
    summary: DatasetSummary = field(repr=False, default=None)

    @property
    def years(self) -> list[int]:
        return sorted(self.events)

    @property
    def tract_ids(self) -> list[str]:
        return [t.tract_id for t in self.tracts]

    def tract_index(self) -> dict[str, int]:
        return {t.tract_id: i for i, t in enumerate(self.tracts)}

    def counts(self, year: int, crime_type: str = "total") -> np.ndarray:
        return self.summary.counts[year][crime_type]

    def census_for_year(self, year: int) -> dict[str, CensusRow]:
        vintage = self.vintage_of_year[int(year)]
        return self.census[vintage]

    def iter_taxi(self):
        """Every trip with its pickup/dropoff assignments, across buckets."""
        for y in sorted(self.taxi):
            yield from zip(self.taxi[y], self.pickup_tracts[y], self.dropoff_tracts[y])

    def iter_turnstile(self):
        """Every turnstile interval with its station's assignment."""
        station_assign = dict(zip((s.station_id for s in self.stations), self.station_tracts))
        for y in sorted(self.turnstile):
            for row in self.turnstile[y]:
                yield row, station_assign[row.station_id]


def _points_array(locations) -> np.ndarray:
    return np.array([(p.x, p.y) for p in locations], dtype=np.float64).reshape(-1, 2)


def build_dataset(tracts, census, vintage_of_year, events, venues, stations,
                  turnstile, taxi, *, buffer: float = 50.0,
                  ontology=DEFAULT_ONTOLOGY) -> RegionDataset:
    """Assemble a RegionDataset: canonical ordering, tract assignment of
    every point record, and the per-tract count summary.

    Border points are counted in every buffered tract they fall in; a tract
    with no events keeps an explicit zero count.
    """
    tracts = sorted(tracts, key=lambda t: t.tract_id)
    if not tracts:
        raise ValueError("at least one tract is required")
    ids = [t.tract_id for t in tracts]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate tract ids")
    index_of = {tid: i for i, tid in enumerate(ids)}

    vintage_of_year = {int(y): str(v) for y, v in vintage_of_year.items()}
    # census must cover every year that carries targets/features (event years);
    # flow sources may hold spill-over buckets without census backing
    for y in sorted(events):
        vintage = vintage_of_year.get(y)
        if vintage is None or vintage not in census:
            raise ValueError(f"no census vintage configured for year {y}")
        missing = [tid for tid in ids if tid not in census[vintage]]
        if missing:
            raise ValueError(
                f"census vintage {vintage!r} missing {len(missing)} tract(s), first: {missing[0]!r}"
            )

    events = {int(y): sorted(v, key=lambda e: (e.timestamp, e.event_id)) for y, v in events.items()}
    venues = sorted(venues, key=lambda v: v.venue_id)
    stations = sorted(stations, key=lambda s: s.station_id)
    turnstile = {int(y): sorted(v, key=lambda t: (t.station_id, t.interval_start))
                 for y, v in turnstile.items()}
    taxi = {int(y): sorted(v, key=lambda t: (t.pickup_time, t.dropoff_time,
                                             t.pickup.x, t.pickup.y, t.dropoff.x, t.dropoff.y, t.passengers))
            for y, v in taxi.items()}

    known_stations = {s.station_id for s in stations}
    for y, rows in turnstile.items():
        for row in rows:
            if row.station_id not in known_stations:
                raise ValueError(f"turnstile row references unknown station {row.station_id!r}")

    event_tracts = {y: assign_points(_points_array([e.location for e in v]), tracts, buffer)
                    for y, v in events.items()}
    venue_tracts = assign_points(_points_array([v.location for v in venues]), tracts, buffer)
    station_tracts = assign_points(_points_array([s.location for s in stations]), tracts, buffer)
    pickup_tracts = {y: assign_points(_points_array([t.pickup for t in v]), tracts, buffer)
                     for y, v in taxi.items()}
    dropoff_tracts = {y: assign_points(_points_array([t.dropoff for t in v]), tracts, buffer)
                      for y, v in taxi.items()}

    counts: dict = {}
    stats: dict = {}
    total_events: dict = {}
    assigned_events: dict = {}
    extra_assignments: dict = {}
    for y in sorted(events):
        per_type = {ct: np.zeros(len(tracts), dtype=np.int64) for ct in CRIME_TYPES}
        total = np.zeros(len(tracts), dtype=np.int64)
        n_assigned = 0
        n_extra = 0
        for rec, assigned in zip(events[y], event_tracts[y]):
            if assigned:
                n_assigned += 1
                n_extra += len(assigned) - 1
            for tid in assigned:
                i = index_of[tid]
                per_type[rec.crime_type][i] += 1
                total[i] += 1
        counts[y] = {"total": total, **per_type}
        stats[y] = {name: describe_counts(arr) for name, arr in counts[y].items()}
        total_events[y] = len(events[y])
        assigned_events[y] = n_assigned
        extra_assignments[y] = n_extra

    summary = DatasetSummary(counts=counts, stats=stats, total_events=total_events,
                             assigned_events=assigned_events, extra_assignments=extra_assignments)
    return RegionDataset(
        tracts=tracts, census={k: dict(v) for k, v in census.items()},
        vintage_of_year=vintage_of_year, events=events, venues=venues,
        stations=stations, turnstile=turnstile, taxi=taxi, buffer=float(buffer),
        ontology=tuple(ontology), event_tracts=event_tracts, venue_tracts=venue_tracts,
        station_tracts=station_tracts, pickup_tracts=pickup_tracts,
        dropoff_tracts=dropoff_tracts, summary=summary,
    )


# ---------------------------------------------------------------------------
# Canonical cache: normalized CSV/GeoJSON files plus a manifest. Writing the
# same dataset twice produces byte-identical files.
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _ts(dt: datetime) -> str:
    return dt.isoformat(sep="T")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def tracts_to_geojson(tracts) -> dict:
    feats = []
    for t in sorted(tracts, key=lambda t: t.tract_id):
        if len(t.shapes) == 1:
            s = t.shapes[0]
            geometry = {
                "type": "Polygon",
                "coordinates": [s.outer.tolist()] + [h.tolist() for h in s.holes],
            }
        else:
            geometry = {
                "type": "MultiPolygon",
                "coordinates": [
                    [s.outer.tolist()] + [h.tolist() for h in s.holes] for s in t.shapes
                ],
            }
        feats.append({
            "type": "Feature",
            "properties": {"tract_id": t.tract_id, "area_sq_mi": t.area_sq_mi},
            "geometry": geometry,
        })
    return {"type": "FeatureCollection", "features": feats}


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_cache(dataset: RegionDataset, cache_dir) -> dict:
    """Write the canonical cache directory and return its manifest."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)

    (cache_dir / "tracts.geojson").write_text(
        json.dumps(tracts_to_geojson(dataset.tracts), sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )
    _write_csv(cache_dir / "events.csv", EVENT_COLUMNS,
               ((e.event_id, _ts(e.timestamp), e.location.x, e.location.y, e.crime_type)
                for y in sorted(dataset.events) for e in dataset.events[y]))
    _write_csv(cache_dir / "venues.csv", VENUE_COLUMNS,
               ((v.venue_id, v.location.x, v.location.y,
                 v.category if v.category is not None else "",
                 v.checkins_total, *(int(f) for f in v.popular_flags))
                for v in dataset.venues))
    _write_csv(cache_dir / "stations.csv", STATION_COLUMNS,
               ((s.station_id, s.location.x, s.location.y) for s in dataset.stations))
    _write_csv(cache_dir / "turnstile.csv", TURNSTILE_COLUMNS,
               ((t.station_id, _ts(t.interval_start), t.entries, t.exits)
                for y in sorted(dataset.turnstile) for t in dataset.turnstile[y]))
    _write_csv(cache_dir / "taxi.csv", TAXI_COLUMNS,
               ((_ts(t.pickup_time), _ts(t.dropoff_time), t.pickup.x, t.pickup.y,
                 t.dropoff.x, t.dropoff.y, t.passengers)
                for y in sorted(dataset.taxi) for t in dataset.taxi[y]))
    for vintage, table in sorted(dataset.census.items()):
        _write_csv(cache_dir / f"census_{vintage}.csv", CENSUS_COLUMNS,
                   ((r.tract_id, r.population,
                     r.frac_male, r.frac_black, r.frac_hispanic, r.frac_poverty,
                     r.frac_vacant, r.frac_rented, r.frac_stable,
                     *r.race_counts, *r.age_counts, *r.income_counts)
                    for _, r in sorted(table.items())))

    # only the canonical data files belong in the manifest; sidecars like
    # provenance records are written after and tracked separately
    files = sorted(p.name for p in cache_dir.iterdir()
                   if p.is_file() and p.name != "manifest.json"
                   and not p.name.endswith(".provenance.json")
                   and p.name != "truth.json")
    manifest = {
        "format_version": CACHE_FORMAT_VERSION,
        "buffer": dataset.buffer,
        "ontology": list(dataset.ontology),
        "years": dataset.years,
        "vintage_of_year": {str(y): v for y, v in sorted(dataset.vintage_of_year.items())},
        "files": {name: _sha256_file(cache_dir / name) for name in files},
    }
    (cache_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return manifest


def load_cache(cache_dir) -> RegionDataset:
    """Reload a canonical cache through the standard loaders (assignments
    are recomputed deterministically)."""
    cache_dir = Path(cache_dir)
    manifest_path = cache_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(cache_dir, "manifest.json", "cache manifest not found")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != CACHE_FORMAT_VERSION:
        raise DataError(manifest_path, 0, f"unsupported cache format {manifest.get('format_version')!r}")
    for name, digest in manifest["files"].items():
        actual = _sha256_file(cache_dir / name)
        if actual != digest:
            raise DataError(cache_dir / name, 0, "cache file hash mismatch; rebuild the cache")

    years = [int(y) for y in manifest["years"]]
    ontology = tuple(manifest["ontology"])
    tracts = load_tracts(cache_dir / "tracts.geojson")
    all_events = load_events(cache_dir / "events.csv", years)
    venues = load_venues(cache_dir / "venues.csv", ontology=ontology)
    stations = load_stations(cache_dir / "stations.csv")
    all_turnstile = load_turnstile(cache_dir / "turnstile.csv", years)
    all_taxi = load_taxi(cache_dir / "taxi.csv", years)
    census = {}
    for name in manifest["files"]:
        if name.startswith("census_") and name.endswith(".csv"):
            census[name[len("census_"):-len(".csv")]] = load_census(cache_dir / name)
    vintage_of_year = {int(y): v for y, v in manifest["vintage_of_year"].items()}
    return build_dataset(
        tracts, census, vintage_of_year,
        events={y: [e for e in all_events if e.timestamp.year == y] for y in years},
        venues=venues, stations=stations,
        turnstile={y: [t for t in all_turnstile if t.interval_start.year == y] for y in years},
        taxi=bucket_taxi(all_taxi, years),
        buffer=float(manifest["buffer"]), ontology=ontology,
    )
