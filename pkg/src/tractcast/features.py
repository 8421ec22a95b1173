"""Per-tract, per-year feature computation and matrix assembly.

Three tiers of features are produced:
  census          - area/population controls, demographic fractions, and
                    three diversity indices (race, age, income)
  spatial         - venue counts/fractions per category, venue diversity,
                    per-category offering advantage, subway station count
  spatiotemporal  - checkin counts/fractions/diversity, two local activity
                    quotients, popular-hours venue counts, subway and taxi
                    weekly-flow averages plus their diversity indices

Conventions baked in here (and mirrored by the synthetic oracle):
  * Category-based venue statistics count only venues with an assigned
    category; checkin and popular-hours totals include uncategorized venues.
  * Diversity indices use the +1-smoothed shares p_c = (1+n_c)/(1+total),
    which do not sum to one and may push the index slightly above 1. The
    "laplace" mode switches to proper (n_c+1)/(total+|C|) shares.
  * Flow averages are means per calendar day within the Mon-Fri / Sat-Sun
    bucket over the whole year, which stays well defined for partial years.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .ingest import DEFAULT_ONTOLOGY, POPULAR_BUCKETS, CensusRow, RegionDataset
from .geo import TractGeometry

__all__ = [
    "diversity_index",
    "offering_advantage",
    "local_quotients",
    "census_features",
    "venue_features",
    "checkin_features",
    "popular_hours_features",
    "subway_flow_features",
    "taxi_flow_features",
    "build_registry",
    "build_matrix",
    "FeatureMatrix",
    "TractActivity",
    "CityTotals",
    "aggregate_activity",
    "weekpart_day_counts",
    "SUBSETS",
]

SUBSETS = ("census", "census_poi", "human_dynamics", "full",
           "census_fs", "census_subway", "census_taxi")

DIVERSITY_MODES = ("smoothed", "laplace")


def diversity_index(counts, n_categories: int | None = None, mode: str = "smoothed") -> float:
    """Normalized Shannon diversity over category counts.

    Default mode uses the +1-smoothed shares p_c = (1+n_c)/(1+total); note
    these shares do not sum to one, so the index is 0 for an all-zero count
    vector and can slightly exceed 1 for uniform counts. "laplace" uses the
    proper add-one shares (n_c+1)/(total+k).
    """
    counts = list(counts)
    k = len(counts) if n_categories is None else int(n_categories)
    if k < 2:
        raise ValueError("diversity_index needs at least 2 categories")
    if len(counts) != k:
        raise ValueError(f"expected {k} counts, got {len(counts)}")
    if any(c < 0 for c in counts):
        raise ValueError("counts must be nonnegative")
    total = float(sum(counts))
    acc = 0.0
    if mode == "smoothed":
        for c in counts:
            p = (1.0 + c) / (1.0 + total)
            acc -= p * math.log(p)
    elif mode == "laplace":
        for c in counts:
            p = (c + 1.0) / (total + k)
            acc -= p * math.log(p)
    else:
        raise ValueError(f"unknown diversity mode {mode!r}")
    return acc / math.log(k)


def offering_advantage(v_c: float, v_total: float, city_total_venues: float,
                       city_category_total: float, smoothed: bool = True) -> float:
    """How over-represented a venue category is in a tract relative to the
    average neighborhood. Defined as 0 when the category is absent citywide.
    `smoothed=False` drops the +1 terms (test switch for the exact
    scale-invariance property)."""
    if min(v_c, v_total, city_total_venues, city_category_total) < 0:
        raise ValueError("counts must be nonnegative")
    if city_category_total == 0:
        return 0.0
    if smoothed:
        share = (1.0 + v_c) / (1.0 + v_total)
    else:
        if v_total == 0:
            return 0.0
        share = v_c / v_total
    return share * (city_total_venues / city_category_total)


def local_quotients(checkins: float, venues: float, population: float,
                    city_checkins: float, city_venues: float,
                    city_population: float) -> tuple[float, float]:
    """Concentration of check-in activity relative to the tract's venues and
    to its resident population; values far above 1 mark digital hotspots."""
    if min(checkins, venues, population) < 0:
        raise ValueError("counts must be nonnegative")
    if city_checkins <= 0 or city_venues <= 0 or city_population <= 0:
        raise ValueError("city totals must be positive")
    base = (1.0 + checkins) / city_checkins
    q_venues = base * (city_venues / (1.0 + venues))
    q_population = base * (city_population / (1.0 + population))
    return q_venues, q_population


# ---------------------------------------------------------------------------
# Calendar helpers
# ---------------------------------------------------------------------------

def weekpart_day_counts(year: int) -> tuple[int, int]:
    """Number of Mon-Fri and Sat-Sun calendar days in a year."""
    d = date(year, 1, 1)
    weekdays = 0
    days = 0
    while d.year == year:
        days += 1
        if d.weekday() < 5:
            weekdays += 1
        d += timedelta(days=1)
    return weekdays, days - weekdays


# ---------------------------------------------------------------------------
# Per-tract aggregates
# ---------------------------------------------------------------------------

@dataclass
class TractActivity:
    """Raw activity aggregates for one tract and one year."""

    tract_id: str
    venue_counts: np.ndarray       # per ontology category (categorized venues only)
    checkin_counts: np.ndarray     # per category
    checkins_all: int              # all venues, uncategorized included
    popular_counts: np.ndarray     # 8 buckets, POPULAR_BUCKETS order
    n_stations: int
    subway_totals: np.ndarray      # [wd_entries, wd_exits, we_entries, we_exits]
    taxi_totals: np.ndarray        # [wd_pickups, wd_dropoffs, we_pickups, we_dropoffs]


@dataclass
class CityTotals:
    """Region-wide denominators, computed once from the full region."""

    venues: int                 # venues with an assigned category
    checkins: int               # checkins across all venues
    population: int             # census population summed over tracts
    category_totals: np.ndarray  # per category, summed over tract assignments
    weekday_days: int
    weekend_days: int


def aggregate_activity(dataset: RegionDataset, year: int) -> tuple[list[TractActivity], CityTotals]:
    year = int(year)
    ontology = dataset.ontology
    cat_index = {c: i for i, c in enumerate(ontology)}
    k = len(ontology)
    ids = dataset.tract_ids
    idx = {tid: i for i, tid in enumerate(ids)}
    n = len(ids)

    venue_counts = np.zeros((n, k), dtype=np.int64)
    checkin_counts = np.zeros((n, k), dtype=np.int64)
    checkins_all = np.zeros(n, dtype=np.int64)
    popular = np.zeros((n, 8), dtype=np.int64)
    for venue, assigned in zip(dataset.venues, dataset.venue_tracts):
        ci = cat_index.get(venue.category) if venue.category is not None else None
        for tid in assigned:
            i = idx[tid]
            checkins_all[i] += venue.checkins_total
            for b, flag in enumerate(venue.popular_flags):
                if flag:
                    popular[i, b] += 1
            if ci is not None:
                venue_counts[i, ci] += 1
                checkin_counts[i, ci] += venue.checkins_total

    n_stations = np.zeros(n, dtype=np.int64)
    for assigned in dataset.station_tracts:
        for tid in assigned:
            n_stations[idx[tid]] += 1

    subway = np.zeros((n, 4), dtype=np.int64)
    for row, assigned in dataset.iter_turnstile():
        if row.interval_start.year != year:
            continue
        off = 0 if row.interval_start.weekday() < 5 else 2
        for tid in assigned:
            i = idx[tid]
            subway[i, off] += row.entries
            subway[i, off + 1] += row.exits

    taxi = np.zeros((n, 4), dtype=np.int64)
    for trip, pk_assigned, do_assigned in dataset.iter_taxi():
        if trip.pickup_time.year == year:
            col = 0 if trip.pickup_time.weekday() < 5 else 2
            for tid in pk_assigned:
                taxi[idx[tid], col] += trip.passengers
        if trip.dropoff_time.year == year:
            col = 1 if trip.dropoff_time.weekday() < 5 else 3
            for tid in do_assigned:
                taxi[idx[tid], col] += trip.passengers

    activities = [
        TractActivity(
            tract_id=ids[i],
            venue_counts=venue_counts[i],
            checkin_counts=checkin_counts[i],
            checkins_all=int(checkins_all[i]),
            popular_counts=popular[i],
            n_stations=int(n_stations[i]),
            subway_totals=subway[i],
            taxi_totals=taxi[i],
        )
        for i in range(n)
    ]

    census = dataset.census_for_year(year)
    wd, we = weekpart_day_counts(year)
    totals = CityTotals(
        venues=int(sum(1 for v in dataset.venues if v.category is not None)),
        checkins=int(sum(v.checkins_total for v in dataset.venues)),
        population=int(sum(census[tid].population for tid in ids)),
        category_totals=venue_counts.sum(axis=0),
        weekday_days=wd,
        weekend_days=we,
    )
    return activities, totals


# ---------------------------------------------------------------------------
# Feature groups. Each returns an ordered {name: value} dict.
# ---------------------------------------------------------------------------

def census_features(row: CensusRow, tract: TractGeometry, *, include_race: bool = True,
                    mode: str = "smoothed") -> dict[str, float]:
    out = {
        "area": float(tract.area_sq_mi),
        "population": float(row.population),
        "frac_male": row.frac_male,
    }
    if include_race:
        out["frac_black"] = row.frac_black
        out["frac_hispanic"] = row.frac_hispanic
    out["frac_poverty"] = row.frac_poverty
    out["frac_vacant"] = row.frac_vacant
    out["frac_rented"] = row.frac_rented
    out["frac_stable"] = row.frac_stable
    if include_race:
        out["race_diversity"] = diversity_index(row.race_counts, 5, mode)
    out["age_diversity"] = diversity_index(row.age_counts, 4, mode)
    out["income_diversity"] = diversity_index(row.income_counts, 3, mode)
    return out


def venue_features(venue_counts, n_stations: int, ontology, city: CityTotals,
                   mode: str = "smoothed") -> dict[str, float]:
    """Spatial tier: per-category counts, smoothed fractions, diversity,
    offering advantage, and the subway station count. Only categorized
    venues enter the counts and the tract total."""
    counts = np.asarray(venue_counts)
    v_total = int(counts.sum())
    out: dict[str, float] = {}
    for c, name in enumerate(ontology):
        out[f"venues_{name}"] = float(counts[c])
    for c, name in enumerate(ontology):
        out[f"venue_frac_{name}"] = (1.0 + counts[c]) / (1.0 + v_total)
    out["venue_diversity"] = diversity_index(counts.tolist(), len(ontology), mode)
    for c, name in enumerate(ontology):
        out[f"offering_adv_{name}"] = offering_advantage(
            int(counts[c]), v_total, city.venues, int(city.category_totals[c])
        )
    out["subway_stations"] = float(n_stations)
    return out


def checkin_features(checkin_counts, checkins_all: int, venue_total: int, population: int,
                     ontology, city: CityTotals, mode: str = "smoothed") -> dict[str, float]:
    """Spatio-temporal tier, check-in block: per-category sums, smoothed
    fractions, diversity, and the two local quotients.

    `checkins_all` and the fraction denominator include uncategorized
    venues' checkins; `venue_total` is the tract's categorized venue count
    (the same quantity the city venue total counts). Quotients fall back to
    0 when a city-wide denominator is zero (empty region)."""
    counts = np.asarray(checkin_counts)
    out: dict[str, float] = {}
    for c, name in enumerate(ontology):
        out[f"checkins_{name}"] = float(counts[c])
    for c, name in enumerate(ontology):
        out[f"checkin_frac_{name}"] = (1.0 + counts[c]) / (1.0 + checkins_all)
    out["checkin_diversity"] = diversity_index(counts.tolist(), len(ontology), mode)
    if city.checkins > 0 and city.venues > 0 and city.population > 0:
        q_v, q_p = local_quotients(checkins_all, venue_total, population,
                                   city.checkins, city.venues, city.population)
        out["quotient_venues"] = q_v
        out["quotient_population"] = q_p
    else:
        out["quotient_venues"] = 0.0
        out["quotient_population"] = 0.0
    return out


def popular_hours_features(popular_counts) -> dict[str, float]:
    counts = np.asarray(popular_counts)
    return {f"popular_{b}": float(counts[i]) for i, b in enumerate(POPULAR_BUCKETS)}


def subway_flow_features(subway_totals, weekday_days: int, weekend_days: int,
                         mode: str = "smoothed") -> dict[str, float]:
    """Mean daily entries/exits split by weekpart, plus a diversity index
    over the four yearly totals. A tract with no stations reports zeros."""
    t = np.asarray(subway_totals, dtype=np.float64)
    return {
        "subway_wd_entries": t[0] / weekday_days,
        "subway_wd_exits": t[1] / weekday_days,
        "subway_we_entries": t[2] / weekend_days,
        "subway_we_exits": t[3] / weekend_days,
        "subway_diversity": diversity_index([int(v) for v in subway_totals], 4, mode),
    }


def taxi_flow_features(taxi_totals, weekday_days: int, weekend_days: int,
                       mode: str = "smoothed") -> dict[str, float]:
    """Mean daily picked-up / dropped-off passengers split by weekpart, plus
    a diversity index over the four yearly passenger totals."""
    t = np.asarray(taxi_totals, dtype=np.float64)
    return {
        "taxi_wd_pickups": t[0] / weekday_days,
        "taxi_wd_dropoffs": t[1] / weekday_days,
        "taxi_we_pickups": t[2] / weekend_days,
        "taxi_we_dropoffs": t[3] / weekend_days,
        "taxi_diversity": diversity_index([int(v) for v in taxi_totals], 4, mode),
    }


# ---------------------------------------------------------------------------
# Registry and matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSpec:
    name: str
    tier: str    # census | spatial | spatiotemporal
    source: str  # census | fs | subway | taxi


def build_registry(ontology=DEFAULT_ONTOLOGY, include_race: bool = True) -> list[FeatureSpec]:
    """The ordered feature registry; column order of every matrix."""
    reg: list[FeatureSpec] = []

    def add(name, tier, source):
        reg.append(FeatureSpec(name, tier, source))

    add("area", "census", "census")
    add("population", "census", "census")
    add("frac_male", "census", "census")
    if include_race:
        add("frac_black", "census", "census")
        add("frac_hispanic", "census", "census")
    for name in ("frac_poverty", "frac_vacant", "frac_rented", "frac_stable"):
        add(name, "census", "census")
    if include_race:
        add("race_diversity", "census", "census")
    add("age_diversity", "census", "census")
    add("income_diversity", "census", "census")

    for c in ontology:
        add(f"venues_{c}", "spatial", "fs")
    for c in ontology:
        add(f"venue_frac_{c}", "spatial", "fs")
    add("venue_diversity", "spatial", "fs")
    for c in ontology:
        add(f"offering_adv_{c}", "spatial", "fs")
    add("subway_stations", "spatial", "subway")

    for c in ontology:
        add(f"checkins_{c}", "spatiotemporal", "fs")
    for c in ontology:
        add(f"checkin_frac_{c}", "spatiotemporal", "fs")
    add("checkin_diversity", "spatiotemporal", "fs")
    add("quotient_venues", "spatiotemporal", "fs")
    add("quotient_population", "spatiotemporal", "fs")
    for b in POPULAR_BUCKETS:
        add(f"popular_{b}", "spatiotemporal", "fs")
    for name in ("subway_wd_entries", "subway_wd_exits", "subway_we_entries",
                 "subway_we_exits", "subway_diversity"):
        add(name, "spatiotemporal", "subway")
    for name in ("taxi_wd_pickups", "taxi_wd_dropoffs", "taxi_we_pickups",
                 "taxi_we_dropoffs", "taxi_diversity"):
        add(name, "spatiotemporal", "taxi")
    return reg


def _subset_mask(registry: list[FeatureSpec], subset: str) -> np.ndarray:
    if subset not in SUBSETS:
        raise ValueError(f"unknown subset {subset!r}; expected one of {SUBSETS}")
    mask = np.zeros(len(registry), dtype=bool)
    for i, spec in enumerate(registry):
        if subset == "full":
            keep = True
        elif subset == "census":
            keep = spec.tier == "census"
        elif subset == "census_poi":
            keep = spec.tier == "census" or spec.name.startswith("venues_")
        elif subset == "human_dynamics":
            keep = spec.tier != "census"
        elif subset == "census_fs":
            keep = spec.tier == "census" or spec.source == "fs"
        elif subset == "census_subway":
            keep = spec.tier == "census" or spec.source == "subway"
        else:  # census_taxi
            keep = spec.tier == "census" or spec.source == "taxi"
        mask[i] = keep
    return mask


@dataclass
class FeatureMatrix:
    """A named feature matrix: stable column order, one row per tract."""

    year: int
    subset: str
    registry: tuple[FeatureSpec, ...]
    tract_ids: tuple[str, ...]
    values: np.ndarray  # (n_tracts, n_features) float64

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(spec.name for spec in self.registry)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select(self, subset: str) -> "FeatureMatrix":
        mask = _subset_mask(list(self.registry), subset)
        return FeatureMatrix(
            year=self.year, subset=subset,
            registry=tuple(s for s, m in zip(self.registry, mask) if m),
            tract_ids=self.tract_ids, values=self.values[:, mask],
        )

    def write_csv(self, path, manifest_extra: dict | None = None) -> None:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("tract_id",) + self.names)
            for tid, row in zip(self.tract_ids, self.values):
                w.writerow([tid] + [repr(float(v)) for v in row])
        sidecar = {
            "year": self.year,
            "subset": self.subset,
            "registry": [
                {"name": s.name, "tier": s.tier, "source": s.source} for s in self.registry
            ],
        }
        if manifest_extra:
            sidecar.update(manifest_extra)
        Path(str(path) + ".manifest.json").write_text(
            json.dumps(sidecar, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )


def build_matrix(dataset: RegionDataset, year: int, subset: str = "full", *,
                 include_race: bool = True, diversity_mode: str = "smoothed") -> FeatureMatrix:
    """Compute the full feature matrix for a year, then select the subset.

    Deterministic and column-order stable: tracts in id order, columns in
    registry order. Every cell is finite for any valid dataset, including
    tracts with zero population, venues, or flows.
    """
    year = int(year)
    if diversity_mode not in DIVERSITY_MODES:
        raise ValueError(f"unknown diversity mode {diversity_mode!r}")
    ontology = dataset.ontology
    registry = build_registry(ontology, include_race=include_race)
    activities, city = aggregate_activity(dataset, year)
    census = dataset.census_for_year(year)

    rows = []
    for tract, act in zip(dataset.tracts, activities):
        feats: dict[str, float] = {}
        feats.update(census_features(census[tract.tract_id], tract,
                                     include_race=include_race, mode=diversity_mode))
        feats.update(venue_features(act.venue_counts, act.n_stations, ontology, city,
                                    mode=diversity_mode))
        feats.update(checkin_features(act.checkin_counts, act.checkins_all,
                                      int(act.venue_counts.sum()),
                                      census[tract.tract_id].population,
                                      ontology, city, mode=diversity_mode))
        feats.update(popular_hours_features(act.popular_counts))
        feats.update(subway_flow_features(act.subway_totals, city.weekday_days,
                                          city.weekend_days, mode=diversity_mode))
        feats.update(taxi_flow_features(act.taxi_totals, city.weekday_days,
                                        city.weekend_days, mode=diversity_mode))
        rows.append([feats[s.name] for s in registry])

    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(registry))
    if not np.all(np.isfinite(values)):
        bad = registry[int(np.argwhere(~np.isfinite(values))[0][1])].name
        raise AssertionError(f"non-finite feature value in column {bad!r}")
    full = FeatureMatrix(year=year, subset="full", registry=tuple(registry),
                         tract_ids=tuple(dataset.tract_ids), values=values)
    return full if subset == "full" else full.select(subset)
