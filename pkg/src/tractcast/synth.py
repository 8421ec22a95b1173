"""Deterministic synthetic-city generator with a known crime-generating
process, plus a naive independently-coded feature oracle.

The generator lays tracts on a jittered grid (shared borders stay shared, so
buffered assignment genuinely multi-assigns border venues), populates census
tables, venues, stations, turnstile intervals and taxi trips, computes the
true feature matrix, and draws crime counts from
    count = max(0, round(expm1(latent + noise)))
where the latent log-count is a linear function of standardized true
features with a configurable census/mobility signal split. Crime events are
placed strictly inside their tract (more than one buffer away from its
boundary), so drawn counts reproduce exactly through the assignment path.

oracle_features recomputes every feature with shapely geometry and plain
loops; it shares nothing with the production aggregation path except the
registry column order, and is the anti-bug property the test suite leans on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np
import shapely

from . import geo
from .features import FeatureMatrix, build_matrix, build_registry
from .ingest import (
    CRIME_TYPES,
    DEFAULT_ONTOLOGY,
    POPULAR_BUCKETS,
    CensusRow,
    EventRecord,
    RegionDataset,
    StationRecord,
    TaxiTrip,
    TurnstileInterval,
    VenueRecord,
    build_dataset,
    write_cache,
)

__all__ = [
    "SynthConfig",
    "SynthCity",
    "generate_city",
    "write_city",
    "oracle_features",
    "latent_r2_ceiling",
]

_DEFAULT_VENUE_INTENSITY = {
    "arts_entertainment": 0.6,
    "college_university": 0.4,
    "event": 0.05,
    "food": 3.0,
    "nightlife_spot": 0.8,
    "outdoors_recreation": 1.0,
    "professional_other": 2.5,
    "residence": 1.5,
    "shop_service": 3.0,
    "travel_transport": 1.0,
}

_DEFAULT_TYPE_SHARES = {
    "grand_larceny": 0.40,
    "robbery": 0.14,
    "burglary": 0.12,
    "assault": 0.18,
    "vehicle_larceny": 0.06,
    "other": 0.10,
}

_DEFAULT_CENSUS_WEIGHTS = {"population": 1.0, "frac_poverty": 0.6}
_DEFAULT_MOBILITY_WEIGHTS = {
    "venues_shop_service": 1.0,
    "checkins_food": 0.7,
    "taxi_wd_pickups": 0.6,
}


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_tracts: int = 400
    cell_size: float = 2000.0          # feet
    jitter: float = 0.15               # node displacement, fraction of cell
    buffer: float = 50.0
    years: tuple[int, ...] = (2014, 2015)
    venue_intensity: dict = field(default_factory=lambda: dict(_DEFAULT_VENUE_INTENSITY))
    uncategorized_intensity: float = 0.8
    border_venue_rate: float = 0.25    # per tract: a venue pinned on a shared edge
    checkin_mean: float = 40.0
    popular_rate: float = 0.18
    station_rate: float = 0.12
    subway_daily_mean: float = 600.0
    weekend_subway_factor: float = 0.55
    taxi_per_tract: float = 30.0       # mean trips per tract per year
    population_mean_log: float = 8.1
    population_sd_log: float = 0.6
    zero_pop_rate: float = 0.05
    activity_sd: float = 0.7           # lognormal sd of the tract activity level
    base_log_count: float = 3.6
    signal_sd: float = 0.85
    noise_sd: float = 0.55
    ambient_share: float = 0.6         # fraction of signal variance from mobility
    census_weights: dict = field(default_factory=lambda: dict(_DEFAULT_CENSUS_WEIGHTS))
    mobility_weights: dict = field(default_factory=lambda: dict(_DEFAULT_MOBILITY_WEIGHTS))
    type_shares: dict = field(default_factory=lambda: dict(_DEFAULT_TYPE_SHARES))

    def validate(self):
        if self.n_tracts < 25:
            raise ValueError("n_tracts must be >= 25")
        if not 0.0 <= self.ambient_share <= 1.0:
            raise ValueError("ambient_share must be in [0, 1]")
        if not 0.0 <= self.jitter < 0.45:
            raise ValueError("jitter must stay below 0.45 to keep cells simple")
        if len(self.years) != 2 or self.years[1] != self.years[0] + 1:
            raise ValueError("years must be two consecutive calendar years")
        if abs(sum(self.type_shares.values()) - 1.0) > 1e-9:
            raise ValueError("type_shares must sum to 1")
        if set(self.type_shares) != set(CRIME_TYPES):
            raise ValueError(f"type_shares must cover exactly {CRIME_TYPES}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["years"] = list(self.years)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "years" in d:
            d["years"] = tuple(int(y) for y in d["years"])
        return cls(**d).validate()


@dataclass
class SynthCity:
    config: SynthConfig
    dataset: RegionDataset
    matrices: dict            # year -> full FeatureMatrix (the true features)
    latent: dict              # year -> crime_type -> np.ndarray per tract
    latent_total: dict        # year -> np.ndarray per tract
    drawn_counts: dict        # year -> crime_type -> np.ndarray (the sampled truth)


def _sample_in_polygon(rng, poly, shapely_poly, n, min_depth=0.0, max_tries=2000):
    """Uniform points inside a polygon via bbox rejection, optionally at
    least min_depth inside the boundary. Tracts tile the plane, so depth
    beyond the buffer guarantees single assignment."""
    if n == 0:
        return np.empty((0, 2))
    x0, y0, x1, y1 = poly.bbox
    out = np.empty((n, 2))
    have = 0
    tries = 0
    boundary = shapely_poly.boundary
    while have < n:
        tries += 1
        if tries > max_tries:
            # centroid fallback: safely interior for mildly jittered cells
            c = shapely_poly.centroid
            out[have:] = (c.x, c.y)
            break
        batch = max(16, 2 * (n - have))
        pts = np.column_stack([rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)])
        geoms = shapely.points(pts)
        ok = shapely.contains(shapely_poly, geoms)
        if min_depth > 0.0:
            ok &= shapely.distance(geoms, boundary) > min_depth
        good = pts[ok]
        take = min(len(good), n - have)
        out[have:have + take] = good[:take]
        have += take
    return out


def _random_ts(rng, year: int, n: int) -> list[datetime]:
    days = (date(year + 1, 1, 1) - date(year, 1, 1)).days
    d = rng.integers(0, days, n)
    s = rng.integers(0, 86400, n)
    base = datetime(year, 1, 1)
    return [base + timedelta(days=int(di), seconds=int(si)) for di, si in zip(d, s)]


def generate_city(config: SynthConfig) -> SynthCity:
    """Deterministic generation: the same config always yields a
    bit-identical dataset (single RNG stream, fixed draw order)."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n = config.n_tracts
    side = math.isqrt(n - 1) + 1
    cell = config.cell_size

    # jittered lattice nodes; shared corners make shared borders exact
    gx, gy = np.meshgrid(np.arange(side + 1) * cell, np.arange(side + 1) * cell, indexing="ij")
    nodes = np.stack([gx, gy], axis=-1)
    nodes = nodes + rng.uniform(-config.jitter * cell, config.jitter * cell, nodes.shape)

    cells = [(i, j) for i in range(side) for j in range(side)][:n]
    cell_of = {c: t for t, c in enumerate(cells)}
    tracts = []
    shapely_polys = []
    for t, (i, j) in enumerate(cells):
        ring = [
            tuple(nodes[i, j]),
            tuple(nodes[i + 1, j]),
            tuple(nodes[i + 1, j + 1]),
            tuple(nodes[i, j + 1]),
            tuple(nodes[i, j]),
        ]
        shape = geo.PolygonShape(ring)
        tracts.append(geo.TractGeometry(f"T{t:04d}", [shape]))
        shapely_polys.append(shapely.Polygon(ring))
    ids = [t.tract_id for t in tracts]

    activity = np.exp(rng.normal(0.0, config.activity_sd, n))

    # census table (one vintage mapped to both model years)
    population = np.round(np.exp(rng.normal(config.population_mean_log,
                                            config.population_sd_log, n))).astype(np.int64)
    population[rng.random(n) < config.zero_pop_rate] = 0
    fracs = {
        "frac_male": rng.beta(50, 50, n),
        "frac_black": rng.beta(2, 5, n),
        "frac_hispanic": rng.beta(2, 5, n),
        "frac_poverty": rng.beta(2, 6, n),
        "frac_vacant": rng.beta(2, 16, n),
        "frac_rented": rng.beta(4, 3, n),
        "frac_stable": rng.beta(6, 3, n),
    }
    race_p = rng.dirichlet((6, 3, 3, 2, 1), n)
    age_p = rng.dirichlet((4, 5, 7, 3), n)
    income_p = rng.dirichlet((3, 4, 3), n)
    census_rows = {}
    for i, tid in enumerate(ids):
        census_rows[tid] = CensusRow(
            tract_id=tid, population=int(population[i]),
            race_counts=tuple(int(v) for v in rng.multinomial(population[i], race_p[i])),
            age_counts=tuple(int(v) for v in rng.multinomial(population[i], age_p[i])),
            income_counts=tuple(int(v) for v in rng.multinomial(population[i], income_p[i])),
            **{k: float(v[i]) for k, v in fracs.items()},
        )

    # venues: per-tract Poisson per category, plus border venues pinned on
    # shared edges (these must multi-assign under the buffer), plus an
    # uncategorized stream that only counts toward checkin/popular totals
    ontology = DEFAULT_ONTOLOGY
    lam = np.outer(activity, [config.venue_intensity.get(c, 0.0) for c in ontology])
    venue_counts = rng.poisson(lam)
    unc_counts = rng.poisson(config.uncategorized_intensity * activity)
    venues = []

    def _mk_venue(vid, x, y, cat):
        checkins = int(rng.lognormal(math.log(config.checkin_mean), 1.0))
        flags = tuple(bool(f) for f in rng.random(8) < config.popular_rate)
        return VenueRecord(vid, geo.PlanarPoint(float(x), float(y)), cat, checkins, flags)

    seq = 0
    for i in range(n):
        cats = [c for c, k in zip(ontology, venue_counts[i]) for _ in range(int(k))]
        cats += [None] * int(unc_counts[i])
        pts = _sample_in_polygon(rng, tracts[i].shapes[0], shapely_polys[i], len(cats))
        for cat, (x, y) in zip(cats, pts):
            venues.append(_mk_venue(f"V{seq:06d}", x, y, cat))
            seq += 1
    for t, (i, j) in enumerate(cells):
        if rng.random() >= config.border_venue_rate:
            continue
        # pick a shared edge with the right or upper neighbor when present
        neighbors = [c for c in ((i + 1, j), (i, j + 1)) if c in cell_of]
        if not neighbors:
            continue
        ni, nj = neighbors[int(rng.integers(0, len(neighbors)))]
        if (ni, nj) == (i + 1, j):  # shared edge: nodes (i+1,j)-(i+1,j+1)
            a, b = nodes[i + 1, j], nodes[i + 1, j + 1]
        else:                       # shared edge: nodes (i,j+1)-(i+1,j+1)
            a, b = nodes[i, j + 1], nodes[i + 1, j + 1]
        mid = (a + b) / 2.0
        cat = ontology[int(rng.integers(0, len(ontology)))]
        venues.append(_mk_venue(f"V{seq:06d}", mid[0], mid[1], cat))
        seq += 1

    # subway stations and daily turnstile intervals
    stations = []
    for i in range(n):
        if rng.random() < config.station_rate:
            pt = _sample_in_polygon(rng, tracts[i].shapes[0], shapely_polys[i], 1)[0]
            stations.append(StationRecord(f"S{len(stations):03d}",
                                          geo.PlanarPoint(float(pt[0]), float(pt[1]))))
    turnstile: dict[int, list[TurnstileInterval]] = {y: [] for y in config.years}
    for st in stations:
        base = rng.lognormal(math.log(config.subway_daily_mean), 0.8)
        for year in config.years:
            days = (date(year + 1, 1, 1) - date(year, 1, 1)).days
            dts = [datetime(year, 1, 1) + timedelta(days=d) for d in range(days)]
            factor = np.array([1.0 if d.weekday() < 5 else config.weekend_subway_factor
                               for d in dts])
            entries = rng.poisson(base * factor)
            exits = rng.poisson(0.95 * base * factor)
            turnstile[year].extend(
                TurnstileInterval(st.station_id, dt, int(e), int(x))
                for dt, e, x in zip(dts, entries, exits)
            )

    # taxi trips: pickup intensity follows tract activity; dropoff tract is
    # drawn activity-weighted across the city
    taxi: dict[int, list[TaxiTrip]] = {y: [] for y in config.years}
    p_drop = activity / activity.sum()
    year_end = {y: datetime(y, 12, 31, 23, 59, 59) for y in config.years}
    for year in config.years:
        trips_per_tract = rng.poisson(config.taxi_per_tract * activity)
        for i in range(n):
            k = int(trips_per_tract[i])
            if k == 0:
                continue
            pk_pts = _sample_in_polygon(rng, tracts[i].shapes[0], shapely_polys[i], k)
            drop_idx = rng.choice(n, size=k, p=p_drop)
            pk_ts = _random_ts(rng, year, k)
            durations = rng.integers(120, 3600, k)
            passengers = 1 + rng.binomial(5, 0.25, k)
            for j in range(k):
                di = int(drop_idx[j])
                do_pt = _sample_in_polygon(rng, tracts[di].shapes[0], shapely_polys[di], 1)[0]
                do_ts = min(pk_ts[j] + timedelta(seconds=int(durations[j])), year_end[year])
                taxi[year].append(TaxiTrip(
                    pk_ts[j], do_ts,
                    geo.PlanarPoint(float(pk_pts[j][0]), float(pk_pts[j][1])),
                    geo.PlanarPoint(float(do_pt[0]), float(do_pt[1])),
                    int(passengers[j]),
                ))

    census = {"base": census_rows}
    vintage_of_year = {y: "base" for y in config.years}

    # true features from the real pipeline (events are independent of them)
    empty_events = {y: [] for y in config.years}
    pre = build_dataset(tracts, census, vintage_of_year, empty_events, venues,
                        stations, turnstile, taxi, buffer=config.buffer,
                        ontology=ontology)
    matrices = {y: build_matrix(pre, y, "full") for y in config.years}

    # latent log-counts: standardized (first-year moments) linear signal
    base_year = config.years[0]
    names = matrices[base_year].names
    mu = matrices[base_year].values.mean(axis=0)
    sd = matrices[base_year].values.std(axis=0)

    def part(year, weights):
        acc = np.zeros(n)
        for fname, w in sorted(weights.items()):
            j = names.index(fname)
            if sd[j] > 1e-12:
                acc += w * (matrices[year].values[:, j] - mu[j]) / sd[j]
        return acc

    base_census = part(base_year, config.census_weights)
    base_mobility = part(base_year, config.mobility_weights)
    var_c = float(np.var(base_census))
    var_m = float(np.var(base_mobility))
    scale_c = (math.sqrt((1.0 - config.ambient_share) * config.signal_sd**2 / var_c)
               if var_c > 1e-12 else 0.0)
    scale_m = (math.sqrt(config.ambient_share * config.signal_sd**2 / var_m)
               if var_m > 1e-12 else 0.0)

    latent: dict[int, dict[str, np.ndarray]] = {}
    latent_total: dict[int, np.ndarray] = {}
    drawn: dict[int, dict[str, np.ndarray]] = {}
    events: dict[int, list[EventRecord]] = {}
    for year in config.years:
        base_lat = (config.base_log_count
                    + scale_c * part(year, config.census_weights)
                    + scale_m * part(year, config.mobility_weights))
        latent[year] = {}
        drawn[year] = {}
        counts_by_type = {}
        for ct in CRIME_TYPES:
            lat = base_lat + math.log(config.type_shares[ct])
            latent[year][ct] = lat
            eps = rng.normal(0.0, config.noise_sd, n)
            counts_by_type[ct] = np.maximum(0, np.rint(np.expm1(lat + eps))).astype(np.int64)
            drawn[year][ct] = counts_by_type[ct]
        latent_total[year] = np.log1p(
            sum(np.expm1(latent[year][ct]) for ct in CRIME_TYPES)
        )
        # place events strictly interior (depth > buffer): counts reproduce
        # exactly through the assignment path
        evs = []
        seq = 0
        for i in range(n):
            total_i = int(sum(counts_by_type[ct][i] for ct in CRIME_TYPES))
            if total_i == 0:
                continue
            pts = _sample_in_polygon(rng, tracts[i].shapes[0], shapely_polys[i],
                                     total_i, min_depth=config.buffer * 1.01)
            ts = _random_ts(rng, year, total_i)
            pos = 0
            for ct in CRIME_TYPES:
                for _ in range(int(counts_by_type[ct][i])):
                    evs.append(EventRecord(f"E{year}-{seq:06d}", ts[pos],
                                           geo.PlanarPoint(float(pts[pos][0]), float(pts[pos][1])),
                                           ct))
                    seq += 1
                    pos += 1
        events[year] = evs

    dataset = build_dataset(tracts, census, vintage_of_year, events, venues,
                            stations, turnstile, taxi, buffer=config.buffer,
                            ontology=ontology)
    for year in config.years:
        for ct in CRIME_TYPES:
            if not np.array_equal(dataset.counts(year, ct), drawn[year][ct]):
                raise AssertionError(
                    f"synth invariant broken: {year}/{ct} counts diverge from the draw"
                )
    return SynthCity(config=config, dataset=dataset, matrices=matrices,
                     latent=latent, latent_total=latent_total, drawn_counts=drawn)


def write_city(city: SynthCity, out_dir) -> dict:
    """Write the city in the exact ingest formats (the canonical cache
    layout) plus a truth sidecar with the latent log-counts."""
    import json

    out_dir = Path(out_dir)
    manifest = write_cache(city.dataset, out_dir)
    truth = {
        "config": city.config.to_dict(),
        "latent": {
            str(y): {ct: [float(v) for v in arr] for ct, arr in by_type.items()}
            for y, by_type in city.latent.items()
        },
        "latent_total": {
            str(y): [float(v) for v in arr] for y, arr in city.latent_total.items()
        },
    }
    (out_dir / "truth.json").write_text(
        json.dumps(truth, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )
    return manifest


def latent_r2_ceiling(city: SynthCity, year: int, crime_type: str = "total",
                      index=None) -> float:
    """R² of the noise-free latent against the observed transformed counts:
    the score no trained model should beat by more than sampling error."""
    from .evaluation import r2, transform_target

    if crime_type == "total":
        lat = city.latent_total[year]
    else:
        lat = city.latent[year][crime_type]
    y = transform_target(city.dataset.counts(year, crime_type)).y
    if index is not None:
        lat = lat[index]
        y = y[index]
    return r2(y, lat)


# ---------------------------------------------------------------------------
# The independent oracle: shapely geometry + direct formula loops.
# ---------------------------------------------------------------------------

def _oracle_assign(points, polys, buffer):
    """Brute-force buffered assignment: every tract, no index."""
    out = []
    for x, y in points:
        pt = shapely.Point(x, y)
        out.append([i for i, poly in enumerate(polys) if poly.distance(pt) <= buffer])
    return out


def _oracle_diversity(counts, k):
    total = sum(counts)
    acc = 0.0
    for c in counts:
        p = (1.0 + c) / (1.0 + total)
        acc -= p * math.log(p)
    return acc / math.log(k)


def oracle_features(city: SynthCity, year: int) -> FeatureMatrix:
    """Recompute the full feature matrix the slow way: shapely polygons,
    O(points x tracts) assignment scans, dict aggregation, and the printed
    formulas written out longhand. Shares only the registry column order
    with the production path."""
    ds = city.dataset
    cfg = city.config
    ontology = ds.ontology
    k = len(ontology)
    n = len(ds.tracts)
    buffer = ds.buffer
    polys = []
    for t in ds.tracts:
        parts = [shapely.Polygon(s.outer, [h for h in s.holes]) for s in t.shapes]
        polys.append(parts[0] if len(parts) == 1 else shapely.MultiPolygon(parts))

    venue_counts = [[0] * k for _ in range(n)]
    checkin_counts = [[0] * k for _ in range(n)]
    checkins_all = [0] * n
    popular = [[0] * 8 for _ in range(n)]
    cat_pos = {c: i for i, c in enumerate(ontology)}
    v_assign = _oracle_assign([(v.location.x, v.location.y) for v in ds.venues], polys, buffer)
    for v, hit in zip(ds.venues, v_assign):
        for i in hit:
            checkins_all[i] += v.checkins_total
            for b in range(8):
                if v.popular_flags[b]:
                    popular[i][b] += 1
            if v.category is not None:
                venue_counts[i][cat_pos[v.category]] += 1
                checkin_counts[i][cat_pos[v.category]] += v.checkins_total

    s_assign = _oracle_assign([(s.location.x, s.location.y) for s in ds.stations], polys, buffer)
    n_stations = [0] * n
    st_hits = {}
    for s, hit in zip(ds.stations, s_assign):
        st_hits[s.station_id] = hit
        for i in hit:
            n_stations[i] += 1

    subway = [[0] * 4 for _ in range(n)]
    for y_bucket in sorted(ds.turnstile):
        for row in ds.turnstile[y_bucket]:
            if row.interval_start.year != year:
                continue
            off = 0 if row.interval_start.weekday() < 5 else 2
            for i in st_hits[row.station_id]:
                subway[i][off] += row.entries
                subway[i][off + 1] += row.exits

    taxi = [[0] * 4 for _ in range(n)]
    all_trips = [t for yb in sorted(ds.taxi) for t in ds.taxi[yb]]
    pk_assign = _oracle_assign([(t.pickup.x, t.pickup.y) for t in all_trips], polys, buffer)
    do_assign = _oracle_assign([(t.dropoff.x, t.dropoff.y) for t in all_trips], polys, buffer)
    for t, pk, do in zip(all_trips, pk_assign, do_assign):
        if t.pickup_time.year == year:
            col = 0 if t.pickup_time.weekday() < 5 else 2
            for i in pk:
                taxi[i][col] += t.passengers
        if t.dropoff_time.year == year:
            col = 1 if t.dropoff_time.weekday() < 5 else 3
            for i in do:
                taxi[i][col] += t.passengers

    census = ds.census_for_year(year)
    total_venues = sum(1 for v in ds.venues if v.category is not None)
    total_checkins = sum(v.checkins_total for v in ds.venues)
    total_population = sum(census[t.tract_id].population for t in ds.tracts)
    cat_totals = [sum(venue_counts[i][c] for i in range(n)) for c in range(k)]

    # weekday/weekend day counts straight off the calendar
    wd = we = 0
    d = date(year, 1, 1)
    while d.year == year:
        if d.weekday() < 5:
            wd += 1
        else:
            we += 1
        d += timedelta(days=1)

    registry = build_registry(ontology, include_race=True)
    rows = []
    for i, tract in enumerate(ds.tracts):
        row = census[tract.tract_id]
        f: dict[str, float] = {}
        f["area"] = sum(shapely.area(p) for p in ([polys[i]] if polys[i].geom_type == "Polygon"
                                                  else list(polys[i].geoms))) / 5280.0**2
        f["population"] = float(row.population)
        f["frac_male"] = row.frac_male
        f["frac_black"] = row.frac_black
        f["frac_hispanic"] = row.frac_hispanic
        f["frac_poverty"] = row.frac_poverty
        f["frac_vacant"] = row.frac_vacant
        f["frac_rented"] = row.frac_rented
        f["frac_stable"] = row.frac_stable
        f["race_diversity"] = _oracle_diversity(row.race_counts, 5)
        f["age_diversity"] = _oracle_diversity(row.age_counts, 4)
        f["income_diversity"] = _oracle_diversity(row.income_counts, 3)

        v_tot = sum(venue_counts[i])
        for c, name in enumerate(ontology):
            f[f"venues_{name}"] = float(venue_counts[i][c])
        for c, name in enumerate(ontology):
            f[f"venue_frac_{name}"] = (1.0 + venue_counts[i][c]) / (1.0 + v_tot)
        f["venue_diversity"] = _oracle_diversity(venue_counts[i], k)
        for c, name in enumerate(ontology):
            if cat_totals[c] == 0:
                f[f"offering_adv_{name}"] = 0.0
            else:
                f[f"offering_adv_{name}"] = ((1.0 + venue_counts[i][c]) / (1.0 + v_tot)
                                             * total_venues / cat_totals[c])
        f["subway_stations"] = float(n_stations[i])

        c_all = checkins_all[i]
        for c, name in enumerate(ontology):
            f[f"checkins_{name}"] = float(checkin_counts[i][c])
        for c, name in enumerate(ontology):
            f[f"checkin_frac_{name}"] = (1.0 + checkin_counts[i][c]) / (1.0 + c_all)
        f["checkin_diversity"] = _oracle_diversity(checkin_counts[i], k)
        if total_checkins > 0 and total_venues > 0 and total_population > 0:
            f["quotient_venues"] = ((1.0 + c_all) / total_checkins) * (total_venues / (1.0 + v_tot))
            f["quotient_population"] = ((1.0 + c_all) / total_checkins) * (
                total_population / (1.0 + row.population))
        else:
            f["quotient_venues"] = 0.0
            f["quotient_population"] = 0.0
        for b, bucket in enumerate(POPULAR_BUCKETS):
            f[f"popular_{bucket}"] = float(popular[i][b])
        f["subway_wd_entries"] = subway[i][0] / wd
        f["subway_wd_exits"] = subway[i][1] / wd
        f["subway_we_entries"] = subway[i][2] / we
        f["subway_we_exits"] = subway[i][3] / we
        f["subway_diversity"] = _oracle_diversity(subway[i], 4)
        f["taxi_wd_pickups"] = taxi[i][0] / wd
        f["taxi_wd_dropoffs"] = taxi[i][1] / wd
        f["taxi_we_pickups"] = taxi[i][2] / we
        f["taxi_we_dropoffs"] = taxi[i][3] / we
        f["taxi_diversity"] = _oracle_diversity(taxi[i], 4)
        rows.append([f[spec.name] for spec in registry])

    return FeatureMatrix(year=int(year), subset="full", registry=tuple(registry),
                         tract_ids=tuple(ds.tract_ids), values=np.asarray(rows, dtype=np.float64))
