import json
import warnings

import numpy as np
import pytest

from tractcast.ingest import (
    CENSUS_COLUMNS,
    DataError,
    LoadStats,
    bucket_taxi,
    build_dataset,
    describe_counts,
    load_cache,
    load_census,
    load_events,
    load_stations,
    load_taxi,
    load_tracts,
    load_turnstile,
    load_venues,
    write_cache,
)

TRACT_SIZE = 1000.0


def tract_feature(tract_id, x0, y0, size=TRACT_SIZE, area=None):
    ring = [[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size], [x0, y0]]
    props = {"tract_id": tract_id}
    if area is not None:
        props["area_sq_mi"] = area
    return {"type": "Feature", "properties": props,
            "geometry": {"type": "Polygon", "coordinates": [ring]}}


def write_tracts(path, features):
    path.write_text(json.dumps({"type": "FeatureCollection", "features": features}))
    return path


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


EVENT_HEADER = ("event_id", "timestamp", "x", "y", "crime_type")


class TestLoadTracts:
    def test_three_tract_fixture(self, tmp_path):
        path = write_tracts(tmp_path / "t.geojson",
                            [tract_feature("A", 0, 0), tract_feature("B", 1000, 0),
                             tract_feature("C", 2000, 0)])
        tracts = load_tracts(path)
        assert [t.tract_id for t in tracts] == ["A", "B", "C"]

    def test_duplicate_id_names_the_id(self, tmp_path):
        path = write_tracts(tmp_path / "t.geojson",
                            [tract_feature("A", 0, 0), tract_feature("A", 1000, 0)])
        with pytest.raises(DataError, match="'A'"):
            load_tracts(path)

    def test_open_ring_rejected(self, tmp_path):
        bad = tract_feature("A", 0, 0)
        bad["geometry"]["coordinates"][0].pop()  # unclose the ring
        path = write_tracts(tmp_path / "t.geojson", [bad])
        with pytest.raises(DataError, match="not closed"):
            load_tracts(path)

    def test_exclusion_list(self, tmp_path):
        path = write_tracts(tmp_path / "t.geojson",
                            [tract_feature("A", 0, 0), tract_feature("JAIL", 1000, 0)])
        tracts = load_tracts(path, exclude=["JAIL"])
        assert [t.tract_id for t in tracts] == ["A"]

    def test_multipolygon(self, tmp_path):
        feat = {
            "type": "Feature", "properties": {"tract_id": "M"},
            "geometry": {"type": "MultiPolygon", "coordinates": [
                [[[0, 0], [100, 0], [100, 100], [0, 100], [0, 0]]],
                [[[200, 0], [300, 0], [300, 100], [200, 100], [200, 0]]],
            ]},
        }
        path = write_tracts(tmp_path / "t.geojson", [feat])
        (tract,) = load_tracts(path)
        assert len(tract.shapes) == 2


class TestLoadEvents:
    def rows(self):
        rows = []
        for i in range(7):
            rows.append((f"e{i}", f"2015-03-0{i+1}T12:00:00", 10 + i, 20, "robbery"))
        for i in range(3):
            rows.append((f"o{i}", f"2014-03-0{i+1}T12:00:00", 10, 20, "robbery"))
        return rows

    def test_year_filter_drops_and_reports(self, tmp_path):
        path = write_csv(tmp_path / "e.csv", EVENT_HEADER, self.rows())
        stats = LoadStats()
        events = load_events(path, [2015], stats=stats)
        assert len(events) == 7
        assert stats.dropped_year == 3

    def test_empty_file_is_empty_list(self, tmp_path):
        path = write_csv(tmp_path / "e.csv", EVENT_HEADER, [])
        assert load_events(path, [2015]) == []

    def test_missing_header_is_error(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        with pytest.raises(DataError, match="header"):
            load_events(tmp_path / "e.csv", [2015])

    def test_unknown_crime_type_maps_to_other(self, tmp_path):
        path = write_csv(tmp_path / "e.csv", EVENT_HEADER,
                         [("e0", "2015-01-01T00:00:00", 1, 2, "jaywalking")])
        (event,) = load_events(path, [2015])
        assert event.crime_type == "other"

    def test_strict_mode_reports_line_number(self, tmp_path):
        path = write_csv(tmp_path / "e.csv", EVENT_HEADER,
                         [("e0", "2015-01-01T00:00:00", 1, 2, "robbery"),
                          ("e1", "not-a-date", 1, 2, "robbery")])
        with pytest.raises(DataError, match="e.csv:3"):
            load_events(path, [2015])

    def test_lenient_mode_skips_with_tally(self, tmp_path):
        path = write_csv(tmp_path / "e.csv", EVENT_HEADER,
                         [("e0", "2015-01-01T00:00:00", 1, 2, "robbery"),
                          ("e1", "not-a-date", 1, 2, "robbery")])
        stats = LoadStats()
        events = load_events(path, [2015], strict=False, stats=stats)
        assert len(events) == 1
        assert stats.skipped_bad == 1


VENUE_HEADER = ("venue_id", "x", "y", "category", "checkins_total",
                "pop_wd_morning", "pop_wd_afternoon", "pop_wd_evening", "pop_wd_night",
                "pop_we_morning", "pop_we_afternoon", "pop_we_evening", "pop_we_night")


class TestOtherLoaders:
    def test_venue_without_category_is_uncategorized(self, tmp_path):
        path = write_csv(tmp_path / "v.csv", VENUE_HEADER,
                         [("v0", 1, 2, "", 5, 1, 0, 0, 0, 0, 0, 0, 1)])
        (venue,) = load_venues(path)
        assert venue.category is None
        assert venue.popular_flags == (True, False, False, False, False, False, False, True)

    def test_unknown_category_rejected(self, tmp_path):
        path = write_csv(tmp_path / "v.csv", VENUE_HEADER,
                         [("v0", 1, 2, "hyperspace", 5, 0, 0, 0, 0, 0, 0, 0, 0)])
        with pytest.raises(DataError, match="hyperspace"):
            load_venues(path)

    def test_negative_checkins_rejected(self, tmp_path):
        path = write_csv(tmp_path / "v.csv", VENUE_HEADER,
                         [("v0", 1, 2, "food", -3, 0, 0, 0, 0, 0, 0, 0, 0)])
        with pytest.raises(DataError, match="negative"):
            load_venues(path)

    def test_duplicate_station_rejected(self, tmp_path):
        path = write_csv(tmp_path / "s.csv", ("station_id", "x", "y"),
                         [("s1", 0, 0), ("s1", 5, 5)])
        with pytest.raises(DataError, match="duplicate"):
            load_stations(path)

    def test_negative_turnstile_interval_rejected(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ("station_id", "interval_start", "entries", "exits"),
                         [("s1", "2015-01-05T00:00:00", -4, 2)])
        with pytest.raises(DataError, match="negative"):
            load_turnstile(path, [2015])

    def test_taxi_dropoff_before_pickup_rejected(self, tmp_path):
        path = write_csv(tmp_path / "x.csv",
                         ("pickup_ts", "dropoff_ts", "pickup_x", "pickup_y",
                          "dropoff_x", "dropoff_y", "passengers"),
                         [("2015-01-01T10:00:00", "2015-01-01T09:00:00", 0, 0, 1, 1, 2)])
        with pytest.raises(DataError, match="dropoff"):
            load_taxi(path, [2015])

    def test_taxi_zero_passengers_rejected(self, tmp_path):
        path = write_csv(tmp_path / "x.csv",
                         ("pickup_ts", "dropoff_ts", "pickup_x", "pickup_y",
                          "dropoff_x", "dropoff_y", "passengers"),
                         [("2015-01-01T10:00:00", "2015-01-01T10:30:00", 0, 0, 1, 1, 0)])
        with pytest.raises(DataError, match="passengers"):
            load_taxi(path, [2015])

    def test_bucket_taxi_assigns_each_trip_once(self, tmp_path):
        path = write_csv(tmp_path / "x.csv",
                         ("pickup_ts", "dropoff_ts", "pickup_x", "pickup_y",
                          "dropoff_x", "dropoff_y", "passengers"),
                         [("2014-12-31T23:50:00", "2015-01-01T00:20:00", 0, 0, 1, 1, 2),
                          ("2015-06-01T10:00:00", "2015-06-01T10:30:00", 0, 0, 1, 1, 1)])
        trips = load_taxi(path, [2014, 2015])
        buckets = bucket_taxi(trips, [2014, 2015])
        assert len(buckets[2014]) == 1 and len(buckets[2015]) == 1

    def test_census_fraction_out_of_range(self, tmp_path):
        row = ["T1", 100, 0.5, 0.2, 0.2, 1.5, 0.1, 0.4, 0.6,
               50, 20, 20, 5, 5, 25, 25, 40, 10, 30, 40, 30]
        path = write_csv(tmp_path / "c.csv", CENSUS_COLUMNS, [row])
        with pytest.raises(DataError, match="frac_poverty"):
            load_census(path)

    def test_census_group_sum_warning_not_rejection(self, tmp_path):
        row = ["T1", 100, 0.5, 0.2, 0.2, 0.3, 0.1, 0.4, 0.6,
               90, 90, 20, 5, 5, 25, 25, 40, 10, 30, 40, 30]
        path = write_csv(tmp_path / "c.csv", CENSUS_COLUMNS, [row])
        with pytest.warns(UserWarning, match="race counts"):
            table = load_census(path)
        assert table["T1"].population == 100


def census_row(tract_id, population=100):
    return [tract_id, population, 0.5, 0.2, 0.2, 0.3, 0.1, 0.4, 0.6,
            40, 30, 20, 5, 5, 25, 25, 40, 10, 30, 40, 30]


def build_fixture_dataset(tmp_path, events_rows, taxi_rows=()):
    tract_path = write_tracts(tmp_path / "t.geojson",
                              [tract_feature("A", 0, 0), tract_feature("B", 1000, 0)])
    tracts = load_tracts(tract_path)
    events = load_events(write_csv(tmp_path / "e.csv", EVENT_HEADER, events_rows), [2014, 2015])
    venues = load_venues(write_csv(tmp_path / "v.csv", VENUE_HEADER,
                                   [("v0", 500, 500, "food", 5, 0, 0, 0, 0, 0, 0, 0, 0)]))
    stations = load_stations(write_csv(tmp_path / "s.csv", ("station_id", "x", "y"), [("s1", 250, 250)]))
    turnstile = load_turnstile(write_csv(tmp_path / "u.csv",
                                         ("station_id", "interval_start", "entries", "exits"),
                                         [("s1", "2015-01-05T00:00:00", 10, 12)]), [2014, 2015])
    taxi = load_taxi(write_csv(tmp_path / "x.csv",
                               ("pickup_ts", "dropoff_ts", "pickup_x", "pickup_y",
                                "dropoff_x", "dropoff_y", "passengers"), taxi_rows), [2014, 2015])
    census = {"base": load_census(write_csv(tmp_path / "c.csv", CENSUS_COLUMNS,
                                            [census_row("A"), census_row("B")]))}
    return build_dataset(
        tracts, census, {2014: "base", 2015: "base"},
        events={y: [e for e in events if e.timestamp.year == y] for y in (2014, 2015)},
        venues=venues, stations=stations,
        turnstile={y: [t for t in turnstile if t.interval_start.year == y] for y in (2014, 2015)},
        taxi=bucket_taxi(taxi, (2014, 2015)),
    )


class TestBuildDataset:
    def test_border_incident_counted_in_both_tracts(self, tmp_path):
        ds = build_fixture_dataset(tmp_path, [
            ("e0", "2015-02-01T00:00:00", 1000, 500, "robbery"),   # on A|B border
            ("e1", "2015-02-02T00:00:00", 500, 500, "burglary"),   # inside A
        ])
        counts = ds.counts(2015, "total")
        assert counts.tolist() == [2, 1]  # A gets both, B the border one
        assert ds.summary.extra_assignments[2015] == 1
        assert ds.summary.assigned_events[2015] == 2
        # sum over tracts exceeds the event count by the extra assignments
        assert counts.sum() == ds.summary.total_events[2015] + 1

    def test_tract_without_events_retained_at_zero(self, tmp_path):
        ds = build_fixture_dataset(tmp_path, [
            ("e0", "2015-02-01T00:00:00", 500, 500, "assault"),
        ])
        assert ds.counts(2015, "total").tolist() == [1, 0]
        assert ds.counts(2014, "total").tolist() == [0, 0]

    def test_descriptive_stats_match_hand_computation(self):
        # five values sorted: 1 2 4 7 11; hand picks q1=2, median=4, q3=7
        stats = describe_counts([7, 1, 11, 2, 4])
        assert stats == {"min": 1.0, "q1": 2.0, "median": 4.0,
                         "mean": 5.0, "q3": 7.0, "max": 11.0}

    def test_missing_census_tract_rejected(self, tmp_path):
        tract_path = write_tracts(tmp_path / "t.geojson", [tract_feature("A", 0, 0)])
        tracts = load_tracts(tract_path)
        census = {"base": {}}
        with pytest.raises(ValueError, match="missing"):
            build_dataset(tracts, census, {2015: "base"},
                          events={2015: []}, venues=[], stations=[],
                          turnstile={2015: []}, taxi={2015: []})

    def test_unknown_turnstile_station_rejected(self, tmp_path):
        tract_path = write_tracts(tmp_path / "t.geojson", [tract_feature("A", 0, 0)])
        tracts = load_tracts(tract_path)
        turnstile = load_turnstile(
            write_csv(tmp_path / "u.csv", ("station_id", "interval_start", "entries", "exits"),
                      [("ghost", "2015-01-05T00:00:00", 1, 1)]), [2015])
        census = {"base": {"A": load_census(write_csv(tmp_path / "c.csv", CENSUS_COLUMNS,
                                                      [census_row("A")]))["A"]}}
        with pytest.raises(ValueError, match="ghost"):
            build_dataset(tracts, census, {2015: "base"}, events={2015: []},
                          venues=[], stations=[], turnstile={2015: turnstile},
                          taxi={2015: []})


class TestCache:
    def test_round_trip_and_determinism(self, tmp_path, small_city):
        ds = small_city.dataset
        c1 = tmp_path / "c1"
        c2 = tmp_path / "c2"
        m1 = write_cache(ds, c1)
        m2 = write_cache(ds, c2)
        assert m1["files"] == m2["files"]  # byte-identical rewrite

        reloaded = load_cache(c1)
        assert reloaded.tract_ids == ds.tract_ids
        assert reloaded.venues == ds.venues
        assert reloaded.stations == ds.stations
        for y in ds.years:
            assert reloaded.events[y] == ds.events[y]
            assert reloaded.turnstile[y] == ds.turnstile[y]
            assert reloaded.taxi[y] == ds.taxi[y]
            assert np.array_equal(reloaded.counts(y, "total"), ds.counts(y, "total"))
        assert reloaded.census == ds.census

    def test_tampered_cache_detected(self, tmp_path, small_city):
        cache = tmp_path / "c"
        write_cache(small_city.dataset, cache)
        path = cache / "events.csv"
        path.write_text(path.read_text().replace("robbery", "burglary", 1))
        with pytest.raises(DataError, match="hash mismatch"):
            load_cache(cache)
