import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tractcast.features import (
    SUBSETS,
    CityTotals,
    build_matrix,
    build_registry,
    census_features,
    checkin_features,
    diversity_index,
    local_quotients,
    offering_advantage,
    popular_hours_features,
    subway_flow_features,
    taxi_flow_features,
    venue_features,
    weekpart_day_counts,
)
from tractcast.geo import PolygonShape, TractGeometry
from tractcast.ingest import DEFAULT_ONTOLOGY, CensusRow


def direct_diversity(counts, k):
    """The formula evaluated longhand: the oracle for hand-checks."""
    total = sum(counts)
    acc = 0.0
    for c in counts:
        p = (1 + c) / (1 + total)
        acc -= p * math.log(p)
    return acc / math.log(k)


class TestDiversityIndex:
    def test_all_zero_counts(self):
        assert diversity_index([0] * 10, 10) == 0.0

    def test_single_loaded_category(self):
        # direct evaluation: (9/6) * ln 6 / ln 10
        got = diversity_index([5] + [0] * 9, 10)
        assert got == pytest.approx((9 / 6) * math.log(6) / math.log(10), abs=1e-12)
        assert got == pytest.approx(1.16723, abs=1e-4)

    def test_uniform_large_counts_near_one(self):
        got = diversity_index([1000] * 10, 10)
        assert got == pytest.approx(direct_diversity([1000] * 10, 10), abs=1e-12)
        assert got == pytest.approx(1.0005, abs=1e-3)

    def test_race_counts_concentrated(self):
        # (4/101) * ln 101 / ln 5
        got = diversity_index([100, 0, 0, 0, 0], 5)
        assert got == pytest.approx((4 / 101) * math.log(101) / math.log(5), abs=1e-12)
        assert got == pytest.approx(0.1136, abs=1e-4)

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            diversity_index([1], 1)
        with pytest.raises(ValueError):
            diversity_index([1, 2, 3], 2)
        with pytest.raises(ValueError):
            diversity_index([1, -2], 2)
        with pytest.raises(ValueError):
            diversity_index([1, 2], 2, mode="bogus")

    def test_laplace_mode_is_proper(self):
        # proper shares sum to one, so a uniform vector hits exactly 1
        assert diversity_index([7, 7, 7], 3, mode="laplace") == pytest.approx(1.0)

    @given(st.lists(st.integers(0, 500), min_size=2, max_size=8))
    @settings(max_examples=150, deadline=None)
    def test_nonnegative_and_permutation_invariant(self, counts):
        k = len(counts)
        base = diversity_index(counts, k)
        assert base >= 0.0
        assert diversity_index(list(reversed(counts)), k) == pytest.approx(base, abs=1e-12)

    def test_uniform_counts_converge_to_one(self):
        vals = [diversity_index([k] * 10, 10) for k in (1, 10, 100, 1000)]
        # monotonically approaches 1 from above
        diffs = [abs(v - 1.0) for v in vals]
        assert diffs == sorted(diffs, reverse=True)
        assert vals[-1] == pytest.approx(1.0, abs=1e-3)


class TestOfferingAdvantage:
    def test_average_neighborhood_is_one(self):
        assert offering_advantage(1, 9, 100, 20) == pytest.approx(1.0)

    def test_empty_tract_artifact(self):
        # (1/1) * 100/25, the printed formula taken literally
        assert offering_advantage(0, 0, 100, 25) == pytest.approx(4.0)

    def test_absent_category_citywide_is_zero(self):
        assert offering_advantage(3, 10, 100, 0) == 0.0

    def test_scale_consistency_exact_without_smoothing(self):
        base = offering_advantage(4, 20, 300, 60, smoothed=False)
        doubled = offering_advantage(8, 20, 300, 120, smoothed=False)
        assert doubled == pytest.approx(base, abs=0.0)

    def test_scale_consistency_approximate_with_smoothing(self):
        base = offering_advantage(400, 2000, 30000, 6000)
        doubled = offering_advantage(800, 2000, 30000, 12000)
        assert doubled == pytest.approx(base, rel=1e-2)

    def test_weighted_mean_identity_vs_brute_force(self, rng):
        # weighted by (1 + V(t_i)), the mean has the closed form
        # total_venues * sum(1 + V_c) / (S_c * sum(1 + V))
        for _ in range(20):
            n = int(rng.integers(3, 30))
            v_c = rng.integers(0, 20, n)
            v_tot = v_c + rng.integers(0, 30, n)
            total_venues = int(v_tot.sum())
            s_c = int(v_c.sum())
            if s_c == 0 or total_venues == 0:
                continue
            oa = np.array([
                offering_advantage(int(a), int(b), total_venues, s_c)
                for a, b in zip(v_c, v_tot)
            ])
            w = 1.0 + v_tot
            brute = float(np.sum(w * oa) / np.sum(w))
            closed = total_venues * float(np.sum(1.0 + v_c)) / (s_c * float(np.sum(1.0 + v_tot)))
            assert brute == pytest.approx(closed, rel=1e-12)


class TestLocalQuotients:
    def test_hotspot_balance(self):
        q_v, _ = local_quotients(99, 9, 50, 1000, 100, 5000)
        assert q_v == pytest.approx(1.0)

    def test_empty_tract(self):
        q_v, _ = local_quotients(0, 0, 0, 1000, 100, 5000)
        assert q_v == pytest.approx(0.1)

    def test_city_average_tract_is_near_one(self):
        # tract carrying exactly 1/10 of all checkins, venues, and people
        q_v, q_p = local_quotients(100, 10, 500, 1000, 100, 5000)
        assert q_v == pytest.approx(1.0, rel=0.1)
        assert q_p == pytest.approx(1.0, rel=0.1)

    def test_zero_city_total_rejected(self):
        with pytest.raises(ValueError):
            local_quotients(1, 1, 1, 0, 100, 100)


def make_tract(tract_id="T", size=1000.0):
    ring = [(0, 0), (size, 0), (size, size), (0, size), (0, 0)]
    return TractGeometry(tract_id, [PolygonShape(ring)])


def make_city_totals(**overrides):
    base = dict(venues=100, checkins=1000, population=5000,
                category_totals=np.full(10, 10), weekday_days=261, weekend_days=104)
    base.update(overrides)
    return CityTotals(**base)


class TestFeatureGroups:
    def test_census_features_pass_through_and_indices(self):
        row = CensusRow("T", population=200, frac_male=0.5, frac_black=0.2,
                        frac_hispanic=0.1, frac_poverty=0.3, frac_vacant=0.05,
                        frac_rented=0.6, frac_stable=0.7,
                        race_counts=(100, 0, 0, 0, 0), age_counts=(0, 0, 0, 0),
                        income_counts=(10, 10, 10))
        feats = census_features(row, make_tract())
        assert feats["population"] == 200.0
        assert feats["frac_poverty"] == 0.3
        assert feats["race_diversity"] == pytest.approx(0.1136, abs=1e-4)
        assert feats["age_diversity"] == 0.0
        assert feats["area"] == pytest.approx(1000.0**2 / 5280.0**2)
        no_race = census_features(row, make_tract(), include_race=False)
        assert "frac_black" not in no_race and "race_diversity" not in no_race
        assert len(feats) == 12 and len(no_race) == 9

    def test_venue_features_counts_and_smoothed_fraction(self):
        counts = np.zeros(10, dtype=int)
        counts[DEFAULT_ONTOLOGY.index("food")] = 3
        counts[DEFAULT_ONTOLOGY.index("shop_service")] = 1
        feats = venue_features(counts, n_stations=2, ontology=DEFAULT_ONTOLOGY,
                               city=make_city_totals())
        assert feats["venues_food"] == 3.0
        assert feats["venue_frac_food"] == pytest.approx((1 + 3) / (1 + 4))
        assert feats["subway_stations"] == 2.0
        assert feats["venue_diversity"] == pytest.approx(direct_diversity(counts, 10), abs=1e-12)
        assert feats["offering_adv_food"] == pytest.approx(((1 + 3) / (1 + 4)) * 100 / 10)

    def test_empty_tract_venue_features(self):
        feats = venue_features(np.zeros(10, dtype=int), 0, DEFAULT_ONTOLOGY, make_city_totals())
        assert all(feats[f"venues_{c}"] == 0.0 for c in DEFAULT_ONTOLOGY)
        assert feats["venue_diversity"] == 0.0

    def test_checkin_features_hand_sum(self):
        # three categorized venues (food 10+5, shop 7) and one uncategorized
        # with 8 checkins: category sums skip it, totals include it
        counts = np.zeros(10, dtype=int)
        counts[DEFAULT_ONTOLOGY.index("food")] = 15
        counts[DEFAULT_ONTOLOGY.index("shop_service")] = 7
        checkins_all = 15 + 7 + 8
        feats = checkin_features(counts, checkins_all, venue_total=3, population=50,
                                 ontology=DEFAULT_ONTOLOGY, city=make_city_totals())
        assert feats["checkins_food"] == 15.0
        assert feats["checkin_frac_food"] == pytest.approx((1 + 15) / (1 + 30))
        assert feats["checkin_diversity"] == pytest.approx(direct_diversity(counts, 10), abs=1e-12)
        assert feats["quotient_venues"] == pytest.approx(((1 + 30) / 1000) * (100 / (1 + 3)))
        assert feats["quotient_population"] == pytest.approx(((1 + 30) / 1000) * (5000 / (1 + 50)))

    def test_checkin_quotients_zero_when_city_empty(self):
        city = make_city_totals(checkins=0)
        feats = checkin_features(np.zeros(10, dtype=int), 0, 0, 0, DEFAULT_ONTOLOGY, city)
        assert feats["quotient_venues"] == 0.0
        assert feats["quotient_population"] == 0.0

    def test_popular_hours_counts(self):
        counts = np.zeros(8, dtype=int)
        counts[1] = 2  # two venues popular weekday-afternoon
        feats = popular_hours_features(counts)
        assert feats["popular_wd_afternoon"] == 2.0
        assert sum(feats.values()) == 2.0
        assert all(v == 0.0 for v in popular_hours_features(np.zeros(8)).values())

    def test_subway_weekday_average_from_calendar(self):
        # a station logging 10 entries every Monday of 2015: 52 Mondays,
        # 261 weekday calendar days -> 520/261
        wd, we = weekpart_day_counts(2015)
        assert (wd, we) == (261, 104)
        feats = subway_flow_features([520, 0, 0, 0], wd, we)
        assert feats["subway_wd_entries"] == pytest.approx(520 / 261)
        assert feats["subway_we_exits"] == 0.0

    def test_subway_no_station_all_zero(self):
        feats = subway_flow_features([0, 0, 0, 0], 261, 104)
        assert all(v == 0.0 for v in feats.values())

    def test_flow_diversity_uniform_totals(self):
        feats = subway_flow_features([5000, 5000, 5000, 5000], 261, 104)
        assert feats["subway_diversity"] == pytest.approx(1.0, abs=1e-3)

    def test_taxi_weekend_pickup_weighting(self):
        # one Saturday trip with 3 passengers adds 3 to weekend pickups
        feats = taxi_flow_features([0, 0, 3, 0], 261, 104)
        assert feats["taxi_we_pickups"] == pytest.approx(3 / 104)
        assert feats["taxi_wd_dropoffs"] == 0.0


class TestAggregation:
    def test_border_station_feeds_both_tracts(self):
        from datetime import datetime

        from tractcast.features import aggregate_activity
        from tractcast.geo import PlanarPoint
        from tractcast.ingest import StationRecord, TurnstileInterval, build_dataset

        def sq(tid, x0):
            ring = [(x0, 0), (x0 + 1000, 0), (x0 + 1000, 1000), (x0, 1000), (x0, 0)]
            return TractGeometry(tid, [PolygonShape(ring)])

        def row(tid):
            return CensusRow(tid, 100, 0.5, 0.2, 0.2, 0.3, 0.1, 0.4, 0.6,
                             (40, 30, 20, 5, 5), (25, 25, 40, 10), (30, 40, 30))

        tracts = [sq("A", 0), sq("B", 1000)]
        station = StationRecord("s1", PlanarPoint(1000.0, 500.0))  # on the border
        rows = [TurnstileInterval("s1", datetime(2015, 1, 5), 10, 12),  # Monday
                TurnstileInterval("s1", datetime(2015, 1, 10), 4, 6)]   # Saturday
        ds = build_dataset(tracts, {"base": {"A": row("A"), "B": row("B")}},
                           {2015: "base"}, events={2015: []}, venues=[],
                           stations=[station], turnstile={2015: rows},
                           taxi={2015: []})
        acts, _ = aggregate_activity(ds, 2015)
        for act in acts:
            assert act.n_stations == 1
            assert act.subway_totals.tolist() == [10, 12, 4, 6]


class TestRegistryAndMatrix:
    def test_registry_count_is_85(self):
        assert len(build_registry()) == 85
        tiers = {"census": 12, "spatial": 32, "spatiotemporal": 41}
        reg = build_registry()
        for tier, count in tiers.items():
            assert sum(1 for s in reg if s.tier == tier) == count

    def test_registry_without_race(self):
        assert len(build_registry(include_race=False)) == 82

    def test_subset_column_counts(self, small_city):
        matrix = build_matrix(small_city.dataset, 2015, "full")
        expected = {"census": 12, "census_poi": 22, "human_dynamics": 73,
                    "full": 85, "census_fs": 74, "census_subway": 18, "census_taxi": 17}
        for subset, count in expected.items():
            assert matrix.select(subset).values.shape[1] == count, subset

    def test_human_dynamics_disjoint_from_census(self, small_city):
        matrix = build_matrix(small_city.dataset, 2015, "full")
        hd = set(matrix.select("human_dynamics").names)
        census = set(matrix.select("census").names)
        assert hd & census == set()
        assert hd | census == set(matrix.names)

    def test_unknown_subset_rejected(self, small_city):
        with pytest.raises(ValueError, match="unknown subset"):
            build_matrix(small_city.dataset, 2015, "everything")

    def test_matrix_finite_and_deterministic(self, small_city):
        m1 = build_matrix(small_city.dataset, 2015, "full")
        m2 = build_matrix(small_city.dataset, 2015, "full")
        assert np.all(np.isfinite(m1.values))
        assert np.array_equal(m1.values, m2.values)
        assert m1.names == m2.names
        # zero-population tracts exist in the synthetic census and stay finite
        pops = m1.column("population")
        assert (pops == 0).any()

    def test_matrix_csv_round_trip(self, small_city, tmp_path):
        matrix = build_matrix(small_city.dataset, 2015, "census")
        dest = tmp_path / "m.csv"
        matrix.write_csv(dest)
        rows = dest.read_text().strip().split("\n")
        header = rows[0].split(",")
        assert header == ["tract_id"] + list(matrix.names)
        got = np.array([[float(v) for v in r.split(",")[1:]] for r in rows[1:]])
        assert np.array_equal(got, matrix.values)
        assert (tmp_path / "m.csv.manifest.json").exists()

    def test_laplace_mode_changes_diversity_only(self, small_city):
        a = build_matrix(small_city.dataset, 2015, "full")
        b = build_matrix(small_city.dataset, 2015, "full", diversity_mode="laplace")
        changed = {n for i, n in enumerate(a.names)
                   if not np.allclose(a.values[:, i], b.values[:, i])}
        assert changed
        assert all("diversity" in n for n in changed)
