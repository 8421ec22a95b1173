import math

import numpy as np
import pytest

from tractcast.evaluation import (
    EvalReport,
    Grid,
    HoldoutResult,
    ImportanceTable,
    _select_best,
    back_transform,
    bootstrap_importance,
    counts_for,
    default_grid,
    export_residual_geojson,
    make_split_plan,
    mse,
    nested_cv,
    nested_cv_arrays,
    r2,
    residual_layer,
    temporal_holdout,
    transform_target,
)
from tractcast.features import build_matrix
from tractcast.ingest import load_tracts
from tractcast.model import HyperParams, fit_random_forest, impurity_importance

TINY_GRID = Grid(n_trees=(8, 16), max_features=("half",))
TINY_GB = Grid(n_trees=(8, 16), gb_max_depth=(1, 2), gb_learning_rate=(0.1,))


class TestTargetTransform:
    def test_zero_count(self):
        assert transform_target([0]).y[0] == 0.0

    def test_max_count_661(self):
        # ln(662) evaluated directly
        tv = transform_target([661])
        assert tv.y[0] == pytest.approx(math.log(662.0), abs=1e-12)
        assert tv.y[0] == pytest.approx(6.4953, abs=1e-4)

    def test_round_trip_exact(self):
        tv = transform_target([0, 1, 5, 661, 10000])
        assert back_transform(tv.y).tolist() == [0, 1, 5, 661, 10000]

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            transform_target([-1])


class TestMetrics:
    def test_mse_identical_vectors(self):
        assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_mse_hand_sum(self):
        assert mse([1, 2, 3], [2, 2, 2]) == pytest.approx(2 / 3)

    def test_mse_single_element(self):
        assert mse([5.0], [2.0]) == 9.0

    def test_r2_mean_predictor_is_zero(self, rng):
        for _ in range(20):
            y = rng.normal(size=50)
            assert abs(r2(y, np.full(50, y.mean()))) <= 1e-12

    def test_r2_perfect(self, rng):
        y = rng.normal(size=30)
        assert r2(y, y) == 1.0

    def test_r2_hand_value(self):
        assert r2([1, 2, 3], [1, 2, 4]) == pytest.approx(0.5)

    def test_r2_constant_target_warns_nan(self):
        with pytest.warns(UserWarning, match="constant"):
            assert math.isnan(r2([2.0, 2.0], [1.0, 3.0]))

    def test_r2_never_exceeds_one(self, rng):
        for _ in range(30):
            y = rng.normal(size=20)
            y_hat = rng.normal(size=20)
            assert r2(y, y_hat) <= 1.0
            assert mse(y, y_hat) >= 0.0


class TestSplitPlan:
    def test_partition_and_disjointness(self):
        ids = [f"T{i}" for i in range(53)]
        plan = make_split_plan(ids, n_outer=5, n_inner=2, seed=3)
        assert sorted(np.unique(plan.outer_fold)) == [0, 1, 2, 3, 4]
        sizes = np.bincount(plan.outer_fold)
        assert sizes.sum() == 53 and sizes.max() - sizes.min() <= 1
        for o in range(5):
            train, test = plan.outer_split(o)
            assert set(train) | set(test) == set(range(53))
            assert set(train) & set(test) == set()
            inner = plan.inner_fold[o]
            # outer-test tracts never appear in the inner loop
            assert np.all(inner[test] == -1)
            it0, iv0 = plan.inner_split(o, 0)
            it1, iv1 = plan.inner_split(o, 1)
            assert sorted(np.concatenate([iv0, iv1])) == sorted(train)
            assert set(it0) == set(iv1) and set(it1) == set(iv0)

    def test_reproducible_from_seed(self):
        ids = [f"T{i}" for i in range(40)]
        a = make_split_plan(ids, seed=9)
        b = make_split_plan(ids, seed=9)
        assert np.array_equal(a.outer_fold, b.outer_fold)
        assert np.array_equal(a.inner_fold, b.inner_fold)
        c = make_split_plan(ids, seed=10)
        assert not np.array_equal(a.outer_fold, c.outer_fold)

    def test_too_few_tracts(self):
        with pytest.raises(ValueError):
            make_split_plan(["a", "b", "c"], n_outer=5)


class TestSelection:
    def test_tie_breaking_order(self):
        grid = Grid(n_trees=(50, 100), max_features=("third", "half", "all"))
        profiles = [HyperParams(learner="rf", n_trees=100, max_features=mf, seed=0)
                    for mf in grid.max_features]
        # every cell identical -> smallest n_trees, then fewest features
        fold_mses = {(pi, f): np.array([1.0, 1.0]) for pi in range(3) for f in range(2)}
        best = _select_best(profiles, grid, fold_mses)
        assert best.n_trees == 50 and best.max_features == "third"

    def test_lower_mse_wins(self):
        grid = Grid(n_trees=(50, 100), max_features=("third", "all"))
        profiles = [HyperParams(learner="rf", n_trees=100, max_features=mf, seed=0)
                    for mf in grid.max_features]
        fold_mses = {
            (0, 0): np.array([1.0, 0.9]), (0, 1): np.array([1.0, 0.9]),
            (1, 0): np.array([0.5, 0.8]), (1, 1): np.array([0.7, 0.8]),
        }
        best = _select_best(profiles, grid, fold_mses)
        assert best.max_features == "all" and best.n_trees == 50

    def test_default_grids_cover_stated_ranges(self):
        rf = default_grid("rf")
        assert min(rf.n_trees) == 50 and max(rf.n_trees) == 400
        assert rf.max_features == ("third", "half", "all")
        gb = default_grid("gb")
        assert min(gb.n_trees) == 100 and max(gb.n_trees) == 400
        assert gb.gb_max_depth == (1, 2, 3, 4)
        assert min(gb.gb_learning_rate) == 0.01 and max(gb.gb_learning_rate) == 0.2


class TestNestedCV:
    def test_deterministic_and_signal_detected(self, small_city):
        res1 = nested_cv(small_city.dataset, 2015, "total", "full", "rf",
                         TINY_GRID, seed=4)
        res2 = nested_cv(small_city.dataset, 2015, "total", "full", "rf",
                         TINY_GRID, seed=4)
        assert res1.r2_mean == res2.r2_mean
        assert [f.params for f in res1.folds] == [f.params for f in res2.folds]
        # the full feature set sees most of the generating signal even on a
        # tiny city with a tiny grid
        assert res1.r2_mean > 0.2

    def test_fold_metrics_recomputable_from_predictions(self, small_city):
        res = nested_cv(small_city.dataset, 2015, "total", "census", "gb",
                        TINY_GB, seed=4)
        for fold in res.folds:
            assert fold.mse == pytest.approx(mse(fold.y_true, fold.y_pred), abs=1e-12)
            assert fold.r2 == pytest.approx(r2(fold.y_true, fold.y_pred), abs=1e-12)
        assert res.r2_mean == pytest.approx(
            np.mean([r2(f.y_true, f.y_pred) for f in res.folds]), abs=1e-12)

    def test_jobs_do_not_change_results(self, small_city):
        r1 = nested_cv(small_city.dataset, 2015, "total", "census", "et",
                       TINY_GRID, seed=2, jobs=1)
        r2_ = nested_cv(small_city.dataset, 2015, "total", "census", "et",
                        TINY_GRID, seed=2, jobs=4)
        assert r1.to_record() == r2_.to_record()

    def test_unknown_learner(self, small_city):
        with pytest.raises(ValueError):
            nested_cv(small_city.dataset, 2015, "total", "census", "boost3000")

    def test_unknown_crime_type(self, small_city):
        with pytest.raises(ValueError):
            counts_for(small_city.dataset, 2015, "arson")


class TestTemporalHoldout:
    def test_same_year_memorization_is_perfect(self, small_city):
        # interpolating forest: no bootstrap, all features, unlimited depth
        grid = Grid(n_trees=(2,), max_features=("all",))
        res = temporal_holdout(small_city.dataset, 2015, 2015, "total", "full",
                               "rf", grid, seed=0, allow_same_year=True)
        # bootstrap is on by default, so force the interpolation variant
        m = build_matrix(small_city.dataset, 2015, "full")
        y = transform_target(counts_for(small_city.dataset, 2015, "total")).y
        model = fit_random_forest(m.values, y, HyperParams(
            learner="rf", n_trees=2, max_features="all", bootstrap=False, seed=0))
        assert r2(y, model.predict(m.values)) == pytest.approx(1.0)
        assert res.r2 > 0.6  # bootstrapped variant still close to memorizing

    def test_same_year_guard(self, small_city):
        with pytest.raises(ValueError, match="allow_same_year"):
            temporal_holdout(small_city.dataset, 2015, 2015, "total", "census",
                             "rf", TINY_GRID)

    def test_cross_year_generalizes(self, small_city):
        res = temporal_holdout(small_city.dataset, 2014, 2015, "total", "full",
                               "gb", TINY_GB, seed=1)
        assert res.train_year == 2014 and res.test_year == 2015
        assert res.r2 > 0.3  # stable generating function across years
        assert res.params.n_trees in TINY_GB.n_trees
        record = res.to_record()
        assert record["split"] == "temporal" and "params" in record


class TestBootstrapImportance:
    def test_single_resample_reduces_to_plain_importance(self, small_city):
        params = HyperParams(learner="gb", n_trees=10, gb_max_depth=2,
                             gb_learning_rate=0.2, seed=0)
        table = bootstrap_importance(small_city.dataset, 2015, "total", "census",
                                     "gb", params=params, n_boot=1, frac=0.8, seed=3)
        m = build_matrix(small_city.dataset, 2015, "census")
        y = transform_target(counts_for(small_city.dataset, 2015, "total")).y
        rng = np.random.default_rng(np.random.SeedSequence(3, spawn_key=(3, 0)))
        idx = rng.permutation(len(y))[: int(round(0.8 * len(y)))]
        from tractcast.model import fit_gradient_boosting

        direct = impurity_importance(fit_gradient_boosting(m.values[idx], y[idx], params))
        assert np.allclose(table.samples[0], direct)

    def test_ranking_schema(self, small_city, tmp_path):
        params = HyperParams(learner="gb", n_trees=8, gb_max_depth=1,
                             gb_learning_rate=0.3, seed=0)
        table = bootstrap_importance(small_city.dataset, 2015, "total", "census",
                                     "gb", params=params, n_boot=5, seed=1)
        ranking = table.ranking()
        assert [row["rank"] for row in ranking] == list(range(1, 13))
        meds = [row["median"] for row in ranking]
        assert meds == sorted(meds, reverse=True)
        assert sum(row["times_ranked_first"] for row in ranking) == 5
        for row in ranking:
            assert row["lo"] <= row["q1"] <= row["median"] <= row["q3"] <= row["hi"]
        dest = tmp_path / "imp.csv"
        table.write_csv(dest)
        header = dest.read_text().split("\n")[0].split(",")
        assert header == ["rank", "feature", "median", "q1", "q3", "lo", "hi",
                          "times_ranked_first"]


class _FixedModel:
    """Duck-typed stand-in producing preset predictions."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def predict(self, X):
        return self.values.copy()


class TestResidualLayer:
    def test_perfect_model(self, small_city):
        target = transform_target(counts_for(small_city.dataset, 2015, "total"),
                                  "total", 2015)
        matrix = build_matrix(small_city.dataset, 2015, "census")
        layer = residual_layer(_FixedModel(target.y), matrix, target)
        n = len(small_city.dataset.tracts)
        assert layer.in_band_count == n
        assert layer.histogram() == {0: n}
        assert np.array_equal(layer.predicted_counts, target.raw)

    def test_hand_rounded_histogram(self, small_city):
        target = transform_target(counts_for(small_city.dataset, 2015, "total"),
                                  "total", 2015)
        matrix = build_matrix(small_city.dataset, 2015, "census")
        # three tracts with errors 0.2, -0.7, 1.4; the rest exact
        preds = target.y.copy()
        preds[0] -= 0.2
        preds[1] += 0.7
        preds[2] -= 1.4
        layer = residual_layer(_FixedModel(preds), matrix, target)
        n = len(preds)
        hist = layer.histogram()
        assert hist[-1] == 1 and hist[1] == 1 and hist[0] == n - 2
        assert layer.in_band_count == n - 2

    def test_geojson_export_reloads_as_tracts(self, small_city, tmp_path):
        target = transform_target(counts_for(small_city.dataset, 2015, "total"),
                                  "total", 2015)
        matrix = build_matrix(small_city.dataset, 2015, "census")
        layer = residual_layer(_FixedModel(target.y), matrix, target)
        dest = tmp_path / "residuals.geojson"
        export_residual_geojson(layer, small_city.dataset.tracts, dest)
        reloaded = load_tracts(dest)
        assert [t.tract_id for t in reloaded] == list(layer.tract_ids)
        import json

        doc = json.loads(dest.read_text())
        props = doc["features"][0]["properties"]
        for key in ("y", "y_hat", "error", "rounded_error", "observed_count",
                    "predicted_count"):
            assert key in props


class TestEvalReport:
    def test_json_and_text(self, small_city):
        report = EvalReport()
        report.add(nested_cv(small_city.dataset, 2015, "total", "census", "rf",
                             TINY_GRID, seed=0))
        report.add(temporal_holdout(small_city.dataset, 2014, 2015, "total",
                                    "census", "rf", TINY_GRID, seed=0))
        text = report.to_text()
        assert "geographic" in text and "temporal" in text
        import json

        doc = json.loads(report.to_json())
        assert doc["format"] == "tractcast-report/1"
        assert len(doc["records"]) == 2
