"""Experiment harness: log1p target transform, nested geographic
cross-validation (5 outer folds for assessment, 2 inner folds for
hyper-parameter selection), temporal holdout (train one year, test the
next), bootstrap feature-importance ranking, and residual layers.

City-wide feature denominators are computed once from the full region
before any split, deliberately matching the evaluated protocol rather than
a leak-free redesign; fold assignment is uniform over tracts with no
spatial blocking.
"""
from __future__ import annotations

import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .features import SUBSETS, FeatureMatrix, build_matrix
from .ingest import CRIME_TYPES, RegionDataset
from .model import (
    EnsembleModel,
    HyperParams,
    fit_ensemble,
    impurity_importance,
)

__all__ = [
    "TARGETS",
    "TargetVector",
    "transform_target",
    "back_transform",
    "mse",
    "r2",
    "SplitPlan",
    "make_split_plan",
    "Grid",
    "default_grid",
    "nested_cv",
    "nested_cv_arrays",
    "select_and_fit",
    "temporal_holdout",
    "bootstrap_importance",
    "residual_layer",
    "export_residual_geojson",
    "NestedCVResult",
    "HoldoutResult",
    "ImportanceTable",
    "ResidualLayer",
    "EvalReport",
    "counts_for",
]

TARGETS = ("total",) + CRIME_TYPES


# ---------------------------------------------------------------------------
# Target transform and metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetVector:
    crime_type: str
    year: int
    raw: np.ndarray  # integer counts
    y: np.ndarray    # log1p-transformed


def counts_for(dataset: RegionDataset, year: int, crime_type: str) -> np.ndarray:
    if crime_type not in TARGETS:
        raise ValueError(f"unknown crime type {crime_type!r}; expected one of {TARGETS}")
    return dataset.counts(int(year), crime_type)


def transform_target(counts, crime_type: str = "total", year: int = 0) -> TargetVector:
    """log1p transform; chosen over plain log because subtype counts reach
    zero. Invertible back to the exact integer count."""
    raw = np.asarray(counts)
    if np.any(raw < 0):
        raise ValueError("counts must be nonnegative")
    return TargetVector(crime_type=crime_type, year=int(year),
                        raw=raw.astype(np.int64), y=np.log1p(raw.astype(np.float64)))


def back_transform(y) -> np.ndarray:
    """Inverse of transform_target, rounded to the integer count."""
    return np.rint(np.expm1(np.asarray(y, dtype=np.float64))).astype(np.int64)


def mse(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.size == 0:
        raise ValueError("y and y_hat must be non-empty with matching shape")
    d = y - y_hat
    return float(np.mean(d * d))


def r2(y, y_hat) -> float:
    """Coefficient of determination; 0.0 for the mean predictor, 1.0 for a
    perfect fit, negative for models worse than the mean. NaN (with a
    warning) when y is constant and the denominator vanishes."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.size == 0:
        raise ValueError("y and y_hat must be non-empty with matching shape")
    ss_res = float(np.sum((y - y_hat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        warnings.warn("r2 undefined for constant targets; returning nan")
        return float("nan")
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# Fold plans
# ---------------------------------------------------------------------------

@dataclass
class SplitPlan:
    """Seeded outer/inner fold assignment over tracts. outer_fold[i] is the
    assessment fold of tract i; inner_fold[o, i] is tract i's selection fold
    within outer split o (-1 when the tract sits in o's test fold)."""

    seed: int
    n_outer: int
    n_inner: int
    tract_ids: tuple[str, ...]
    outer_fold: np.ndarray
    inner_fold: np.ndarray

    def outer_split(self, o: int) -> tuple[np.ndarray, np.ndarray]:
        test = np.flatnonzero(self.outer_fold == o)
        train = np.flatnonzero(self.outer_fold != o)
        return train, test

    def inner_split(self, o: int, i: int) -> tuple[np.ndarray, np.ndarray]:
        fold = self.inner_fold[o]
        val = np.flatnonzero(fold == i)
        train = np.flatnonzero((fold != i) & (fold >= 0))
        return train, val


def _chunk_assign(rng: np.random.Generator, positions: np.ndarray, n_folds: int) -> list[np.ndarray]:
    perm = positions[rng.permutation(len(positions))]
    return np.array_split(perm, n_folds)


def make_split_plan(tract_ids, n_outer: int = 5, n_inner: int = 2, seed: int = 0) -> SplitPlan:
    ids = tuple(tract_ids)
    n = len(ids)
    if n < n_outer or n_outer < 2 or n_inner < 2:
        raise ValueError(f"cannot split {n} tracts into {n_outer} outer / {n_inner} inner folds")
    outer = np.empty(n, dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    for f, chunk in enumerate(_chunk_assign(rng, np.arange(n), n_outer)):
        outer[chunk] = f
    inner = np.full((n_outer, n), -1, dtype=np.int64)
    for o in range(n_outer):
        train = np.flatnonzero(outer != o)
        rng_o = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, o)))
        for f, chunk in enumerate(_chunk_assign(rng_o, train, n_inner)):
            inner[o, chunk] = f
    return SplitPlan(seed=seed, n_outer=n_outer, n_inner=n_inner, tract_ids=ids,
                     outer_fold=outer, inner_fold=inner)


# ---------------------------------------------------------------------------
# Hyper-parameter grids and staged evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    n_trees: tuple[int, ...]
    max_features: tuple[str, ...] = ("all",)
    gb_max_depth: tuple[int, ...] = (3,)
    gb_learning_rate: tuple[float, ...] = (0.1,)

    def validate(self):
        if not self.n_trees or any(t < 1 for t in self.n_trees):
            raise ValueError("n_trees grid must be non-empty positive integers")
        if not self.max_features or not self.gb_max_depth or not self.gb_learning_rate:
            raise ValueError("grid axes must be non-empty")
        return self


def default_grid(learner: str) -> Grid:
    """Default search grids: ensemble sizes 50-400 (forests) and 100-400
    (boosting), candidate-feature fractions third/half/all, boosting depths
    1-4 and learning rates 0.01-0.2."""
    if learner in ("rf", "et"):
        return Grid(n_trees=(50, 100, 200, 400), max_features=("third", "half", "all"))
    if learner == "gb":
        return Grid(n_trees=(100, 200, 400), gb_max_depth=(1, 2, 3, 4),
                    gb_learning_rate=(0.01, 0.1, 0.2))
    raise ValueError(f"unknown learner {learner!r}")


_FEATURE_RANK = {"third": 0, "half": 1, "all": 2}


def _grid_profiles(learner: str, grid: Grid, seed: int) -> list[HyperParams]:
    """One fit per profile; every n_trees value is scored from the same fit
    because tree i never depends on the total ensemble size (per-tree RNG
    streams are keyed by tree index)."""
    n_max = max(grid.n_trees)
    if learner in ("rf", "et"):
        return [HyperParams(learner=learner, n_trees=n_max, max_features=mf, seed=seed)
                for mf in grid.max_features]
    return [HyperParams(learner="gb", n_trees=n_max, gb_max_depth=d,
                        gb_learning_rate=lr, seed=seed)
            for d in grid.gb_max_depth for lr in grid.gb_learning_rate]


def _staged_mse(model: EnsembleModel, X_val, y_val, n_trees_list) -> np.ndarray:
    P = model.tree_predictions(X_val)
    cums = np.cumsum(P, axis=0)
    out = np.empty(len(n_trees_list), dtype=np.float64)
    for j, k in enumerate(n_trees_list):
        if model.kind == "gb":
            pred = model.f0 + model.learning_rate * cums[k - 1]
        else:
            pred = cums[k - 1] / k
        out[j] = mse(y_val, pred)
    return out


def _cell_key(params: HyperParams) -> tuple:
    # deterministic tie-breaking: smaller ensembles, then lower learning
    # rate, then fewer candidate features, then shallower boosting trees
    lr = params.gb_learning_rate if params.learner == "gb" else 0.0
    depth = params.gb_max_depth if params.learner == "gb" else 0
    return (params.n_trees, lr, _FEATURE_RANK[params.max_features], depth)


def _fit_staged_task(args):
    X, y, train_idx, val_idx, params, n_trees_list = args
    model = fit_ensemble(X[train_idx], y[train_idx], params)
    return _staged_mse(model, X[val_idx], y[val_idx], n_trees_list)


def _refit_score_task(args):
    X, y, train_idx, test_idx, params = args
    model = fit_ensemble(X[train_idx], y[train_idx], params)
    pred = model.predict(X[test_idx])
    return pred, mse(y[test_idx], pred), r2(y[test_idx], pred)


def _run_tasks(tasks, jobs: int, fn=_fit_staged_task):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


def _select_best(profiles, grid, fold_mses) -> HyperParams:
    """fold_mses[(profile_idx, fold)] -> per-n_trees mse array; pick the cell
    with the lowest mean validation MSE under the canonical tie order."""
    best = None
    for pi, prof in enumerate(profiles):
        rows = [fold_mses[(pi, f)] for f in sorted(f for p, f in fold_mses if p == pi)]
        mean_mse = np.mean(rows, axis=0)
        for j, k in enumerate(grid.n_trees):
            cell = replace(prof, n_trees=k)
            key = (float(mean_mse[j]),) + _cell_key(cell)
            if best is None or key < best[0]:
                best = (key, cell)
    return best[1]


# ---------------------------------------------------------------------------
# Nested cross-validation (geographic out-of-sample)
# ---------------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    params: HyperParams
    mse: float
    r2: float
    test_ids: tuple[str, ...]
    y_true: np.ndarray
    y_pred: np.ndarray


@dataclass
class NestedCVResult:
    learner: str
    subset: str
    crime_type: str
    year: int
    seed: int
    folds: list[FoldResult]
    runtime_s: float = 0.0

    @property
    def mse_mean(self) -> float:
        return float(np.mean([f.mse for f in self.folds]))

    @property
    def mse_sd(self) -> float:
        return float(np.std([f.mse for f in self.folds]))

    @property
    def r2_mean(self) -> float:
        return float(np.mean([f.r2 for f in self.folds]))

    @property
    def r2_sd(self) -> float:
        return float(np.std([f.r2 for f in self.folds]))

    def to_record(self) -> dict:
        return {
            "split": "geographic",
            "learner": self.learner, "subset": self.subset,
            "crime_type": self.crime_type, "year": self.year, "seed": self.seed,
            "mse_mean": self.mse_mean, "mse_sd": self.mse_sd,
            "r2_mean": self.r2_mean, "r2_sd": self.r2_sd,
            "folds": [
                {
                    "fold": f.fold,
                    "params": _params_dict(f.params),
                    "mse": f.mse, "r2": f.r2,
                    "test_tracts": list(f.test_ids),
                    "y_true": [float(v) for v in f.y_true],
                    "y_pred": [float(v) for v in f.y_pred],
                }
                for f in self.folds
            ],
        }


def _params_dict(p: HyperParams) -> dict:
    d = {"learner": p.learner, "n_trees": p.n_trees, "seed": p.seed}
    if p.learner in ("rf", "et"):
        d["max_features"] = p.max_features
    else:
        d["gb_max_depth"] = p.gb_max_depth
        d["gb_learning_rate"] = p.gb_learning_rate
    return d


def nested_cv_arrays(X, y, tract_ids, learner: str, grid: Grid | None = None, *,
                     seed: int = 0, n_outer: int = 5, n_inner: int = 2,
                     jobs: int = 1) -> list[FoldResult]:
    """Core nested CV over prebuilt arrays (the dataset-level wrapper is
    nested_cv). Outer-fold test tracts never reach the inner loop."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if learner not in ("rf", "et", "gb"):
        raise ValueError(f"unknown learner {learner!r}")
    grid = (grid or default_grid(learner)).validate()
    plan = make_split_plan(tract_ids, n_outer=n_outer, n_inner=n_inner, seed=seed)
    profiles = _grid_profiles(learner, grid, seed)

    tasks = []
    keys = []
    for o in range(n_outer):
        for pi, prof in enumerate(profiles):
            for i in range(n_inner):
                tr, val = plan.inner_split(o, i)
                tasks.append((X, y, tr, val, prof, grid.n_trees))
                keys.append((o, pi, i))
    results = _run_tasks(tasks, jobs)

    chosen = []
    refits = []
    for o in range(n_outer):
        fold_mses = {(pi, i): res for (oo, pi, i), res in zip(keys, results) if oo == o}
        best = _select_best(profiles, grid, fold_mses)
        train, test = plan.outer_split(o)
        chosen.append((best, test))
        refits.append((X, y, train, test, best))
    scored = _run_tasks(refits, jobs, fn=_refit_score_task)

    folds = []
    for o, ((best, test), (pred, fold_mse, fold_r2)) in enumerate(zip(chosen, scored)):
        folds.append(FoldResult(
            fold=o, params=best, mse=fold_mse, r2=fold_r2,
            test_ids=tuple(plan.tract_ids[t] for t in test),
            y_true=y[test].copy(), y_pred=pred,
        ))
    return folds


def nested_cv(dataset: RegionDataset, year: int, crime_type: str, subset: str,
              learner: str, grid: Grid | None = None, seed: int = 0, *,
              n_outer: int = 5, n_inner: int = 2, jobs: int = 1,
              include_race: bool = True, diversity_mode: str = "smoothed") -> NestedCVResult:
    """Geographic out-of-sample protocol: 5 outer assessment folds, 2 inner
    selection folds, selection by mean inner MSE."""
    t0 = time.perf_counter()
    matrix = build_matrix(dataset, year, subset, include_race=include_race,
                          diversity_mode=diversity_mode)
    target = transform_target(counts_for(dataset, year, crime_type), crime_type, year)
    folds = nested_cv_arrays(matrix.values, target.y, matrix.tract_ids, learner,
                             grid, seed=seed, n_outer=n_outer, n_inner=n_inner, jobs=jobs)
    return NestedCVResult(learner=learner, subset=subset, crime_type=crime_type,
                          year=int(year), seed=seed, folds=folds,
                          runtime_s=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Temporal holdout (train year T, test year T+1)
# ---------------------------------------------------------------------------

@dataclass
class HoldoutResult:
    learner: str
    subset: str
    crime_type: str
    train_year: int
    test_year: int
    seed: int
    params: HyperParams
    mse: float
    r2: float
    tract_ids: tuple[str, ...]
    y_true: np.ndarray
    y_pred: np.ndarray
    runtime_s: float = 0.0

    def to_record(self) -> dict:
        return {
            "split": "temporal",
            "learner": self.learner, "subset": self.subset,
            "crime_type": self.crime_type,
            "train_year": self.train_year, "test_year": self.test_year,
            "seed": self.seed, "params": _params_dict(self.params),
            "mse": self.mse, "r2": self.r2,
            "tracts": list(self.tract_ids),
            "y_true": [float(v) for v in self.y_true],
            "y_pred": [float(v) for v in self.y_pred],
        }


def _kfold_select(X, y, learner: str, grid: Grid, seed: int, n_folds: int,
                  jobs: int) -> HyperParams:
    """k-fold grid selection on one matrix (the temporal-protocol and
    train-command selection stage)."""
    n = len(y)
    if n < n_folds:
        raise ValueError("fewer tracts than selection folds")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    fold_of = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(_chunk_assign(rng, np.arange(n), n_folds)):
        fold_of[chunk] = f
    profiles = _grid_profiles(learner, grid, seed)
    tasks = []
    keys = []
    for pi, prof in enumerate(profiles):
        for f in range(n_folds):
            tr = np.flatnonzero(fold_of != f)
            val = np.flatnonzero(fold_of == f)
            tasks.append((X, y, tr, val, prof, grid.n_trees))
            keys.append((pi, f))
    results = _run_tasks(tasks, jobs)
    return _select_best(profiles, grid, dict(zip(keys, results)))


def select_and_fit(dataset: RegionDataset, year: int, crime_type: str, subset: str,
                   learner: str, grid: Grid | None = None, seed: int = 0, *,
                   n_select_folds: int = 5, jobs: int = 1,
                   include_race: bool = True, diversity_mode: str = "smoothed"):
    """Grid-select by k-fold CV on one year, refit on every tract, and
    return (model, chosen params). The trained-model entry point behind the
    train command."""
    if learner not in ("rf", "et", "gb"):
        raise ValueError(f"unknown learner {learner!r}")
    grid = (grid or default_grid(learner)).validate()
    matrix = build_matrix(dataset, year, subset, include_race=include_race,
                          diversity_mode=diversity_mode)
    y = transform_target(counts_for(dataset, year, crime_type)).y
    best = _kfold_select(matrix.values, y, learner, grid, seed, n_select_folds, jobs)
    model = fit_ensemble(matrix.values, y, best)
    model.feature_names = matrix.names
    return model, best


def temporal_holdout(dataset: RegionDataset, train_year: int, test_year: int,
                     crime_type: str, subset: str, learner: str,
                     grid: Grid | None = None, seed: int = 0, *,
                     n_select_folds: int = 5, jobs: int = 1,
                     include_race: bool = True, diversity_mode: str = "smoothed",
                     allow_same_year: bool = False) -> HoldoutResult:
    """Select hyper-parameters by k-fold CV on the train year, refit on the
    whole train year, score on the test year (features recomputed per
    year). Same-year evaluation is a memorization test switch only."""
    if train_year == test_year and not allow_same_year:
        raise ValueError("train and test year coincide; pass allow_same_year=True "
                         "if you really want the memorization check")
    t0 = time.perf_counter()
    if learner not in ("rf", "et", "gb"):
        raise ValueError(f"unknown learner {learner!r}")
    grid = (grid or default_grid(learner)).validate()
    m_train = build_matrix(dataset, train_year, subset, include_race=include_race,
                           diversity_mode=diversity_mode)
    m_test = build_matrix(dataset, test_year, subset, include_race=include_race,
                          diversity_mode=diversity_mode)
    y_train = transform_target(counts_for(dataset, train_year, crime_type)).y
    y_test = transform_target(counts_for(dataset, test_year, crime_type)).y

    best = _kfold_select(m_train.values, y_train, learner, grid, seed,
                         n_select_folds, jobs)
    model = fit_ensemble(m_train.values, y_train, best)
    pred = model.predict(m_test.values)
    return HoldoutResult(
        learner=learner, subset=subset, crime_type=crime_type,
        train_year=int(train_year), test_year=int(test_year), seed=seed,
        params=best, mse=mse(y_test, pred), r2=r2(y_test, pred),
        tract_ids=m_test.tract_ids, y_true=y_test.copy(), y_pred=pred,
        runtime_s=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# Bootstrap feature importance
# ---------------------------------------------------------------------------

@dataclass
class ImportanceTable:
    learner: str
    subset: str
    crime_type: str
    year: int
    n_boot: int
    frac: float
    feature_names: tuple[str, ...]
    samples: np.ndarray  # (n_boot, n_features) importance per resample

    def ranking(self) -> list[dict]:
        med = np.median(self.samples, axis=0)
        q1 = np.percentile(self.samples, 25.0, axis=0)
        q3 = np.percentile(self.samples, 75.0, axis=0)
        lo = self.samples.min(axis=0)
        hi = self.samples.max(axis=0)
        firsts = np.zeros(len(self.feature_names), dtype=np.int64)
        for row in self.samples:
            firsts[int(np.argmax(row))] += 1
        order = sorted(range(len(self.feature_names)),
                       key=lambda i: (-med[i], self.feature_names[i]))
        return [
            {
                "rank": r + 1,
                "feature": self.feature_names[i],
                "median": float(med[i]),
                "q1": float(q1[i]),
                "q3": float(q3[i]),
                "lo": float(lo[i]),
                "hi": float(hi[i]),
                "times_ranked_first": int(firsts[i]),
            }
            for r, i in enumerate(order)
        ]

    def write_csv(self, path) -> None:
        import csv

        cols = ("rank", "feature", "median", "q1", "q3", "lo", "hi", "times_ranked_first")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.ranking():
                w.writerow([row[c] if c in ("rank", "feature", "times_ranked_first")
                            else repr(row[c]) for c in cols])


def _boot_task(args):
    X, y, idx, params = args
    model = fit_ensemble(X[idx], y[idx], params)
    return impurity_importance(model)


def bootstrap_importance(dataset: RegionDataset, year: int, crime_type: str,
                         subset: str = "full", learner: str = "gb",
                         params: HyperParams | None = None, n_boot: int = 100,
                         frac: float = 0.8, seed: int = 0, *, jobs: int = 1,
                         include_race: bool = True,
                         diversity_mode: str = "smoothed") -> ImportanceTable:
    """Importance stability under resampling: refit on `n_boot` random
    subsamples of `frac` of the tracts and rank features by the median of
    their impurity importance."""
    if not 0.0 < frac <= 1.0:
        raise ValueError("frac must be in (0, 1]")
    matrix = build_matrix(dataset, year, subset, include_race=include_race,
                          diversity_mode=diversity_mode)
    y = transform_target(counts_for(dataset, year, crime_type)).y
    if params is None:
        params = HyperParams(learner=learner, n_trees=150, gb_max_depth=3,
                             gb_learning_rate=0.1, max_features="all", seed=seed)
    else:
        params = replace(params, learner=learner)
    n = len(y)
    size = max(1, int(round(frac * n)))
    tasks = []
    for b in range(n_boot):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, b)))
        idx = rng.permutation(n)[:size]
        tasks.append((matrix.values, y, idx, params))
    if jobs <= 1 or len(tasks) <= 1:
        rows = [_boot_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_boot_task, tasks, chunksize=4))
    return ImportanceTable(
        learner=learner, subset=subset, crime_type=crime_type, year=int(year),
        n_boot=n_boot, frac=frac, feature_names=matrix.names,
        samples=np.stack(rows),
    )


# ---------------------------------------------------------------------------
# Residual layers
# ---------------------------------------------------------------------------

@dataclass
class ResidualLayer:
    crime_type: str
    year: int
    tract_ids: tuple[str, ...]
    y: np.ndarray
    y_hat: np.ndarray
    error: np.ndarray
    rounded_error: np.ndarray
    observed_counts: np.ndarray
    predicted_counts: np.ndarray

    @property
    def in_band_count(self) -> int:
        """Tracts with |error| < 0.5 on the transformed scale."""
        return int(np.count_nonzero(np.abs(self.error) < 0.5))

    def histogram(self) -> dict[int, int]:
        vals, cnt = np.unique(self.rounded_error, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, cnt)}


def residual_layer(model: EnsembleModel, matrix: FeatureMatrix,
                   target: TargetVector) -> ResidualLayer:
    """Per-tract errors on the transformed scale, rounded to integer
    precision, plus back-transformed counts for mapping."""
    pred = model.predict(matrix.values)
    err = target.y - pred
    return ResidualLayer(
        crime_type=target.crime_type, year=target.year,
        tract_ids=tuple(matrix.tract_ids),
        y=target.y.copy(), y_hat=pred, error=err,
        rounded_error=np.rint(err).astype(np.int64),
        observed_counts=target.raw.copy(),
        predicted_counts=back_transform(pred),
    )


def export_residual_geojson(layer: ResidualLayer, tracts, path) -> None:
    """Join errors onto tract geometry as a feature collection that the
    tract loader can read back."""
    from .ingest import tracts_to_geojson

    by_id = {t.tract_id: t for t in tracts}
    base = tracts_to_geojson([by_id[tid] for tid in layer.tract_ids])
    for feature, tid, i in zip(base["features"], layer.tract_ids, range(len(layer.tract_ids))):
        feature["properties"].update({
            "tract_id": tid,
            "y": float(layer.y[i]),
            "y_hat": float(layer.y_hat[i]),
            "error": float(layer.error[i]),
            "rounded_error": int(layer.rounded_error[i]),
            "observed_count": int(layer.observed_counts[i]),
            "predicted_count": int(layer.predicted_counts[i]),
        })
    Path(path).write_text(json.dumps(base, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------

class EvalReport:
    """Accumulates result records and renders the machine-readable JSON and
    a compact text table (learners x subsets)."""

    def __init__(self):
        self.records: list[dict] = []

    def add(self, result: NestedCVResult | HoldoutResult) -> None:
        self.records.append(result.to_record())

    def to_json(self) -> str:
        return json.dumps({"format": "tractcast-report/1", "records": self.records},
                          sort_keys=True, indent=1)

    def to_text(self) -> str:
        lines = []
        combos = sorted({(r["split"], r.get("year", r.get("test_year")), r["crime_type"])
                         for r in self.records})
        for split, year, ct in combos:
            rows = [r for r in self.records
                    if r["split"] == split and r.get("year", r.get("test_year")) == year
                    and r["crime_type"] == ct]
            subsets = [s for s in SUBSETS if any(r["subset"] == s for r in rows)]
            lines.append(f"== {split} | year {year} | {ct} ==")
            header = f"{'learner':<10}" + "".join(f"{s:>28}" for s in subsets)
            lines.append(header)
            for learner in ("rf", "et", "gb"):
                cells = []
                for s in subsets:
                    match = [r for r in rows if r["subset"] == s and r["learner"] == learner]
                    if not match:
                        cells.append(f"{'-':>28}")
                        continue
                    r = match[0]
                    if "mse_mean" in r:
                        cells.append(f"{r['mse_mean']:.2f}±{r['mse_sd']:.2f} "
                                     f"R²={r['r2_mean']:.2f}±{r['r2_sd']:.2f}".rjust(28))
                    else:
                        cells.append(f"{r['mse']:.2f} R²={r['r2']:.2f}".rjust(28))
                lines.append(f"{learner:<10}" + "".join(cells))
            lines.append("")
        return "\n".join(lines)
