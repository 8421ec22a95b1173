"""The complete evaluation protocol at demo scale: nested geographic CV,
temporal holdout, bootstrap importance ranking, and the residual layer.

Grids are shrunk so the demo finishes in under a minute; the acceptance
suite runs the full-size grids on a 400-tract city.

Run:  python demos/04_full_protocol.py
"""
import numpy as np

from tractcast.evaluation import (
    EvalReport,
    Grid,
    bootstrap_importance,
    counts_for,
    nested_cv,
    residual_layer,
    select_and_fit,
    temporal_holdout,
    transform_target,
)
from tractcast.features import build_matrix
from tractcast.synth import SynthConfig, generate_city, latent_r2_ceiling

city = generate_city(SynthConfig(seed=11, n_tracts=100, cell_size=1500.0,
                                 taxi_per_tract=10.0, station_rate=0.2))
ds = city.dataset

grids = {
    "rf": Grid(n_trees=(30, 60), max_features=("third", "all")),
    "et": Grid(n_trees=(30, 60), max_features=("third", "all")),
    "gb": Grid(n_trees=(30, 60), gb_max_depth=(1, 3), gb_learning_rate=(0.1,)),
}

report = EvalReport()
print("nested geographic CV (5 outer / 2 inner folds), 2015 total incidents:")
for subset in ("census", "full"):
    for learner in ("rf", "et", "gb"):
        res = nested_cv(ds, 2015, "total", subset, learner, grids[learner], seed=0)
        report.add(res)
        print(f"  {learner}/{subset:<8} R2 = {res.r2_mean:.2f} ± {res.r2_sd:.2f}   "
              f"MSE = {res.mse_mean:.2f} ± {res.mse_sd:.2f}")
print(f"  latent ceiling for this city: "
      f"{latent_r2_ceiling(city, 2015, 'total'):.2f}")

print("\ntemporal holdout (train 2014, test 2015):")
for subset in ("census", "full"):
    res = temporal_holdout(ds, 2014, 2015, "total", subset, "gb",
                           grids["gb"], seed=0)
    report.add(res)
    print(f"  gb/{subset:<8} R2 = {res.r2:.2f}   MSE = {res.mse:.2f}   "
          f"chosen n_trees = {res.params.n_trees}")

print("\nbootstrap importance (25 resamples of 80% of the tracts):")
table = bootstrap_importance(
    ds, 2015, "total", "full", "gb",
    params=None, n_boot=25, frac=0.8, seed=0)
for row in table.ranking()[:6]:
    print(f"  #{row['rank']:<2} {row['feature']:<22} median = {row['median']:.3f} "
          f"(first in {row['times_ranked_first']}/25 resamples)")

print("\nresidual layer for a tuned gradient-boosting model on 2015:")
model, params = select_and_fit(ds, 2015, "total", "full", "gb",
                               grids["gb"], seed=0)
target = transform_target(counts_for(ds, 2015, "total"), "total", 2015)
layer = residual_layer(model, build_matrix(ds, 2015, "full"), target)
n = len(layer.tract_ids)
print(f"  tracts with |error| < 0.5 (log scale): {layer.in_band_count} of {n}")
print(f"  rounded-error histogram: {layer.histogram()}")
