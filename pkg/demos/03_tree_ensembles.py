"""The from-scratch tree ensembles: random forest, extremely randomized
trees, and gradient boosting, with impurity importance and partial
dependence.

Run:  python demos/03_tree_ensembles.py
"""
import numpy as np

from tractcast.evaluation import counts_for, r2, transform_target
from tractcast.features import build_matrix
from tractcast.model import (
    HyperParams,
    fit_extra_trees,
    fit_gradient_boosting,
    fit_random_forest,
    impurity_importance,
    partial_dependence,
)
from tractcast.synth import SynthConfig, generate_city

city = generate_city(SynthConfig(seed=42, n_tracts=100, cell_size=1500.0,
                                 taxi_per_tract=10.0, station_rate=0.2))
matrix = build_matrix(city.dataset, 2015, "full")
y = transform_target(counts_for(city.dataset, 2015, "total")).y

rng = np.random.default_rng(0)
test = rng.permutation(len(y))[:20]
train = np.setdiff1d(np.arange(len(y)), test)
Xtr, ytr = matrix.values[train], y[train]
Xte, yte = matrix.values[test], y[test]

print("holdout R2 on 20 unseen tracts (log counts):")
models = {}
for name, fitter, params in [
    ("random forest", fit_random_forest,
     HyperParams(learner="rf", n_trees=200, max_features="third", seed=0)),
    ("extra trees", fit_extra_trees,
     HyperParams(learner="et", n_trees=200, max_features="third", seed=0)),
    ("gradient boosting", fit_gradient_boosting,
     HyperParams(learner="gb", n_trees=200, gb_max_depth=3,
                 gb_learning_rate=0.1, seed=0)),
]:
    model = fitter(Xtr, ytr, params)
    models[name] = model
    print(f"  {name:<18} R2 = {r2(yte, model.predict(Xte)):.3f}")

gb = models["gradient boosting"]
imp = impurity_importance(gb)
order = np.argsort(imp)[::-1]
print("\ntop impurity importances (gradient boosting):")
for j in order[:8]:
    bar = "#" * int(60 * imp[j] / imp[order[0]])
    print(f"  {matrix.names[j]:<22} {imp[j]:.3f} {bar}")

feature = "population"
j = matrix.names.index(feature)
grid, curve = partial_dependence(gb, matrix.values, j)
print(f"\npartial dependence of the prediction on {feature} "
      "(grid = background deciles):")
lo, hi = curve.min(), curve.max()
for v, c in zip(grid, curve):
    bar = "#" * int(40 * (c - lo) / (hi - lo + 1e-12))
    print(f"  {v:>10.0f} -> {c:.3f} {bar}")
