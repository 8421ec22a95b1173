"""tractcast: tract-level crime-count prediction from census and
human-mobility features.

Pipeline stages, one module each:
  geo         planar geometry kernel and buffered tract assignment
  ingest      loaders, validation, and the canonical cached dataset
  features    the per-tract feature registry and matrix assembly
  model       from-scratch tree ensembles (rf / et / gb) + interpretation
  evaluation  nested CV, temporal holdout, importance, residual layers
  synth       deterministic synthetic city with a known generating process
  cli         subcommand surface over one JSON config
"""

__version__ = "0.1.0"

from .geo import (  # noqa: F401
    PlanarPoint,
    PolygonShape,
    SpatialIndex,
    TractGeometry,
    assign_tracts,
    distance_point_polygon,
    point_in_polygon,
)
from .ingest import (  # noqa: F401
    CRIME_TYPES,
    DEFAULT_ONTOLOGY,
    RegionDataset,
    build_dataset,
)
from .features import (  # noqa: F401
    FeatureMatrix,
    build_matrix,
    diversity_index,
    local_quotients,
    offering_advantage,
)
from .model import (  # noqa: F401
    EnsembleModel,
    HyperParams,
    fit_extra_trees,
    fit_gradient_boosting,
    fit_random_forest,
    fit_tree,
    impurity_importance,
    partial_dependence,
)
from .evaluation import (  # noqa: F401
    bootstrap_importance,
    mse,
    nested_cv,
    r2,
    residual_layer,
    temporal_holdout,
    transform_target,
)
from .synth import SynthConfig, generate_city, oracle_features  # noqa: F401
