"""Run configuration: one JSON file drives every CLI subcommand.

The schema is validated before any work happens; unknown keys are rejected
so typos fail loudly. Flag overrides beat config values, which beat the
defaults below. The canonical hash of the resolved config is embedded in
every output manifest.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .features import SUBSETS
from .ingest import DEFAULT_ONTOLOGY
from .model import LEARNERS, MAX_FEATURES_CHOICES

__all__ = ["ConfigError", "RunConfig", "load_config", "default_config", "config_hash"]


class ConfigError(ValueError):
    """Configuration file or override rejected by schema validation."""


def default_config() -> dict:
    return {
        "version": 1,
        "paths": {
            "tracts": "synth_city/tracts.geojson",
            "events": "synth_city/events.csv",
            "venues": "synth_city/venues.csv",
            "stations": "synth_city/stations.csv",
            "turnstile": "synth_city/turnstile.csv",
            "taxi": "synth_city/taxi.csv",
            "census": {"base": "synth_city/census_base.csv"},
            "synth_dir": "synth_city",
            "cache_dir": "cache",
            "out_dir": "out",
        },
        "crs": {"units_per_mile": 5280.0, "buffer": 50.0},
        "years": {
            "model_years": [2014, 2015],
            "census_vintage_of_year": {"2014": "base", "2015": "base"},
        },
        "ontology": list(DEFAULT_ONTOLOGY),
        "exclude_tracts": [],
        "parsing": {"strict": True},
        "features": {"include_race": True, "diversity": "smoothed"},
        "evaluation": {
            "learners": ["rf", "et", "gb"],
            "subsets": ["census", "census_poi", "human_dynamics", "full"],
            "crime_types": ["total"],
            "seed": 0,
            "outer_folds": 5,
            "inner_folds": 2,
            "year": 2015,
            "train_year": 2014,
            "test_year": 2015,
            "grids": None,
        },
        "train": {
            "learner": "gb",
            "subset": "full",
            "crime_type": "total",
            "year": 2015,
            "select_folds": 5,
        },
        "interpretation": {
            "importance": {
                "learner": "gb",
                "subset": "full",
                "crime_type": "total",
                "year": 2015,
                "n_boot": 100,
                "frac": 0.8,
                "n_trees": 150,
                "gb_max_depth": 3,
                "gb_learning_rate": 0.1,
            },
            "pdp": {"features": ["population"]},
        },
        "synth": None,  # SynthConfig dict; None = library defaults
        "jobs": 1,
    }


def _is_str_list(v):
    return isinstance(v, list) and all(isinstance(x, str) for x in v)


def _validate_grid(g, where):
    allowed = {"n_trees", "max_features", "gb_max_depth", "gb_learning_rate"}
    if not isinstance(g, dict):
        raise ConfigError(f"{where}: grid must be an object")
    for key, val in g.items():
        if key not in allowed:
            raise ConfigError(f"{where}: unknown grid key {key!r}")
        if not isinstance(val, list) or not val:
            raise ConfigError(f"{where}.{key}: must be a non-empty list")
    if "max_features" in g and any(v not in MAX_FEATURES_CHOICES for v in g["max_features"]):
        raise ConfigError(f"{where}.max_features: values must be from {MAX_FEATURES_CHOICES}")


def _validate(cfg: dict) -> None:
    top = set(default_config())
    unknown = set(cfg) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if cfg["version"] != 1:
        raise ConfigError(f"unsupported config version {cfg['version']!r}")

    def check_keys(section, allowed):
        extra = set(cfg[section]) - set(allowed)
        if extra:
            raise ConfigError(f"{section}: unknown keys {sorted(extra)}")

    check_keys("paths", default_config()["paths"])
    if not isinstance(cfg["paths"]["census"], dict) or not cfg["paths"]["census"]:
        raise ConfigError("paths.census must map vintage name -> csv path")

    check_keys("crs", ("units_per_mile", "buffer"))
    if cfg["crs"]["buffer"] < 0:
        raise ConfigError("crs.buffer must be >= 0")
    if cfg["crs"]["units_per_mile"] <= 0:
        raise ConfigError("crs.units_per_mile must be > 0")

    check_keys("years", ("model_years", "census_vintage_of_year"))
    years = cfg["years"]["model_years"]
    if not isinstance(years, list) or not years:
        raise ConfigError("years.model_years must be a non-empty list")
    vmap = cfg["years"]["census_vintage_of_year"]
    for y in years:
        if str(y) not in vmap:
            raise ConfigError(f"years.census_vintage_of_year missing year {y}")
        if vmap[str(y)] not in cfg["paths"]["census"]:
            raise ConfigError(f"census vintage {vmap[str(y)]!r} has no path in paths.census")

    if not _is_str_list(cfg["ontology"]) or len(cfg["ontology"]) < 2:
        raise ConfigError("ontology must be a list of at least 2 category names")
    if len(set(cfg["ontology"])) != len(cfg["ontology"]):
        raise ConfigError("ontology names must be unique")
    if not _is_str_list(cfg["exclude_tracts"]):
        raise ConfigError("exclude_tracts must be a list of tract ids")

    check_keys("parsing", ("strict",))
    check_keys("features", ("include_race", "diversity"))
    if cfg["features"]["diversity"] not in ("smoothed", "laplace"):
        raise ConfigError("features.diversity must be 'smoothed' or 'laplace'")

    ev = cfg["evaluation"]
    check_keys("evaluation", default_config()["evaluation"])
    for learner in ev["learners"]:
        if learner not in LEARNERS:
            raise ConfigError(f"evaluation.learners: unknown learner {learner!r}")
    for subset in ev["subsets"]:
        if subset not in SUBSETS:
            raise ConfigError(f"evaluation.subsets: unknown subset {subset!r}")
    if ev["outer_folds"] < 2 or ev["inner_folds"] < 2:
        raise ConfigError("evaluation folds must be >= 2")
    if ev["grids"] is not None:
        if not isinstance(ev["grids"], dict):
            raise ConfigError("evaluation.grids must map learner -> grid")
        for learner, g in ev["grids"].items():
            if learner not in LEARNERS:
                raise ConfigError(f"evaluation.grids: unknown learner {learner!r}")
            _validate_grid(g, f"evaluation.grids.{learner}")

    check_keys("train", default_config()["train"])
    if cfg["train"]["learner"] not in LEARNERS:
        raise ConfigError(f"train.learner: unknown learner {cfg['train']['learner']!r}")
    if cfg["train"]["subset"] not in SUBSETS:
        raise ConfigError(f"train.subset: unknown subset {cfg['train']['subset']!r}")

    check_keys("interpretation", ("importance", "pdp"))
    imp = cfg["interpretation"]["importance"]
    extra = set(imp) - set(default_config()["interpretation"]["importance"])
    if extra:
        raise ConfigError(f"interpretation.importance: unknown keys {sorted(extra)}")
    pdp = cfg["interpretation"]["pdp"]
    extra = set(pdp) - {"features"}
    if extra:
        raise ConfigError(f"interpretation.pdp: unknown keys {sorted(extra)}")

    if cfg["synth"] is not None and not isinstance(cfg["synth"], dict):
        raise ConfigError("synth must be an object or null")
    if not isinstance(cfg["jobs"], int) or cfg["jobs"] < 0:
        raise ConfigError("jobs must be a nonnegative integer (0 = cpu count)")


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key not in ("census", "grids", "synth", "census_vintage_of_year"):
            out[key] = _merge(out[key], val, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()


class RunConfig:
    """Resolved configuration plus path helpers rooted at the config file."""

    def __init__(self, data: dict, root: Path):
        self.data = data
        self.root = Path(root)
        self.hash = config_hash(data)

    def __getitem__(self, key):
        return self.data[key]

    def path(self, key: str) -> Path:
        return self.root / self.data["paths"][key]

    def census_paths(self) -> dict[str, Path]:
        return {v: self.root / p for v, p in self.data["paths"]["census"].items()}

    @property
    def model_years(self) -> list[int]:
        return [int(y) for y in self.data["years"]["model_years"]]

    @property
    def vintage_of_year(self) -> dict[int, str]:
        return {int(y): v for y, v in self.data["years"]["census_vintage_of_year"].items()}

    @property
    def jobs(self) -> int:
        import os

        j = self.data["jobs"]
        return os.cpu_count() or 1 if j == 0 else j


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Load and validate a config file; `overrides` come from CLI flags and
    win over file values, which win over defaults."""
    base = default_config()
    root = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc.msg} (line {exc.lineno})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        unknown = set(user) - set(base)
        if unknown:
            raise ConfigError(f"{path}: unknown top-level keys: {sorted(unknown)}")
        base = _merge(base, user)
        root = path.parent
    if overrides:
        base = _merge(base, overrides)
    _validate(base)
    return RunConfig(base, root)
