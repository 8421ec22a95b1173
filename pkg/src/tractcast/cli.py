"""Operator surface: subcommands over a single JSON config file.

    tractcast synth      -c cfg.json    generate a synthetic city on disk
    tractcast ingest     -c cfg.json    parse + validate sources, write cache
    tractcast features   -c cfg.json --year 2015 --subset full
    tractcast train      -c cfg.json    cross-validated fit, serialized model
    tractcast evaluate   -c cfg.json --split geographic|temporal|both
    tractcast importance -c cfg.json    bootstrap importance ranking CSV
    tractcast pdp        -c cfg.json --feature population
    tractcast residuals  -c cfg.json    residual geo-layer + histogram
    tractcast verify     -c cfg.json    re-check provenance hashes

Every output directory carries a provenance manifest (tool version, config
hash, input hashes, output hashes); reruns with identical inputs produce
byte-identical numeric outputs for any --jobs value. Exit codes: 0 success,
2 config error, 3 input/data error, 4 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .evaluation import (
    EvalReport,
    Grid,
    bootstrap_importance,
    counts_for,
    export_residual_geojson,
    nested_cv,
    residual_layer,
    select_and_fit,
    temporal_holdout,
    transform_target,
)
from .features import build_matrix
from .ingest import (
    DataError,
    LoadStats,
    bucket_taxi,
    build_dataset,
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
from .model import HyperParams, model_from_json, model_to_json, partial_dependence
from .synth import SynthConfig, generate_city, write_city

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class MissingPrerequisite(DataError):
    """A required cache or artifact is absent; the message names the
    command that produces it."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_provenance(out_dir: Path, command: str, cfg: RunConfig,
                      inputs: list[Path], outputs: list[Path]) -> None:
    doc = {
        "tool": {"name": "tractcast", "version": __version__},
        "command": command,
        "config_hash": cfg.hash,
        "inputs": {str(p): _sha256(p) for p in sorted(inputs)},
        "outputs": {p.name: _sha256(p) for p in sorted(outputs)},
    }
    (out_dir / f"{command}.provenance.json").write_text(
        json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def _out_dir(cfg: RunConfig) -> Path:
    d = cfg.path("out_dir")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_dataset(cfg: RunConfig):
    cache = cfg.path("cache_dir")
    if not (cache / "manifest.json").exists():
        raise MissingPrerequisite(cache, "manifest.json",
                                  "no ingest cache found; run `tractcast ingest` first")
    return load_cache(cache)


def _grid_from_config(cfg: RunConfig, learner: str) -> Grid | None:
    grids = cfg["evaluation"]["grids"]
    if grids is None or learner not in grids:
        return None
    g = grids[learner]
    kw = {}
    if "n_trees" in g:
        kw["n_trees"] = tuple(int(v) for v in g["n_trees"])
    if "max_features" in g:
        kw["max_features"] = tuple(g["max_features"])
    if "gb_max_depth" in g:
        kw["gb_max_depth"] = tuple(int(v) for v in g["gb_max_depth"])
    if "gb_learning_rate" in g:
        kw["gb_learning_rate"] = tuple(float(v) for v in g["gb_learning_rate"])
    if "n_trees" not in kw:
        raise ConfigError(f"evaluation.grids.{learner}: n_trees is required")
    return Grid(**kw)


def _model_path(cfg: RunConfig) -> Path:
    t = cfg["train"]
    return _out_dir(cfg) / f"model_{t['learner']}_{t['subset']}_{t['crime_type']}_{t['year']}.json"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    synth_cfg = SynthConfig.from_dict(cfg["synth"]) if cfg["synth"] else SynthConfig()
    city = generate_city(synth_cfg)
    out = cfg.path("synth_dir")
    out.mkdir(parents=True, exist_ok=True)
    write_city(city, out)
    outputs = sorted(p for p in out.iterdir() if p.is_file())
    _write_provenance(out, "synth", cfg, [], outputs)
    print(f"synthetic city: {synth_cfg.n_tracts} tracts, years {list(synth_cfg.years)} -> {out}")
    return EXIT_OK


def cmd_ingest(cfg: RunConfig, args) -> int:
    strict = cfg["parsing"]["strict"]
    years = cfg.model_years
    ontology = tuple(cfg["ontology"])
    inputs = [cfg.path("tracts"), cfg.path("events"), cfg.path("venues"),
              cfg.path("stations"), cfg.path("turnstile"), cfg.path("taxi"),
              *cfg.census_paths().values()]
    for p in inputs:
        if not p.exists():
            raise MissingPrerequisite(p, 0, f"input file missing: {p}; run `tractcast synth` "
                                            "or point paths.* at your data")
    stats = LoadStats()
    tracts = load_tracts(cfg.path("tracts"), units_per_mile=cfg["crs"]["units_per_mile"],
                         exclude=cfg["exclude_tracts"])
    events = load_events(cfg.path("events"), years, strict=strict, stats=stats)
    venues = load_venues(cfg.path("venues"), ontology=ontology, strict=strict)
    stations = load_stations(cfg.path("stations"), strict=strict)
    turnstile = load_turnstile(cfg.path("turnstile"), years, strict=strict)
    taxi = load_taxi(cfg.path("taxi"), years, strict=strict)
    census = {v: load_census(p, strict=strict) for v, p in cfg.census_paths().items()}

    dataset = build_dataset(
        tracts, census, cfg.vintage_of_year,
        events={y: [e for e in events if e.timestamp.year == y] for y in years},
        venues=venues, stations=stations,
        turnstile={y: [t for t in turnstile if t.interval_start.year == y] for y in years},
        taxi=bucket_taxi(taxi, years),
        buffer=cfg["crs"]["buffer"], ontology=ontology,
    )
    cache = cfg.path("cache_dir")
    write_cache(dataset, cache)
    outputs = sorted(p for p in cache.iterdir() if p.is_file() and p.name != "ingest.provenance.json")
    _write_provenance(cache, "ingest", cfg, inputs, outputs)
    n_events = {y: len(v) for y, v in dataset.events.items()}
    print(f"ingested {len(tracts)} tracts, events per year {n_events}, "
          f"{len(venues)} venues, {len(stations)} stations "
          f"(rows dropped outside years: {stats.dropped_year}) -> {cache}")
    return EXIT_OK


def cmd_features(cfg: RunConfig, args) -> int:
    dataset = _load_dataset(cfg)
    year = int(args.year if args.year is not None else cfg["evaluation"]["year"])
    subset = args.subset or "full"
    matrix = build_matrix(dataset, year, subset,
                          include_race=cfg["features"]["include_race"],
                          diversity_mode=cfg["features"]["diversity"])
    out = _out_dir(cfg)
    dest = out / f"features_{year}_{subset}.csv"
    matrix.write_csv(dest, manifest_extra={"config_hash": cfg.hash})
    _write_provenance(out, f"features_{year}_{subset}", cfg,
                      [cfg.path("cache_dir") / "manifest.json"],
                      [dest, Path(str(dest) + ".manifest.json")])
    print(f"{matrix.values.shape[0]} tracts x {matrix.values.shape[1]} features -> {dest}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    dataset = _load_dataset(cfg)
    t = cfg["train"]
    year = int(t["year"])
    model, best = select_and_fit(
        dataset, year, t["crime_type"], t["subset"], t["learner"],
        grid=_grid_from_config(cfg, t["learner"]),
        seed=int(cfg["evaluation"]["seed"]),
        n_select_folds=int(t["select_folds"]), jobs=cfg.jobs,
        include_race=cfg["features"]["include_race"],
        diversity_mode=cfg["features"]["diversity"])
    dest = _model_path(cfg)
    dest.write_text(model_to_json(model) + "\n", encoding="utf-8")
    _write_provenance(_out_dir(cfg), "train", cfg,
                      [cfg.path("cache_dir") / "manifest.json"], [dest])
    print(f"trained {t['learner']} on {t['subset']}/{t['crime_type']}/{year} "
          f"(n_trees={best.n_trees}) -> {dest}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    dataset = _load_dataset(cfg)
    ev = cfg["evaluation"]
    jobs = cfg.jobs
    feats = dict(include_race=cfg["features"]["include_race"],
                 diversity_mode=cfg["features"]["diversity"])
    report = EvalReport()
    timing = {}
    splits = ("geographic", "temporal") if args.split == "both" else (args.split,)
    for split in splits:
        for crime_type in ev["crime_types"]:
            for subset in ev["subsets"]:
                for learner in ev["learners"]:
                    grid = _grid_from_config(cfg, learner)
                    t0 = time.perf_counter()
                    if split == "geographic":
                        res = nested_cv(dataset, int(ev["year"]), crime_type, subset,
                                        learner, grid, int(ev["seed"]),
                                        n_outer=int(ev["outer_folds"]),
                                        n_inner=int(ev["inner_folds"]),
                                        jobs=jobs, **feats)
                    else:
                        res = temporal_holdout(dataset, int(ev["train_year"]),
                                               int(ev["test_year"]), crime_type, subset,
                                               learner, grid, int(ev["seed"]),
                                               jobs=jobs, **feats)
                    report.add(res)
                    timing[f"{split}/{crime_type}/{subset}/{learner}"] = time.perf_counter() - t0
    out = _out_dir(cfg)
    name = args.split
    report_path = out / f"report_{name}.json"
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    text_path = out / f"report_{name}.txt"
    text_path.write_text(report.to_text() + "\n", encoding="utf-8")
    # timing is observational and deliberately outside the provenance set
    (out / f"timing_{name}.json").write_text(
        json.dumps(timing, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    _write_provenance(out, f"evaluate_{name}", cfg,
                      [cfg.path("cache_dir") / "manifest.json"], [report_path, text_path])
    print(report.to_text())
    print(f"report -> {report_path}")
    return EXIT_OK


def cmd_importance(cfg: RunConfig, args) -> int:
    dataset = _load_dataset(cfg)
    imp = cfg["interpretation"]["importance"]
    params = HyperParams(learner=imp["learner"], n_trees=int(imp["n_trees"]),
                         gb_max_depth=int(imp["gb_max_depth"]),
                         gb_learning_rate=float(imp["gb_learning_rate"]),
                         seed=int(cfg["evaluation"]["seed"]))
    table = bootstrap_importance(
        dataset, int(imp["year"]), imp["crime_type"], imp["subset"], imp["learner"],
        params=params, n_boot=int(imp["n_boot"]), frac=float(imp["frac"]),
        seed=int(cfg["evaluation"]["seed"]), jobs=cfg.jobs,
        include_race=cfg["features"]["include_race"],
        diversity_mode=cfg["features"]["diversity"])
    out = _out_dir(cfg)
    dest = out / f"importance_{imp['year']}_{imp['crime_type']}_{imp['subset']}.csv"
    table.write_csv(dest)
    _write_provenance(out, "importance", cfg,
                      [cfg.path("cache_dir") / "manifest.json"], [dest])
    top = table.ranking()[:10]
    for row in top:
        print(f"{row['rank']:>3} {row['feature']:<28} median={row['median']:.4f}")
    print(f"importance table -> {dest}")
    return EXIT_OK


def _load_model(cfg: RunConfig):
    path = _model_path(cfg)
    if not path.exists():
        raise MissingPrerequisite(path, 0,
                                  "no trained model found; run `tractcast train` first")
    return model_from_json(path.read_text(encoding="utf-8")), path


def cmd_pdp(cfg: RunConfig, args) -> int:
    dataset = _load_dataset(cfg)
    model, model_file = _load_model(cfg)
    t = cfg["train"]
    matrix = build_matrix(dataset, int(t["year"]), t["subset"],
                          include_race=cfg["features"]["include_race"],
                          diversity_mode=cfg["features"]["diversity"])
    features = [args.feature] if args.feature else cfg["interpretation"]["pdp"]["features"]
    out = _out_dir(cfg)
    written = []
    for fname in features:
        if fname not in matrix.names:
            raise ConfigError(f"pdp: unknown feature {fname!r}")
        j = matrix.names.index(fname)
        grid, curve = partial_dependence(model, matrix.values, j)
        dest = out / f"pdp_{t['year']}_{t['crime_type']}_{fname}.csv"
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("feature", "value", "mean_prediction"))
            for v, c in zip(grid, curve):
                w.writerow((fname, repr(float(v)), repr(float(c))))
        written.append(dest)
    _write_provenance(out, "pdp", cfg, [model_file], written)
    print(f"pdp curves for {len(written)} feature(s) -> {out}")
    return EXIT_OK


def cmd_residuals(cfg: RunConfig, args) -> int:
    dataset = _load_dataset(cfg)
    model, model_file = _load_model(cfg)
    t = cfg["train"]
    year = int(t["year"])
    matrix = build_matrix(dataset, year, t["subset"],
                          include_race=cfg["features"]["include_race"],
                          diversity_mode=cfg["features"]["diversity"])
    target = transform_target(counts_for(dataset, year, t["crime_type"]), t["crime_type"], year)
    layer = residual_layer(model, matrix, target)
    out = _out_dir(cfg)
    geo_path = out / f"residuals_{year}_{t['crime_type']}.geojson"
    export_residual_geojson(layer, dataset.tracts, geo_path)
    hist_path = out / f"residuals_{year}_{t['crime_type']}_histogram.csv"
    with open(hist_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("rounded_error", "tracts"))
        for k, v in sorted(layer.histogram().items()):
            w.writerow((k, v))
    _write_provenance(out, "residuals", cfg, [model_file], [geo_path, hist_path])
    print(f"{layer.in_band_count} of {len(layer.tract_ids)} tracts with |error| < 0.5 "
          f"-> {geo_path}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    """Re-check every provenance manifest under the out/cache/synth dirs."""
    checked = failures = 0
    for base in (cfg.path("out_dir"), cfg.path("cache_dir"), cfg.path("synth_dir")):
        if not base.exists():
            continue
        for manifest in sorted(base.glob("*.provenance.json")):
            doc = json.loads(manifest.read_text(encoding="utf-8"))
            for rel, digest in doc.get("outputs", {}).items():
                target = base / rel
                checked += 1
                if not target.exists() or _sha256(target) != digest:
                    failures += 1
                    print(f"MISMATCH {target}")
            for src, digest in doc.get("inputs", {}).items():
                target = Path(src)
                if target.exists():
                    checked += 1
                    if _sha256(target) != digest:
                        failures += 1
                        print(f"MISMATCH {target}")
    print(f"verified {checked} artifacts, {failures} mismatch(es)")
    return EXIT_OK if failures == 0 else EXIT_DATA


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tractcast",
        description="Tract-level crime-count prediction from census and mobility features",
    )
    parser.add_argument("--version", action="version", version=f"tractcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", default=None, help="JSON config file")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker cap (identical numeric output for any value)")
        p.add_argument("--strict", dest="strict", action="store_true", default=None,
                       help="fail on the first malformed row (default)")
        p.add_argument("--lenient", dest="strict", action="store_false",
                       help="skip malformed rows with a tally")
        return p

    common(sub.add_parser("synth", help="generate a synthetic city on disk"))
    common(sub.add_parser("ingest", help="parse and cache the raw sources"))
    p = common(sub.add_parser("features", help="export a feature matrix CSV"))
    p.add_argument("--year", type=int, default=None)
    p.add_argument("--subset", default=None)
    common(sub.add_parser("train", help="grid-selected fit on one year, serialized model"))
    p = common(sub.add_parser("evaluate", help="nested CV and/or temporal holdout report"))
    p.add_argument("--split", choices=("geographic", "temporal", "both"), default="geographic")
    common(sub.add_parser("importance", help="bootstrap feature-importance ranking"))
    p = common(sub.add_parser("pdp", help="partial-dependence curve CSV"))
    p.add_argument("--feature", default=None)
    common(sub.add_parser("residuals", help="residual geo-layer and histogram"))
    common(sub.add_parser("verify", help="re-check provenance hashes"))
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "features": cmd_features,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "importance": cmd_importance,
    "pdp": cmd_pdp,
    "residuals": cmd_residuals,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides: dict = {}
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if getattr(args, "strict", None) is not None:
        overrides["parsing"] = {"strict": args.strict}
    try:
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # DataError and MissingPrerequisite are ValueErrors with loci;
        # argument errors from the library surface the same way
        if isinstance(exc, DataError):
            print(f"input error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - single operator surface
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
