import json
from pathlib import Path

import pytest

from tractcast.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from tractcast.config import ConfigError, default_config, load_config


def tiny_config(tmp_path: Path, **evaluation_overrides) -> Path:
    """A config wiring a 25-tract synthetic city through the whole pipeline
    with grids small enough for test time."""
    cfg = {
        "evaluation": {
            "subsets": ["census", "full"],
            "learners": ["rf", "gb"],
            "grids": {
                "rf": {"n_trees": [8, 16], "max_features": ["half"]},
                "et": {"n_trees": [8, 16], "max_features": ["half"]},
                "gb": {"n_trees": [8, 16], "gb_max_depth": [1, 2],
                       "gb_learning_rate": [0.2]},
            },
        },
        "train": {"learner": "gb", "subset": "full", "crime_type": "total",
                  "year": 2015, "select_folds": 3},
        "interpretation": {
            "importance": {"n_boot": 5, "n_trees": 10, "gb_max_depth": 1,
                           "gb_learning_rate": 0.3},
            "pdp": {"features": ["population", "venues_food"]},
        },
        "synth": {
            "seed": 13, "n_tracts": 25, "cell_size": 1200.0,
            "taxi_per_tract": 5.0, "subway_daily_mean": 200.0,
            "station_rate": 0.25, "checkin_mean": 20.0,
        },
    }
    for key, val in evaluation_overrides.items():
        cfg["evaluation"][key] = val
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestConfig:
    def test_defaults_validate(self):
        cfg = load_config(None)
        assert cfg["crs"]["buffer"] == 50.0
        assert cfg.hash == load_config(None).hash

    def test_unknown_top_level_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"surprise": 1}))
        with pytest.raises(ConfigError, match="surprise"):
            load_config(path)

    def test_unknown_nested_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"features": {"include_race": True, "extra": 1}}))
        with pytest.raises(ConfigError, match="extra"):
            load_config(path)

    def test_unknown_subset_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"evaluation": {"subsets": ["everything"]}}))
        with pytest.raises(ConfigError, match="everything"):
            load_config(path)

    def test_missing_vintage_mapping(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"years": {"model_years": [2014, 2015],
                                              "census_vintage_of_year": {"2014": "base"}}}))
        with pytest.raises(ConfigError, match="2015"):
            load_config(path)

    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"jobs": 4}))
        cfg = load_config(path, overrides={"jobs": 2})
        assert cfg["jobs"] == 2

    def test_hash_tracks_content(self):
        a = default_config()
        b = default_config()
        b["crs"]["buffer"] = 10.0
        from tractcast.config import config_hash

        assert config_hash(a) != config_hash(b)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the full subcommand chain once and share the workspace."""
    root = tmp_path_factory.mktemp("pipeline")
    cfg_path = tiny_config(root)
    for command in ("synth", "ingest", "train", "importance", "pdp", "residuals"):
        assert main([command, "-c", str(cfg_path)]) == EXIT_OK, command
    assert main(["features", "-c", str(cfg_path), "--year", "2015",
                 "--subset", "census"]) == EXIT_OK
    assert main(["evaluate", "-c", str(cfg_path), "--split", "both"]) == EXIT_OK
    return root, cfg_path


class TestPipeline:
    def test_outputs_exist(self, pipeline):
        root, _ = pipeline
        out = root / "out"
        assert (root / "synth_city" / "tracts.geojson").exists()
        assert (root / "cache" / "manifest.json").exists()
        assert (out / "features_2015_census.csv").exists()
        assert (out / "model_gb_full_total_2015.json").exists()
        assert (out / "report_both.json").exists()
        assert (out / "report_both.txt").exists()
        assert (out / "importance_2015_total_full.csv").exists()
        assert (out / "pdp_2015_total_population.csv").exists()
        assert (out / "residuals_2015_total.geojson").exists()

    def test_report_has_all_combos(self, pipeline):
        root, _ = pipeline
        doc = json.loads((root / "out" / "report_both.json").read_text())
        combos = {(r["split"], r["learner"], r["subset"]) for r in doc["records"]}
        assert len(combos) == 8  # 2 splits x 2 learners x 2 subsets

    def test_provenance_verifies(self, pipeline):
        root, cfg_path = pipeline
        assert main(["verify", "-c", str(cfg_path)]) == EXIT_OK

    def test_verify_detects_tampering(self, pipeline):
        root, cfg_path = pipeline
        target = root / "out" / "features_2015_census.csv"
        original = target.read_text()
        try:
            target.write_text(original + "# tampered\n")
            assert main(["verify", "-c", str(cfg_path)]) == EXIT_DATA
        finally:
            target.write_text(original)
        assert main(["verify", "-c", str(cfg_path)]) == EXIT_OK

    def test_rerun_is_byte_identical(self, pipeline):
        root, cfg_path = pipeline
        report = root / "out" / "report_both.json"
        features = root / "out" / "features_2015_census.csv"
        before = (report.read_bytes(), features.read_bytes())
        assert main(["evaluate", "-c", str(cfg_path), "--split", "both"]) == EXIT_OK
        assert main(["features", "-c", str(cfg_path), "--year", "2015",
                     "--subset", "census"]) == EXIT_OK
        assert (report.read_bytes(), features.read_bytes()) == before


class TestExitCodes:
    def test_unknown_subset_is_config_error_not_io(self, pipeline):
        root, cfg_path = pipeline
        code = main(["features", "-c", str(cfg_path), "--subset", "everything"])
        assert code == EXIT_CONFIG

    def test_missing_input_is_data_error(self, tmp_path):
        cfg_path = tiny_config(tmp_path)
        # no synth run yet: ingest inputs are absent
        assert main(["ingest", "-c", str(cfg_path)]) == EXIT_DATA

    def test_missing_cache_names_prerequisite(self, tmp_path, capsys):
        cfg_path = tiny_config(tmp_path)
        assert main(["features", "-c", str(cfg_path)]) == EXIT_DATA
        assert "tractcast ingest" in capsys.readouterr().err

    def test_bad_config_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["synth", "-c", str(path)]) == EXIT_CONFIG

    def test_nonexistent_config(self, tmp_path):
        assert main(["synth", "-c", str(tmp_path / "nope.json")]) == EXIT_CONFIG
