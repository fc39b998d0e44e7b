"""Tests for configuration, helpers and report writing"""
import json
import os

import numpy as np
import pandas as pd
import pytest

from utils.config import Config, ExperimentConfig, load_flat_json, validate_experiment_config
from utils.errors import ArgumentError, ConfigError
from utils.helpers import (
    ProgressTracker,
    chunk_sizes,
    dataset_slug,
    format_float,
    keyed_rng,
    mean_and_std,
    parse_int_list,
    require,
    validate_count,
    validate_probability,
)
from utils.reporting import ReportWriter, dataframe_to_csv_text, json_text


def _write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


class TestConfig:
    def test_defaults(self):
        cfg = Config()
        assert cfg.get("folds") == 10
        assert cfg.get("rate_exponents") == [1, 2, 3, 4, 5, 6, 7]
        assert cfg.get("alpha") == 0.01
        assert cfg.get("epoch_size") == 25000
        assert cfg.get("relationship_backend") == "aggregated"
        assert cfg.get("epoch_backend") == "per_message"
        assert cfg.output_dir == "results"

    def test_file_overrides_defaults(self, tmp_path):
        cfg = Config(_write_json(tmp_path / "c.json", {"folds": 3, "seed": 7, "bogus": 1}))
        assert cfg.get("folds") == 3
        assert cfg.get("seed") == 7
        assert cfg.get("bogus") is None

    def test_environment_config_file(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FMD_CONFIG_FILE", _write_json(tmp_path / "c.json", {"folds": 2}))
        assert Config().get("folds") == 2

    def test_environment_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FMD_OUTPUT_DIR", str(tmp_path / "out"))
        assert Config().output_dir == str(tmp_path / "out")
        cfg = Config(_write_json(tmp_path / "c.json", {"output_dir": "explicit"}))
        assert cfg.output_dir == "explicit"

    def test_file_default_value_beats_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FMD_OUTPUT_DIR", str(tmp_path / "env"))
        cfg = Config(_write_json(tmp_path / "c.json", {"output_dir": "results"}))
        assert cfg.output_dir == "results"
        cfg.set("output_dir", "results")
        assert cfg.output_dir == "results"

    def test_update_skips_none(self):
        cfg = Config()
        cfg.update({"folds": 4, "seed": None})
        assert cfg.get("folds") == 4
        assert cfg.get("seed") is None

    def test_save_round_trip(self, tmp_path):
        cfg = Config()
        cfg.set("folds", 6)
        target = str(tmp_path / "saved" / "config.json")
        cfg.save_config(target)
        assert Config(target).get("folds") == 6

    def test_rejects_nested(self, tmp_path):
        with pytest.raises(ConfigError):
            load_flat_json(_write_json(tmp_path / "c.json", {"folds": {"n": 3}}))

    def test_rejects_bad_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{folds: 3")
        with pytest.raises(ConfigError):
            load_flat_json(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            Config(str(tmp_path / "absent.json"))


class TestExperimentConfig:
    def test_flags_override_file(self, tmp_path):
        cfg = Config(_write_json(tmp_path / "c.json", {"dataset_path": "a.txt", "folds": 3}))
        experiment = ExperimentConfig.from_sources(cfg, {"folds": 1, "alpha": None, "rate_exponents": "1..3"})
        assert experiment.folds == 1
        assert experiment.alpha == 0.01
        assert experiment.rate_exponents == [1, 2, 3]
        assert experiment.dataset_path == "a.txt"

    def test_dataset_required(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_sources(Config(), {})

    @pytest.mark.parametrize("override", [
        {"folds": 0},
        {"alpha": 1.5},
        {"epoch_mode": "sliding"},
        {"relationship_backend": "magic"},
        {"epoch_backend": "aggregated"},
        {"rate_exponents": [65]},
        {"rate_exponents": "1..x"},
        {"threads": -1},
    ])
    def test_invalid(self, override):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_sources(Config(), dict(dataset_path="a.txt", **override))

    def test_seed_and_dict(self):
        experiment = ExperimentConfig("a.txt").with_seed(5)
        assert experiment.seed == 5
        assert experiment.to_dict()["dataset_path"] == "a.txt"
        assert validate_experiment_config(experiment) == (True, "")


class TestHelpers:
    def test_parse_int_list(self):
        assert parse_int_list("1..3, 5 # trailing\n7") == [1, 2, 3, 5, 7]
        with pytest.raises(ValueError):
            parse_int_list("5..1")

    def test_validators(self):
        assert validate_probability(0.5) == (True, "")
        assert not validate_probability(0.0, open_interval=True)[0]
        assert not validate_probability("x")[0]
        assert validate_count(3, "n", minimum=1) == (True, "")
        assert not validate_count(True, "n")[0]
        assert not validate_count(2.0, "n")[0]
        with pytest.raises(ArgumentError):
            require(validate_count(-1, "n"))
        with pytest.raises(ConfigError):
            require(validate_count(-1, "n"), ConfigError)

    def test_keyed_streams(self):
        a = keyed_rng(1, 2, 3).random(5)
        assert np.array_equal(a, keyed_rng(1, 2, 3).random(5))
        assert not np.array_equal(a, keyed_rng(1, 2, 4).random(5))
        assert not np.array_equal(a, keyed_rng(2, 2, 3).random(5))

    def test_small_helpers(self):
        assert chunk_sizes(10, 4) == [4, 4, 2]
        assert chunk_sizes(8, 4) == [4, 4]
        assert mean_and_std([1.0]) == (1.0, 0.0)
        assert mean_and_std([1.0, 3.0])[1] == pytest.approx(np.sqrt(2.0))
        assert dataset_slug("data/CollegeMsg.txt") == "CollegeMsg"
        assert dataset_slug("email-Eu-core-temporal.txt") == "email-Eu-core-temporal"
        assert format_float(float("inf")) == "inf"
        assert format_float(1.0 / 3.0, 3) == "0.333"

    def test_progress_tracker(self):
        tracker = ProgressTracker(4, label="fold")
        tracker.update("a")
        tracker.update("b", increment=3)
        tracker.add_error("boom")
        assert tracker.is_complete()
        assert tracker.get_progress() == 100.0
        assert tracker.errors == ["boom"]
        assert ProgressTracker(0).get_progress() == 100.0


class TestReporting:
    def test_csv_text_is_canonical(self):
        text = dataframe_to_csv_text(pd.DataFrame({"a": [1, 2], "b": [0.1, 1.0 / 3.0]}))
        assert text == "a,b\n1,0.1\n2,0.3333333333\n"

    def test_json_text(self):
        text = json_text({"b": np.int64(2), "a": float("inf"), "c": np.array([1.5])})
        assert json.loads(text) == {"a": "inf", "b": 2, "c": [1.5]}
        assert text.index('"a"') < text.index('"b"')

    def test_writer(self, tmp_path):
        writer = ReportWriter(str(tmp_path / "out"))
        path = writer.write_csv("x.csv", pd.DataFrame({"a": [1]}))
        writer.write_json("y.json", {"k": 1})
        assert os.path.exists(path)
        assert writer.written == [path, writer.path("y.json")]
        assert not [name for name in os.listdir(tmp_path / "out") if name.startswith(".tmp-")]
