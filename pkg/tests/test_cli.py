"""Tests for the command-line entry point"""
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import pandas as pd
import pytest

from app import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main

REPO_ROOT = Path(__file__).resolve().parents[1]


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestCalc:
    def test_peedp(self, capsys):
        code, out, _ = _run(capsys, "calc", "peedp", "--p", "0.25")
        assert code == EXIT_OK
        assert float(out) == pytest.approx(1.386, abs=1e-3)

    def test_peedp_dyadic_notation(self, capsys):
        code, out, _ = _run(capsys, "calc", "peedp", "--p", "2^-2")
        assert float(out) == pytest.approx(1.386, abs=1e-3)

    def test_min_expose(self, capsys):
        code, out, _ = _run(capsys, "calc", "min-expose", "--out", "100", "--p", "0.05", "--alpha", "0.01")
        assert code == EXIT_OK
        assert out.strip() == "6"

    def test_min_expose_sweep(self, capsys):
        code, out, _ = _run(capsys, "calc", "min-expose", "--outs", "10,100,1000", "--exponents", "1..7")
        frame = pd.read_csv(io.StringIO(out))
        assert len(frame) == 21

    def test_min_rate(self, capsys):
        code, out, _ = _run(capsys, "calc", "min-rate", "--epoch-messages", "25000", "--in", "50")
        assert float(out) == pytest.approx(0.014848, abs=1e-6)

    def test_incoming_dp(self, capsys):
        code, out, _ = _run(capsys, "calc", "incoming-dp", "--M", "100", "--in", "10", "--p", "0.0625")
        row = pd.read_csv(io.StringIO(out)).iloc[0]
        assert row["epsilon"] == pytest.approx(7.208, abs=1e-3)
        assert row["log10_delta"] == pytest.approx(-2.52, abs=1e-2)
        assert row["delta"] == "3e-3"

    def test_incoming_dp_replay(self, capsys):
        code, out, _ = _run(capsys, "calc", "incoming-dp", "--M", "200", "--in", "10", "--p", "0.25", "--replay")
        row = pd.read_csv(io.StringIO(out)).iloc[0]
        assert bool(row["holds"])

    def test_incoming_dp_table(self, capsys):
        code, out, _ = _run(capsys, "calc", "incoming-dp", "--table")
        assert len(pd.read_csv(io.StringIO(out))) == 8

    def test_sybil(self, capsys):
        code, out, _ = _run(capsys, "calc", "sybil", "--U", "10", "--K", "2", "--N", "3")
        assert float(out) == pytest.approx(6 / 45)

    def test_ru_estimates(self, capsys):
        code, out, err = _run(capsys, "calc", "ru", "--U", "10", "--p", "0.2", "--exact", "--trials", "2000")
        frame = pd.read_csv(io.StringIO(out))
        assert frame["kind"].tolist() == ["approx_lower_bound", "exact", "monte_carlo"]
        assert "seed:" in err

    def test_ru_heatmap(self, capsys):
        code, out, _ = _run(capsys, "calc", "ru", "--heatmap", "--points", "4", "--max-users", "1000")
        frame = pd.read_csv(io.StringIO(out))
        assert list(frame.columns) == ["U", "p", "advantage"]
        assert len(frame) == 16

    def test_intersection(self, capsys):
        code, out, _ = _run(capsys, "calc", "intersection", "--U", "1000", "--p", "0.1", "--l", "3")
        assert float(out) == pytest.approx(1.0)

    def test_output_file(self, capsys, tmp_path):
        target = tmp_path / "table.csv"
        code, out, _ = _run(capsys, "calc", "incoming-dp", "--table", "--output", str(target))
        assert code == EXIT_OK and out == ""
        assert len(pd.read_csv(target)) == 8

    def test_argument_error_exit_code(self, capsys):
        code, _, err = _run(capsys, "calc", "incoming-dp", "--M", "100", "--in", "10", "--p", "0")
        assert code == EXIT_USAGE
        assert "usage" in err

    def test_capacity_error_exit_code(self, capsys):
        code, _, _ = _run(capsys, "calc", "ru", "--U", "40", "--p", "0.1", "--exact")
        assert code == EXIT_RUNTIME

    def test_bad_flag_value(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["calc", "peedp", "--p", "1.5"])
        assert info.value.code == EXIT_USAGE


class TestDatasetCommands:
    def test_ingest(self, capsys, tiny_edge_file, tmp_path):
        saved = tmp_path / "normalized.txt"
        code, out, _ = _run(capsys, "ingest", "--dataset", tiny_edge_file, "--seed", "3",
                            "--output-dir", str(tmp_path / "out"), "--save-edges", str(saved))
        assert code == EXIT_OK
        assert "self_loops_dropped=1" in out
        frame = pd.read_csv(tmp_path / "out" / "tiny" / "degrees.csv")
        assert list(frame.columns) == ["user_id", "in_degree", "out_degree", "rate"]
        assert saved.exists()

    def test_ingest_missing_file(self, capsys, tmp_path):
        code, _, err = _run(capsys, "ingest", "--dataset", str(tmp_path / "absent.txt"), "--seed", "1")
        assert code == EXIT_RUNTIME
        assert "absent.txt" in err

    def test_simulate_with_profile(self, capsys, small_edge_file, small_graph, tmp_path):
        user = int(small_graph.original_ids[0])
        code, out, _ = _run(capsys, "simulate", "--dataset", small_edge_file, "--seed", "5", "--threads", "1",
                            "--epoch-size", "100", "--output-dir", str(tmp_path),
                            "--profile-user", str(user), "--profile-exponents", "1,7")
        assert code == EXIT_OK
        base = tmp_path / "small-graph"
        assert list(pd.read_csv(base / "tags.csv").columns) == ["sender", "recipient", "genuine", "tags"]
        assert list(pd.read_csv(base / "epochs.csv").columns) == ["epoch", "user", "genuine", "tags"]
        profile = pd.read_csv(base / f"profile_user_{user}.csv")
        assert list(profile.columns) == ["epoch", "rate", "tag_probability", "genuine"]
        assert len(profile) == 10

    def test_reproduce_is_deterministic(self, capsys, small_edge_file, tmp_path):
        args = ["reproduce", "--dataset", small_edge_file, "--folds", "1", "--seed", "42",
                "--epoch-size", "100", "--threads", "1"]
        assert main(args + ["--output-dir", str(tmp_path / "a")]) == EXIT_OK
        assert main(args + ["--output-dir", str(tmp_path / "b")]) == EXIT_OK
        capsys.readouterr()
        dir_a, dir_b = tmp_path / "a" / "small-graph", tmp_path / "b" / "small-graph"
        names = sorted(os.listdir(dir_a))
        assert names == sorted(os.listdir(dir_b))
        for name in names:
            if name == "summary.json":
                continue
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes(), name
        summary_a = json.loads((dir_a / "summary.json").read_text())
        summary_b = json.loads((dir_b / "summary.json").read_text())
        summary_a["config"].pop("output_dir")
        summary_b["config"].pop("output_dir")
        assert summary_a == summary_b

    def test_reproduce_uses_config_file(self, capsys, small_edge_file, tmp_path):
        config_path = tmp_path / "experiment.json"
        config_path.write_text(json.dumps({"dataset_path": small_edge_file, "folds": 1, "seed": 1,
                                           "epoch_size": 250, "threads": 1,
                                           "output_dir": str(tmp_path / "from-config")}))
        code, out, _ = _run(capsys, "--config", str(config_path), "reproduce")
        assert code == EXIT_OK
        assert (tmp_path / "from-config" / "small-graph" / "summary.json").exists()

    def test_reproduce_self_loops_only(self, capsys, tmp_path):
        path = tmp_path / "loops.txt"
        path.write_text("1 1 5\n2 2 6\n")
        code, _, err = _run(capsys, "reproduce", "--dataset", str(path), "--folds", "1", "--seed", "1",
                            "--output-dir", str(tmp_path / "out"))
        assert code == EXIT_RUNTIME
        assert "self-loops" in err
        assert not (tmp_path / "out").exists()

    def test_reproduce_without_dataset(self, capsys):
        code, _, err = _run(capsys, "reproduce")
        assert code == EXIT_USAGE
        assert "dataset_path" in err


class TestGame:
    @pytest.fixture
    def game_file(self, tmp_path):
        path = tmp_path / "game.json"
        path.write_text(json.dumps({"f": 1, "L": 1000, "M": 20, "in_counts": [5, 5, 5, 5]}))
        return str(path)

    def _report(self, capsys, *argv):
        code, out, _ = _run(capsys, "game", *argv)
        assert code == EXIT_OK
        return json.loads(out)

    def test_best_response_dynamics(self, capsys, game_file):
        report = self._report(capsys, "br", "--game-config", game_file, "--seed", "1", "--full")
        assert report["converged"]
        assert report["final"]["rates"] == [0.0, 0.0, 0.0, 0.0]
        assert report["final_is_nash"]
        assert report["config"] == {"U": 4, "f": 1.0, "L": 1000.0, "M": 20, "in_counts": [5, 5, 5, 5]}
        assert len(report["trajectory"]) == report["changes"]
        assert len(report["potential_trace"]) == report["changes"] + 1
        assert len(report["profiles"]) == report["changes"] + 1
        assert report["profiles"][0] == report["initial"]["rates"]
        assert report["profiles"][-1] == report["final"]["rates"]
        comparison = report["so_comparison"]
        assert comparison["so_condition"]
        assert comparison["final_welfare"] == pytest.approx(-4 * 1000 - 4 * 5)
        assert comparison["welfare_gap"] == pytest.approx(comparison["so_welfare"] - comparison["final_welfare"])
        assert comparison["welfare_gap"] > 0

    def test_best_response_report_without_full(self, capsys, game_file):
        report = self._report(capsys, "br", "--game-config", game_file, "--rate", "0.5")
        assert "profiles" not in report
        assert "rates" not in report["final"]
        assert [move["user"] for move in report["trajectory"]] == [0, 1, 2, 3]
        assert all(move["rate"] == 0.0 for move in report["trajectory"])

    def test_nash_check(self, capsys, game_file):
        assert self._report(capsys, "nash-check", "--game-config", game_file)["is_nash"]
        assert not self._report(capsys, "nash-check", "--game-config", game_file, "--rate", "0.5")["is_nash"]
        assert not self._report(capsys, "nash-check", "--game-config", game_file,
                                "--profile", "0,0,0,0.25")["is_nash"]

    def test_social_optimum(self, capsys, game_file):
        report = self._report(capsys, "so", "--game-config", game_file, "--grid", "201")
        assert report["so_condition"]
        assert report["p_star"] > 0
        assert report["price_of_stability"]["experimental"]

    def test_potential_check(self, capsys, game_file):
        report = self._report(capsys, "potential-check", "--game-config", game_file, "--samples", "50",
                              "--seed", "3")
        assert report["holds"]

    def test_dataset_game(self, capsys, tiny_edge_file):
        report = self._report(capsys, "so", "--dataset", tiny_edge_file)
        assert report["M"] == 3
        assert report["L"] == pytest.approx(30.0)

    def test_missing_game_config(self, capsys):
        code, _, err = _run(capsys, "game", "so")
        assert code == EXIT_USAGE


class TestProcess:
    def test_missing_environment_config_file(self, tmp_path):
        env = dict(os.environ, FMD_CONFIG_FILE=str(tmp_path / "absent.json"))
        result = subprocess.run([sys.executable, "app.py", "calc", "peedp", "--p", "0.5"],
                                cwd=REPO_ROOT, env=env, capture_output=True, text=True)
        assert result.returncode == EXIT_USAGE
        assert "config file not found" in result.stderr
        assert "Traceback" not in result.stderr
