"""Command-line interface: exit codes, outputs, manifests, reproducibility."""

import json

import numpy as np
import pytest

from epimdp.cli import _parse_grid, main
from epimdp.metapop import load_mobility_csv


def _write_config(tmp_path, name="config.json", **payload):
    payload.setdefault("synthetic", {"districts": 1, "seed": 5})
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


class TestEntryPoint:
    def test_version_and_help_exit_zero(self, capsys):
        assert main(["--version"]) == 0
        assert "epimdp" in capsys.readouterr().out
        assert main(["--help"]) == 0
        assert main(["simulate", "--help"]) == 0

    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 2
        assert "No such command" in capsys.readouterr().err

    def test_config_errors_exit_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"r0": 2.0}))  # neither data nor synthetic
        assert main(["simulate", str(bad)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_config_file_is_reported(self, tmp_path, capsys):
        code = main(["simulate", str(tmp_path / "nope.json")])
        assert code in (2, 3)
        assert "error:" in capsys.readouterr().err

    def test_threads_option_validation(self, tmp_path, capsys):
        assert main(["--threads", "0", "gen-data", "--districts", "2",
                     "--out", str(tmp_path / "g")]) == 2
        assert main(["--threads", "1", "gen-data", "--districts", "2",
                     "--out", str(tmp_path / "g")]) == 0

    def test_grid_parser(self):
        assert _parse_grid("1.4:2.4:0.2") == [1.4, 1.6, 1.8, 2.0, 2.2, 2.4]
        assert _parse_grid("0,0.3,0.6,1.0") == [0.0, 0.3, 0.6, 1.0]
        with pytest.raises(Exception):
            _parse_grid("1:2:0")


class TestGenData:
    def test_writes_all_files(self, tmp_path, capsys):
        out = tmp_path / "data"
        assert main(["gen-data", "--districts", "4", "--seed", "1",
                     "--out", str(out)]) == 0
        for name in ("census.csv", "mobility.csv", "contacts.txt",
                     "manifest.json"):
            assert (out / name).exists()
        assert "census" in capsys.readouterr().out

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["gen-data", "--districts", "3", "--seed", "7",
                         "--out", str(out)]) == 0
        for name in ("census.csv", "mobility.csv", "contacts.txt",
                     "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_single_district_zero_mobility(self, tmp_path):
        out = tmp_path / "one"
        assert main(["gen-data", "--districts", "1", "--out", str(out)]) == 0
        _, mobility = load_mobility_csv(out / "mobility.csv")
        assert mobility.shape == (1, 1)
        assert mobility[0, 0] == 0.0

    def test_rejects_zero_districts(self, tmp_path, capsys):
        assert main(["gen-data", "--districts", "0",
                     "--out", str(tmp_path / "x")]) == 2
        assert "district" in capsys.readouterr().err


class TestSimulate:
    def test_emits_runs_and_summary(self, tmp_path, capsys):
        config = _write_config(tmp_path, horizon_weeks=6)
        out = tmp_path / "sim"
        assert main(["simulate", config, "--runs", "3", "--seed", "2",
                     "--out", str(out)]) == 0
        for k in range(3):
            assert (out / f"run_{k:03d}.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["runs"] == 3
        assert len(summary["per_run"]) == 3
        assert 0.0 <= summary["mean_attack_rate"] <= 1.0
        assert "mean attack rate" in capsys.readouterr().out

    def test_reproducible_from_manifest(self, tmp_path):
        config = _write_config(tmp_path, horizon_weeks=6)
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["simulate", config, "--runs", "2", "--seed", "9",
                         "--out", str(out)]) == 0
        assert (a / "run_000.csv").read_bytes() == (b / "run_000.csv").read_bytes()
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()

    def test_manifest_fields(self, tmp_path):
        config = _write_config(tmp_path, horizon_weeks=6)
        out = tmp_path / "sim"
        assert main(["simulate", config, "--out", str(out),
                     "--deterministic"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["config_digest"]
        assert manifest["parameters"]["deterministic"] is True
        assert any(o.endswith("summary.json") for o in manifest["outputs"])

    def test_output_dir_from_config(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        config = _write_config(tmp_path, horizon_weeks=6,
                               output="from-config")
        assert main(["simulate", config]) == 0
        assert (tmp_path / "from-config" / "run_000.csv").exists()

    def test_rejects_zero_runs(self, tmp_path, capsys):
        config = _write_config(tmp_path)
        assert main(["simulate", config, "--runs", "0"]) == 2
        assert "error:" in capsys.readouterr().err


class TestCalibrate:
    def test_grid_csv(self, tmp_path):
        config = _write_config(tmp_path, horizon_weeks=6)
        out = tmp_path / "cal"
        assert main(["calibrate", config, "--r0", "1.6,2.0", "--mu", "0,0.5",
                     "--runs", "2", "--out", str(out)]) == 0
        lines = (out / "peak_day_grid.csv").read_text().strip().splitlines()
        assert lines[0] == "r0,mu,mean_peak_day,mean_attack_rate"
        assert len(lines) == 1 + 4
        first = lines[1].split(",")
        assert float(first[0]) == 1.6 and float(first[1]) == 0.0

    def test_default_mu_left_blank(self, tmp_path):
        config = _write_config(tmp_path, horizon_weeks=6)
        out = tmp_path / "cal"
        assert main(["calibrate", config, "--r0", "1.8", "--runs", "1",
                     "--out", str(out)]) == 0
        lines = (out / "peak_day_grid.csv").read_text().strip().splitlines()
        assert lines[1].split(",")[1] == ""


class TestGroundTruth:
    def test_search_and_report(self, tmp_path, capsys):
        config = _write_config(tmp_path, budget=1)
        out = tmp_path / "gt"
        assert main(["ground-truth", config, "--weeks", "4",
                     "--out", str(out), "--dump"]) == 0
        report = json.loads((out / "ground_truth.json").read_text())
        assert report["n_evaluated"] == 5
        assert report["improvement"] >= 0.0
        assert len(report["policy"]) == 4
        policies = (out / "policies.csv").read_text().strip().splitlines()
        assert len(policies) == 1 + 5
        assert "improves attack rate" in capsys.readouterr().out

    def test_multi_district_needs_district_flag(self, tmp_path, capsys):
        config = _write_config(tmp_path,
                               synthetic={"districts": 3, "seed": 2})
        out = tmp_path / "gt"
        assert main(["ground-truth", config, "--weeks", "3", "--budget", "1",
                     "--out", str(out)]) == 2
        assert "single district" in capsys.readouterr().err
        assert main(["ground-truth", config, "--weeks", "3", "--budget", "1",
                     "--district", "D001", "--out", str(out)]) == 0


class TestTrainEvaluate:
    def test_end_to_end(self, tmp_path, capsys):
        config = _write_config(tmp_path, horizon_weeks=6, budget=2)
        out = tmp_path / "rl"
        assert main(["train", config, "--episodes", "4", "--trials", "2",
                     "--seed", "3", "--out", str(out)]) == 0
        summary = json.loads((out / "train_summary.json").read_text())
        assert len(summary["final_scores"]) == 2
        assert (out / "best_policy.bin").exists()
        assert (out / "learning_curve_0.csv").exists()
        capsys.readouterr()

        ev = tmp_path / "ev"
        assert main(["evaluate", config, "--checkpoint",
                     str(out / "best_policy.bin"), "--runs", "3",
                     "--seed", "1", "--out", str(ev)]) == 0
        report = json.loads((ev / "evaluation.json").read_text())
        assert report["n"] == 3
        samples = (ev / "improvements.csv").read_text().strip().splitlines()
        assert len(samples) == 1 + 3
        assert "median" in capsys.readouterr().out

    def test_evaluate_checkpoint_must_match_env(self, tmp_path, capsys):
        config1 = _write_config(tmp_path, "one.json", horizon_weeks=6, budget=2)
        out = tmp_path / "rl"
        assert main(["train", config1, "--episodes", "2", "--trials", "1",
                     "--out", str(out)]) == 0
        config2 = _write_config(tmp_path, "two.json",
                                synthetic={"districts": 2, "seed": 5},
                                horizon_weeks=6, budget=2)
        assert main(["evaluate", config2, "--checkpoint",
                     str(out / "best_policy.bin"),
                     "--out", str(tmp_path / "ev")]) == 2
        assert "observation features" in capsys.readouterr().err


class TestNetworkCommands:
    def test_communities(self, tmp_path, capsys):
        config = _write_config(
            tmp_path, synthetic={"districts": 8, "seed": 1, "density": 0.4}
        )
        out = tmp_path / "net"
        assert main(["communities", config, "--out", str(out)]) == 0
        report = json.loads((out / "communities.json").read_text())
        members = [d for ids in report["communities"].values() for d in ids]
        assert sorted(members) == [f"D{k:03d}" for k in range(8)]
        assert "modularity" in capsys.readouterr().out

    def test_select_districts(self, tmp_path, capsys):
        config = _write_config(tmp_path,
                               synthetic={"districts": 12, "seed": 4})
        out = tmp_path / "sel"
        assert main(["select-districts", config, "--out", str(out)]) == 0
        report = json.loads((out / "selected_districts.json").read_text())
        assert len(report["selected"]) == 10
        assert report["center"] == report["selected"][0]

    def test_select_districts_needs_ten(self, tmp_path, capsys):
        config = _write_config(tmp_path, synthetic={"districts": 4, "seed": 0})
        assert main(["select-districts", config,
                     "--out", str(tmp_path / "sel")]) == 3
        assert "error:" in capsys.readouterr().err
