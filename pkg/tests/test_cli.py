#!/usr/bin/env python3
"""
Tests for the pdeicl command-line interface.
"""

import json
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from conftest import make_config
from pdeicl.cli import EXIT_BACKEND, EXIT_CONFIG, EXIT_FAILURES, EXIT_OK, main
from pdeicl.codec import count_tokens
from pdeicl.exceptions import TrialFailure
from pdeicl.experiments import ExperimentRunner, load_records
from pdeicl.plotdata import correlates_figure


def write_config(path, **overrides):
    """Write a validated manifest and return its path."""
    config = make_config(**overrides)
    path.write_text(json.dumps(config.model_dump(mode="json")), encoding="utf-8")
    return str(path)


MULTISTEP = {
    "family": "multi-step",
    "sweep": {"kind": "multistep", "n_t": 6, "n_x": 5, "generations": 2},
}


class TestUtilityCommands:
    """Test cases for the single-shot subcommands"""

    def test_no_command(self, capsys):
        """Test a missing subcommand exits with the config code"""
        assert main([]) == EXIT_CONFIG

    def test_gen_ic(self, capsys):
        """Test gen-ic emits reproducible IC records"""
        assert main(["gen-ic", "--trials", "3", "--seed", "1", "--n-x", "6"]) == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        records = [json.loads(line) for line in lines]
        assert [r["trial"] for r in records] == [0, 1, 2]
        assert len({r["fingerprint"] for r in records}) == 3

        main(["gen-ic", "--trials", "3", "--seed", "1", "--n-x", "6"])
        again = [json.loads(line) for line in capsys.readouterr().out.strip().splitlines()]
        assert [r["fingerprint"] for r in again] == [r["fingerprint"] for r in records]

    def test_solve_to_csv(self, tmp_path):
        """Test solve writes a baseline solution CSV"""
        config = write_config(tmp_path / "heat.json")
        out = tmp_path / "btcs.csv"
        code = main(["solve", "--config", config, "--n-x", "6", "--n-t", "4", "--scheme", "btcs",
                     "--out", str(out)])
        assert code == EXIT_OK
        frame = pd.read_csv(out)
        assert frame.columns[0] == "x"
        assert frame.shape == (6, 6)

    def test_incompatible_scheme(self, tmp_path):
        """Test an unsuitable scheme exits with the config code"""
        config = write_config(tmp_path / "heat.json")
        assert main(["solve", "--config", config, "--n-x", "6", "--n-t", "4", "--scheme", "leapfrog"]) == EXIT_CONFIG

    def test_encode(self, tmp_path, capsys):
        """Test encode prints the stream and its token count"""
        config = write_config(tmp_path / "heat.json")
        assert main(["encode", "--config", config, "--n-x", "6", "--n-t", "4", "--j1", "3"]) == EXIT_OK
        captured = capsys.readouterr()
        text = captured.out.strip().splitlines()[-1]
        assert count_tokens(text) == 35
        assert not text.endswith(";")
        assert "tokens: 35" in captured.err

    def test_encode_to_file(self, tmp_path):
        """Test encode writes a trailing-delimiter stream to a file"""
        config = write_config(tmp_path / "heat.json")
        out = tmp_path / "ctx.txt"
        assert main(["encode", "--config", config, "--n-x", "6", "--n-t", "4", "--j1", "2", "--trailing",
                     "--out", str(out)]) == EXIT_OK
        assert out.read_text().count(";") == 2

    def test_tokens(self, capsys):
        """Test the tokenization check passes for the offline backend"""
        assert main(["tokens"]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "pass"
        assert report["granularity"] == "3-digit"


class TestRun:
    """Test cases for the run, metrics and plotdata subcommands"""

    def test_run_writes_outputs(self, tmp_path, capsys):
        """Test a run writes its manifest, records, metrics and log"""
        config = write_config(tmp_path / "heat.json")
        run_dir = tmp_path / "run"
        assert main(["run", "--config", config, "--run-dir", str(run_dir)]) == EXIT_OK
        for name in ("manifest.json", "records.jsonl", "metrics.csv", "run.log"):
            assert (run_dir / name).exists()

        metrics = pd.read_csv(run_dir / "metrics.csv")
        backend = metrics[metrics["metric"] == "rmse.backend"]
        assert sorted(backend["axis_value"]) == [3, 5]
        assert set(backend["m_effective"]) == {2}

        out = tmp_path / "fig.csv"
        assert main(["plotdata", "--figure", "error-vs-NT", "--metrics", str(run_dir / "metrics.csv"),
                     "--out", str(out)]) == EXIT_OK
        figure = pd.read_csv(out)
        assert "N_T" in figure.columns
        assert set(figure["metric"]) >= {"rmse.backend", "rmse.ftcs", "floor_rmse"}

    def test_overrides(self, tmp_path):
        """Test command-line overrides reach the manifest"""
        config = write_config(tmp_path / "heat.json")
        run_dir = tmp_path / "run"
        assert main(["run", "--config", config, "--run-dir", str(run_dir), "--trials", "1",
                     "--backend", "oracle"]) == EXIT_OK
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["config"]["trials"] == 1
        assert manifest["config"]["backend"]["kind"] == "oracle"
        assert len(load_records(run_dir / "records.jsonl")) == 1

    def test_resume(self, tmp_path, capsys):
        """Test resuming skips recorded trials"""
        config = write_config(tmp_path / "heat.json")
        run_dir = tmp_path / "run"
        main(["run", "--config", config, "--run-dir", str(run_dir)])
        capsys.readouterr()

        assert main(["run", "--resume", str(run_dir)]) == EXIT_OK
        assert "0 trial(s) run" in capsys.readouterr().out
        assert len(load_records(run_dir / "records.jsonl")) == 2

    def test_error_correlates_use_manifest_L(self, tmp_path):
        """Test error correlates read the domain half-width from the run manifest"""
        config = write_config(tmp_path / "ms.json", pde={"equation": "heat", "L": 2.0}, **MULTISTEP)
        run_dir = tmp_path / "run"
        assert main(["run", "--config", config, "--run-dir", str(run_dir)]) == EXIT_OK
        out = tmp_path / "corr.csv"
        assert main(["plotdata", "--figure", "error-correlates", "--records", str(run_dir / "records.jsonl"),
                     "--out", str(out)]) == EXIT_OK
        frame = pd.read_csv(out)
        # N_X = 5 on [-2, 2]
        assert frame["x"].min() == pytest.approx(-2.0 + 4.0 / 6)
        records = load_records(run_dir / "records.jsonl")
        assert np.allclose(frame["abs_dudx"], correlates_figure(records, L=2.0)["abs_dudx"])

    def test_metrics_command(self, tmp_path):
        """Test metrics rebuilds the run's metrics table"""
        config = write_config(tmp_path / "heat.json")
        run_dir = tmp_path / "run"
        main(["run", "--config", config, "--run-dir", str(run_dir)])
        out = tmp_path / "again.csv"
        assert main(["metrics", str(run_dir), "--out", str(out)]) == EXIT_OK
        pd.testing.assert_frame_equal(pd.read_csv(out), pd.read_csv(run_dir / "metrics.csv"))

    def test_multistep_figures(self, tmp_path):
        """Test the multi-step figure exports"""
        config = write_config(tmp_path / "ms.json", **MULTISTEP)
        run_dir = tmp_path / "run"
        assert main(["run", "--config", config, "--run-dir", str(run_dir)]) == EXIT_OK
        records = str(run_dir / "records.jsonl")

        out = tmp_path / "rollout.csv"
        assert main(["plotdata", "--figure", "rollout-error", "--metrics", str(run_dir / "metrics.csv"),
                     "--out", str(out)]) == EXIT_OK
        rollout = pd.read_csv(out)
        assert "slope" in rollout.columns
        assert set(rollout["step"]) == {1, 2, 3}

        out = tmp_path / "per_trial.csv"
        assert main(["plotdata", "--figure", "rollout-error", "--metrics", str(run_dir / "metrics.csv"),
                     "--trial", "1", "--out", str(out)]) == EXIT_OK
        assert set(pd.read_csv(out)["metric"]) == {"rmse.backend"}

        out = tmp_path / "topk.csv"
        assert main(["plotdata", "--figure", "topk", "--records", records, "--trial", "0",
                     "--out", str(out)]) == EXIT_OK
        topk = pd.read_csv(out)
        assert len(topk) == 9
        assert topk["separator"].sum() == 4

        out = tmp_path / "corr.csv"
        assert main(["plotdata", "--figure", "error-correlates", "--records", records,
                     "--out", str(out)]) == EXIT_OK
        assert len(pd.read_csv(out)) == 15

    def test_temporal_differences(self, tmp_path):
        """Test the temporal-difference heatmap export"""
        config = write_config(tmp_path / "heat.json")
        out = tmp_path / "diffs.csv"
        assert main(["plotdata", "--figure", "temporal-differences", "--config", config,
                     "--n-x", "6", "--n-t", "5", "--out", str(out)]) == EXIT_OK
        assert len(pd.read_csv(out)) == 30


class TestExitCodes:
    """Test cases for process exit codes"""

    def test_run_needs_config(self):
        """Test run without --config or --resume fails"""
        assert main(["run"]) == EXIT_CONFIG

    def test_invalid_config(self, tmp_path):
        """Test an invalid manifest exits with the config code"""
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"family": "one-step-context", "colour": "blue"}))
        assert main(["run", "--config", str(path), "--run-dir", str(tmp_path / "run")]) == EXIT_CONFIG

    def test_replay_miss(self, tmp_path):
        """Test a fixture miss exits with the backend code"""
        config = write_config(tmp_path / "heat.json")
        fixture = tmp_path / "empty.jsonl"
        fixture.write_text("")
        code = main(["run", "--config", config, "--run-dir", str(tmp_path / "run"),
                     "--backend", "replay", "--fixture", str(fixture)])
        assert code == EXIT_BACKEND

    def test_replay_needs_fixture(self, tmp_path):
        """Test replay without a fixture fails"""
        config = write_config(tmp_path / "heat.json")
        assert main(["run", "--config", config, "--backend", "replay"]) == EXIT_CONFIG

    def test_excessive_failures(self, tmp_path):
        """Test too many failed trials exits with the failure code"""
        config = write_config(tmp_path / "heat.json")
        with patch.object(ExperimentRunner, "one_step_context_trial",
                          side_effect=TrialFailure("malformed slice after retry")):
            code = main(["run", "--config", config, "--run-dir", str(tmp_path / "run")])
        assert code == EXIT_FAILURES


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
