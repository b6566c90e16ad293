import csv
import json

import numpy as np
import pytest

from palsgd.cli import main
from palsgd.config import ConfigError, parse_config
from palsgd.experiments import (SWEEP_CSV_HEADER, fit_loglog_slope, gradcheck,
                                k1_scalar_oracle, run_experiment, sweep,
                                verify_theory)


def parse(obj):
    return parse_config(json.dumps(obj))


def quad_cfg(**overrides):
    base = {
        "workload": {"kind": "quadratic", "dim": 4, "mu": 1.0, "L": 4.0},
        "algo": {"variant": "palsgd", "inner": {"variant": "sgd"},
                 "outer": {"variant": "nesterov", "lr": 0.7}},
        "schedule": {"alpha": 0.02, "eta": 0.5, "p": 0.1,
                     "sync_interval": 8, "total_steps": 64},
        "workers": 2,
        "seed": 5,
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and key in base:
            base[key].update(value)
        else:
            base[key] = value
    return base


class TestRunExperiment:
    def test_writes_all_artifacts(self, tmp_path):
        cfg = parse(quad_cfg())
        summary, result = run_experiment(cfg, out_dir=str(tmp_path))
        for name in ("config.json", "metrics.jsonl", "summary.json", "events.jsonl"):
            assert (tmp_path / name).exists(), name
        on_disk = json.loads((tmp_path / "summary.json").read_text())
        assert on_disk == json.loads(json.dumps(summary))
        assert summary["sync_count"] == 8

    def test_repeat_runs_byte_identical(self, tmp_path):
        cfg = parse(quad_cfg())
        run_experiment(cfg, out_dir=str(tmp_path / "a"))
        run_experiment(cfg, out_dir=str(tmp_path / "b"))
        for name in ("metrics.jsonl", "summary.json", "events.jsonl", "config.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_ddp_vs_palsgd_sync_counts(self):
        palsgd_summary, _ = run_experiment(parse(quad_cfg(
            schedule={"total_steps": 160, "sync_interval": 16})))
        ddp_summary, _ = run_experiment(parse({
            "workload": {"kind": "quadratic", "dim": 4},
            "algo": {"variant": "ddp"},
            "schedule": {"total_steps": 160}, "workers": 2, "seed": 5}))
        assert palsgd_summary["sync_count"] == 10
        assert ddp_summary["sync_count"] == 160


class TestSweep:
    def test_rows_match_per_run_summaries(self, tmp_path):
        cfg = parse(quad_cfg())
        rows = sweep(cfg, {"schedule.sync_interval": [4, 8, 16]}, out_dir=str(tmp_path))
        assert len(rows) == 3
        for row in rows:
            cell = json.loads((tmp_path / f"schedule_sync_interval={row['value']}" /
                               "summary.json").read_text())
            assert row["final_loss"] == cell["final_loss"]
            assert row["sim_time_s"] == cell["total_sim_time_s"]
            assert row["sync_count"] == cell["sync_count"]
        with open(tmp_path / "sweep.csv") as fh:
            table = list(csv.DictReader(fh))
        assert list(table[0].keys()) == SWEEP_CSV_HEADER
        assert [int(r["sync_count"]) for r in table] == [16, 8, 4]

    def test_unknown_parameter_rejected(self):
        cfg = parse(quad_cfg())
        with pytest.raises(ConfigError, match="not present"):
            sweep(cfg, {"schedule.gamma": [1, 2]})

    def test_failing_cell_recorded_and_sweep_continues(self, tmp_path):
        cfg = parse(quad_cfg())
        rows = sweep(cfg, {"schedule.p": [0.1, 1.5, 0.2]}, out_dir=str(tmp_path))
        assert len(rows) == 3
        bad = rows[1]
        assert bad["diverged"] is True and bad["final_loss"] == ""
        assert (tmp_path / "schedule_p=1.5" / "error.txt").exists()
        assert rows[0]["diverged"] is False and rows[2]["diverged"] is False

    def test_time_decreases_with_larger_sync_interval(self, tmp_path):
        cfg = parse(quad_cfg(schedule={"total_steps": 128}))
        rows = sweep(cfg, {"schedule.sync_interval": [4, 8, 16, 32]})
        times = [row["sim_time_s"] for row in rows]
        assert all(a > b for a, b in zip(times, times[1:]))


class TestVerifyTheory:
    def base(self):
        return parse({
            "workload": {"kind": "quadratic", "dim": 4, "mu": 1.0, "L": 2.0,
                         "noise_sigma": 1.0, "x0_offset": 0.05},
            "algo": {"variant": "palsgd_theory"},
            "schedule": {"p": 0.5, "sync_interval": 4, "total_steps": 600},
            "workers": 2, "seed": 100})

    def test_report_structure_and_oracle(self, tmp_path):
        report = verify_theory(self.base(), out_dir=str(tmp_path),
                               k_values=(1, 2, 4), n_seeds=4, h_values=(2, 4),
                               h_probe_steps=128)
        assert set(report["k_mean_suboptimality"]) == {"1", "2", "4"}
        assert report["k1_oracle"]["pass"], report["k1_oracle"]
        assert (tmp_path / "theory_report.json").exists()
        assert report["k_slope"] < 0  # more workers, less error

    def test_refuses_insufficient_seeds(self):
        with pytest.raises(ConfigError, match="seeds"):
            verify_theory(self.base(), n_seeds=2)

    def test_requires_quadratic(self):
        cfg = parse({"workload": {"kind": "mlp"}, "schedule": {"p": 0.0},
                     "algo": {"variant": "diloco"}})
        with pytest.raises(ConfigError, match="quadratic"):
            verify_theory(cfg)

    def test_slope_fit(self):
        assert fit_loglog_slope([1, 2, 4], [1.0, 0.5, 0.25]) == pytest.approx(-1.0)


class TestGradcheck:
    def test_default_workloads_pass(self):
        report = gradcheck(probes=5)
        assert report["pass"], report
        assert report["logistic"]["max_relative_error"] < 1e-4
        assert report["mlp"]["max_relative_error"] < 1e-4


class TestCli:
    def write_cfg(self, tmp_path, overrides=None):
        cfg = quad_cfg(**(overrides or {}))
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        return str(path)

    def test_run_exit_zero_and_prints_summary(self, tmp_path, capsys):
        path = self.write_cfg(tmp_path)
        code = main(["run", path, "--out-dir", str(tmp_path / "out")])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["diverged"] is False
        assert (tmp_path / "out" / "metrics.jsonl").exists()

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    def test_run_exit_three_on_divergence(self, tmp_path, capsys):
        path = self.write_cfg(tmp_path, {"schedule": {"alpha": 1e9}})
        code = main(["run", path])
        assert code == 3
        out = json.loads(capsys.readouterr().out)
        assert out["diverged"] is True and "diverged_at_step" in out

    def test_config_error_exit_two(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"schedule": {"p": 2.0}}))
        assert main(["run", str(path)]) == 2
        assert "schedule.p" in capsys.readouterr().err

    def test_seed_override_changes_output(self, tmp_path, capsys):
        path = self.write_cfg(tmp_path)
        main(["run", path, "--seed", "1"])
        first = json.loads(capsys.readouterr().out)
        main(["run", path, "--seed", "2"])
        second = json.loads(capsys.readouterr().out)
        assert first["final_loss"] != second["final_loss"]

    def test_sweep_command(self, tmp_path, capsys):
        path = self.write_cfg(tmp_path)
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"schedule.sync_interval": [4, 8]}))
        code = main(["sweep", path, "--grid", str(grid),
                     "--out-dir", str(tmp_path / "sweep")])
        assert code == 0
        assert (tmp_path / "sweep" / "sweep.csv").exists()

    def test_gradcheck_command(self, tmp_path, capsys):
        path = self.write_cfg(tmp_path)
        assert main(["gradcheck", path]) == 0
        assert json.loads(capsys.readouterr().out)["pass"]

    def test_verify_theory_command(self, tmp_path, capsys):
        cfg = {
            "workload": {"kind": "quadratic", "dim": 4, "mu": 1.0, "L": 2.0,
                         "x0_offset": 0.05},
            "algo": {"variant": "palsgd_theory"},
            "schedule": {"p": 0.5, "sync_interval": 4, "total_steps": 400},
            "workers": 2, "seed": 3}
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        code = main(["verify-theory", str(path), "--seeds", "3", "--k-values", "1,2"])
        assert code in (0, 4)
        report = json.loads(capsys.readouterr().out)
        assert "k_slope" in report
