"""Experiment runner, config parsing, sweeps, and the command-line surface."""

import dataclasses
import json
from pathlib import Path

import pytest

from enkf_lr import (
    EnKFConfig,
    ExperimentConfig,
    FieldMeta,
    TruncationPolicy,
    TruthSpec,
    load_config,
    run_experiment,
    run_sweep,
)
from enkf_lr.cli import main as cli_main
from enkf_lr.metrics import CSV_HEADER
from enkf_lr.snp_io import read_snapshot_file


def small_truth(n_x=32, n_y=16, n_t=61):
    meta = FieldMeta(n_comp=2, n_x=n_x, n_y=n_y, n_t=n_t, dt=0.2)
    return TruthSpec(
        kind="oscillating_wake", meta=meta, wavelength=16.0, period=3.0
    )


def base_config(**overrides):
    fields = dict(
        truth=small_truth(),
        mode="hr",
        w_compression=8.0,
        label="case",
        noise_eta_ub=0.05,
        noise_eta_w=0.05,
        enkf=EnKFConfig(ensemble_size=25, seed=7),
        init_spread_rel=0.0025,
        repeats=1,
        measure_time=False,
    )
    fields.update(overrides)
    return ExperimentConfig(**fields)


class TestConfigValidation:
    def test_lr_requires_truncation(self):
        with pytest.raises(ValueError, match="truncation"):
            base_config(mode="lr", ub_compression=4.0)

    def test_hr_requires_unit_compression(self):
        with pytest.raises(ValueError, match="ub_compression"):
            base_config(ub_compression=2.0)

    def test_compression_bounds(self):
        with pytest.raises(ValueError, match="compression"):
            base_config(w_compression=0.5)


class TestRunExperiment:
    def test_noiseless_hr_is_consistent(self):
        cfg = base_config(
            noise_eta_ub=0.0,
            noise_eta_w=0.0,
            init_spread_rel=None,
            enkf=EnKFConfig(ensemble_size=10, init_spread=1e-6, seed=1),
        )
        report = run_experiment(cfg)
        assert report.rrmse <= 1e-4

    def test_hr_lr_parity_at_unit_compression(self):
        hr = base_config(label="parity-hr")
        lr = dataclasses.replace(
            hr,
            mode="lr",
            label="parity-lr",
            ub_compression=1.0,
            truncation=TruncationPolicy.tolerance(1e-12),
        )
        rep_hr = run_experiment(hr)
        rep_lr = run_experiment(lr)
        for name in ("rrmse", "mae", "mae_pct"):
            a, b = getattr(rep_hr, name), getattr(rep_lr, name)
            assert abs(a - b) <= 1e-6 * abs(a)
        assert rep_hr.peak_bytes == rep_lr.peak_bytes
        assert rep_hr.wall_time_s == rep_lr.wall_time_s == 0.0

    def test_lr_beats_noise_floor_on_wake(self):
        lr = base_config(
            mode="lr",
            label="lr4",
            ub_compression=4.0,
            truncation=TruncationPolicy.fraction_of_min_dim(0.2),
        )
        hr = base_config(label="hr")
        rep_lr, rep_hr = run_experiment(lr), run_experiment(hr)
        assert rep_lr.rrmse <= 3 * rep_hr.rrmse
        assert rep_lr.peak_bytes < rep_hr.peak_bytes

    def test_lr_rejects_too_few_background_sensors(self):
        cfg = base_config(
            mode="lr",
            ub_compression=512.0,
            w_compression=8.0,
            truncation=TruncationPolicy.fraction_of_min_dim(0.2),
        )
        with pytest.raises(ValueError, match="n_w"):
            run_experiment(cfg)

    def test_artifacts_written(self, tmp_path):
        cfg = base_config(
            output_dir=tmp_path / "out", tracking_points=[(0, 16, 8, 0)]
        )
        report = run_experiment(cfg)
        out = tmp_path / "out"
        assert (out / "report.csv").read_text().startswith(CSV_HEADER)
        payload = json.loads((out / "report.json").read_text())
        assert payload["rrmse"] == report.rrmse
        analysis = read_snapshot_file(out / "analysis.snp")
        assert analysis.shape == (2 * 32 * 16, 61)
        tracking = (out / "tracking.csv").read_text().splitlines()
        assert tracking[0] == "time,truth_c0x16y8z0,analysis_c0x16y8z0"
        assert len(tracking) == 62

    def test_hr_reference_sets_efficiency_fields(self, tmp_path):
        hr = base_config(label="ref-hr", measure_time=True, output_dir=tmp_path / "hr")
        run_experiment(hr)
        lr = base_config(
            mode="lr",
            label="ref-lr",
            ub_compression=4.0,
            truncation=TruncationPolicy.fraction_of_min_dim(0.2),
            measure_time=True,
            hr_reference=tmp_path / "hr" / "report.json",
        )
        rep = run_experiment(lr)
        assert rep.speedup is not None and rep.speedup > 0
        assert rep.ram_compression == pytest.approx(1 - rep.peak_bytes / json.loads(
            (tmp_path / "hr" / "report.json").read_text())["peak_bytes"])


class TestRunSweep:
    def test_single_config_matches_run_experiment(self):
        cfg = base_config(label="solo")
        table = run_sweep([cfg])
        lines = table.strip().splitlines()
        assert lines[0] == CSV_HEADER + ",status"
        report = run_experiment(cfg)
        assert lines[1] == report.to_csv_row() + ",ok"

    def test_noise_sweep_rrmse_monotone(self):
        configs = []
        for eta in (0.02, 0.05, 0.10, 0.30, 0.50):
            configs.append(
                base_config(
                    label=f"eta{eta}",
                    noise_eta_ub=eta,
                    noise_eta_w=eta,
                    init_spread_rel=0.05 * eta,
                )
            )
        table = run_sweep(configs)
        rows = table.strip().splitlines()[1:]
        rrmse_col = [float(r.split(",")[7]) for r in rows]
        assert all(b >= a for a, b in zip(rrmse_col, rrmse_col[1:]))

    def test_compression_sweep_peak_bytes_monotone(self):
        configs = []
        for c_r in (4.0, 50.0, 300.0):
            configs.append(
                base_config(
                    mode="lr",
                    label=f"cr{c_r}",
                    ub_compression=c_r,
                    w_compression=512.0,
                    truncation=TruncationPolicy.fraction_of_min_dim(0.2),
                )
            )
        table = run_sweep(configs)
        rows = table.strip().splitlines()[1:]
        peaks = [int(r.split(",")[8]) for r in rows]
        assert all(b <= a for a, b in zip(peaks, peaks[1:]))

    def test_fail_soft_keeps_going(self, tmp_path):
        good = base_config(label="good")
        bad = dataclasses.replace(
            base_config(label="bad"), truth=tmp_path / "missing.snp"
        )
        table = run_sweep([good, bad, dataclasses.replace(good, label="good2")])
        rows = table.strip().splitlines()[1:]
        assert rows[0].endswith(",ok")
        assert rows[1].startswith("bad,") and "error" in rows[1]
        assert rows[2].endswith(",ok")

    def test_output_file(self, tmp_path):
        path = tmp_path / "table.csv"
        table = run_sweep([base_config(label="solo")], output_path=path)
        assert path.read_text() == table

    def test_parallel_matches_serial_order(self):
        configs = [
            base_config(label="p0", enkf=EnKFConfig(ensemble_size=9, seed=1)),
            base_config(label="p1", enkf=EnKFConfig(ensemble_size=9, seed=2)),
            base_config(label="p2", enkf=EnKFConfig(ensemble_size=9, seed=3)),
        ]
        serial = run_sweep(configs, max_workers=1)
        parallel = run_sweep(configs, max_workers=3)
        assert parallel == serial
        labels = [r.split(",")[0] for r in parallel.strip().splitlines()[1:]]
        assert labels == ["p0", "p1", "p2"]

    def test_worker_cap_from_environment(self, monkeypatch):
        from enkf_lr.experiment import THREADS_ENV_VAR

        monkeypatch.setenv(THREADS_ENV_VAR, "2")
        configs = [
            base_config(label="e0", enkf=EnKFConfig(ensemble_size=9, seed=4)),
            base_config(label="e1", enkf=EnKFConfig(ensemble_size=9, seed=5)),
        ]
        table = run_sweep(configs)
        rows = table.strip().splitlines()[1:]
        assert [r.split(",")[0] for r in rows] == ["e0", "e1"]
        assert all(r.endswith(",ok") for r in rows)

    def test_empty_sweep_rejected(self):
        with pytest.raises(ValueError):
            run_sweep([])


CONFIG_TOML = """
label = "toml-case"
mode = "lr"
ub_compression = 4.0
w_compression = 8.0
w_time_stride = 2
noise_eta_ub = 0.05
noise_eta_w = 0.1
repeats = 2
timing = false
init_spread_rel = 0.0025
tracking_points = [[0, 4, 4, 0], [1, 8, 2, 0]]

[truth]
kind = "oscillating_wake"
n_comp = 2
n_x = 16
n_y = 12
n_t = 31
dt = 0.2
amplitude = 1.0
wavelength = 8.0
period = 3.0

[enkf]
ensemble_size = 9
init_spread = 0.0
process_noise_std = 0.0
anomaly_retention = 1.0
seed = 21

[truncation]
kind = "fraction_of_min_dim"
fraction = 0.2
"""


class TestLoadConfig:
    def test_full_roundtrip(self, tmp_path):
        path = tmp_path / "case.toml"
        path.write_text(CONFIG_TOML)
        cfg = load_config(path)
        assert cfg.label == "toml-case"
        assert cfg.mode == "lr"
        assert cfg.w_time_stride == 2
        assert cfg.enkf.ensemble_size == 9
        assert cfg.truncation == TruncationPolicy.fraction_of_min_dim(0.2)
        assert cfg.tracking_points == [(0, 4, 4, 0), (1, 8, 2, 0)]
        assert cfg.measure_time is False
        report = run_experiment(cfg)
        assert report.case_label == "toml-case"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "case.toml"
        path.write_text(CONFIG_TOML + "\nbogus_key = 1\n")
        with pytest.raises(ValueError, match="bogus_key"):
            load_config(path)

    def test_truth_file_reference(self, tmp_path):
        rc = cli_main([
            "synth", "--kind", "traveling_wave", "--n-comp", "1",
            "--nx", "12", "--ny", "6", "--nt", "11", "--dt", "0.25",
            "--wavelength", "6.0", "--period", "2.0",
            "--output", str(tmp_path / "truth.snp"),
        ])
        assert rc == 0
        path = tmp_path / "case.toml"
        path.write_text(
            'mode = "hr"\nw_compression = 4.0\n'
            '[truth]\nfile = "truth.snp"\n'
            "[enkf]\nensemble_size = 5\ninit_spread = 1e-6\nseed = 3\n"
        )
        cfg = load_config(path)
        assert isinstance(cfg.truth, Path)
        report = run_experiment(cfg)
        assert report.rrmse <= 1e-4


class TestCli:
    def test_synth_writes_readable_file(self, tmp_path, capsys):
        out = tmp_path / "wave.snp"
        rc = cli_main([
            "synth", "--kind", "traveling_wave", "--nx", "8", "--ny", "4",
            "--nt", "6", "--wavelength", "4.0", "--period", "2.0",
            "--output", str(out),
        ])
        assert rc == 0
        matrix = read_snapshot_file(out)
        assert matrix.shape == (32, 6)

    def test_assimilate_and_metrics(self, tmp_path, capsys):
        config = tmp_path / "case.toml"
        config.write_text(CONFIG_TOML)
        out_dir = tmp_path / "run"
        rc = cli_main([
            "assimilate", "--config", str(config), "--output", str(out_dir)
        ])
        assert rc == 0
        printed = capsys.readouterr().out
        assert printed.startswith(CSV_HEADER)
        rc = cli_main([
            "synth", "--kind", "oscillating_wake", "--n-comp", "2",
            "--nx", "16", "--ny", "12", "--nt", "31", "--dt", "0.2",
            "--wavelength", "8.0", "--period", "3.0",
            "--output", str(tmp_path / "truth.snp"),
        ])
        assert rc == 0
        capsys.readouterr()
        rc = cli_main([
            "metrics", str(tmp_path / "truth.snp"), str(out_dir / "analysis.snp")
        ])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert set(payload) == {"rrmse", "mae", "mae_pct"}

    def test_seed_and_mode_overrides(self, tmp_path, capsys):
        config = tmp_path / "case.toml"
        config.write_text(CONFIG_TOML)
        rc = cli_main([
            "assimilate", "--config", str(config), "--mode", "hr", "--seed", "99"
        ])
        assert rc == 0
        row = capsys.readouterr().out.strip().splitlines()[1]
        assert row.split(",")[2] == "1.0"  # hr override resets cr_ub

    def test_sweep_directory(self, tmp_path, capsys):
        (tmp_path / "configs").mkdir()
        for i, seed in enumerate((1, 2)):
            text = CONFIG_TOML.replace("seed = 21", f"seed = {seed}").replace(
                'label = "toml-case"', f'label = "case{i}"'
            )
            (tmp_path / "configs" / f"case{i}.toml").write_text(text)
        out = tmp_path / "table.csv"
        rc = cli_main([
            "sweep", "--config-dir", str(tmp_path / "configs"),
            "--output", str(out),
        ])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == CSV_HEADER + ",status"
        assert len(lines) == 3
        assert lines[1].startswith("case0,") and lines[2].startswith("case1,")

    def test_error_is_machine_readable(self, tmp_path, capsys):
        rc = cli_main(["assimilate", "--config", str(tmp_path / "nope.toml")])
        assert rc == 1
        err = capsys.readouterr().err
        payload = json.loads(err)
        assert set(payload) == {"error", "message"}
