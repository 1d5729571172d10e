"""Config-driven twin-experiment runner.

One experiment is: generate or load a ground truth, manufacture a noisy
background and observations, assimilate (either at full resolution or on the
downsampled state followed by the reduced-SVD lift back to full size), and
score the result against the truth. Configuration comes from a TOML file or
is built programmatically; every run is reproducible from (config, seed).
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import metrics as metrics_mod
from .enkf import EnKFConfig, ObservationModel, assimilate_window
from .lcsvd import TruncationPolicy, lcsvd_reconstruct
from .metrics import CSV_HEADER, MetricsReport, tracking_series
from .snapshots import (
    FieldMeta,
    ReducedSnapshotMatrix,
    SensorSet,
    SnapshotMatrix,
    uniform_sensor_set,
)
from .snp_io import read_snapshot_file, write_snapshot_file
from .synth import NoiseSpec, TruthSpec, generate_truth, make_twin_experiment

__all__ = ["ExperimentConfig", "load_config", "run_experiment", "run_sweep"]

# variance floor keeping the observation-space system invertible at eta_w = 0
R_VARIANCE_FLOOR = 1e-18

# spawn keys deriving the two independent noise streams from the main seed
_UB_NOISE_KEY = 101
_W_NOISE_KEY = 102

THREADS_ENV_VAR = "ENKF_LR_THREADS"


@dataclass
class ExperimentConfig:
    """Everything needed to run one twin experiment."""

    truth: TruthSpec | Path
    mode: str
    w_compression: float
    enkf: EnKFConfig
    label: str = "case"
    ub_compression: float = 1.0
    w_time_stride: int = 1
    noise_eta_ub: float = 0.0
    noise_eta_w: float = 0.0
    truncation: TruncationPolicy | None = None
    output_dir: Path | None = None
    repeats: int = 10
    measure_time: bool = True
    init_spread_rel: float | None = None
    tracking_points: list = field(default_factory=list)
    hr_reference: Path | None = None

    def __post_init__(self):
        if self.mode not in ("hr", "lr"):
            raise ValueError(f"mode must be 'hr' or 'lr', got {self.mode!r}")
        if self.ub_compression < 1 or self.w_compression < 1:
            raise ValueError("compression rates must be >= 1")
        if self.mode == "hr" and self.ub_compression != 1:
            raise ValueError("hr mode assimilates the full state; ub_compression must be 1")
        if self.mode == "lr" and self.truncation is None:
            raise ValueError("lr mode requires a truncation policy")
        if self.w_time_stride < 1:
            raise ValueError("w_time_stride must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.noise_eta_ub < 0 or self.noise_eta_w < 0:
            raise ValueError("noise levels must be >= 0")
        if self.init_spread_rel is not None and self.init_spread_rel < 0:
            raise ValueError("init_spread_rel must be >= 0")


def _require_keys(section: dict, known: set, where: str) -> None:
    unknown = set(section) - known
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _parse_truth(section: dict, base_dir: Path):
    if "file" in section:
        _require_keys(section, {"file"}, "[truth]")
        return (base_dir / section["file"]).resolve()
    known = {
        "kind", "n_comp", "n_x", "n_y", "n_z", "n_t", "dt",
        "amplitude", "wavelength", "period", "convection_speed",
    }
    _require_keys(section, known, "[truth]")
    meta = FieldMeta(
        n_comp=int(section["n_comp"]),
        n_x=int(section["n_x"]),
        n_y=int(section["n_y"]),
        n_t=int(section["n_t"]),
        dt=float(section["dt"]),
        n_z=int(section.get("n_z", 1)),
    )
    return TruthSpec(
        kind=section["kind"],
        meta=meta,
        amplitude=float(section.get("amplitude", 1.0)),
        wavelength=float(section.get("wavelength", 16.0)),
        period=float(section.get("period", 5.0)),
        convection_speed=(
            float(section["convection_speed"])
            if "convection_speed" in section
            else None
        ),
    )


def _parse_truncation(section: dict) -> TruncationPolicy:
    _require_keys(section, {"kind", "eps", "rank", "fraction"}, "[truncation]")
    kind = section["kind"]
    if kind == "tolerance":
        return TruncationPolicy.tolerance(float(section["eps"]))
    if kind == "fixed_rank":
        return TruncationPolicy.fixed_rank(int(section["rank"]))
    if kind == "fraction_of_min_dim":
        return TruncationPolicy.fraction_of_min_dim(float(section["fraction"]))
    raise ValueError(f"unknown truncation kind {kind!r}")


def _parse_enkf(section: dict) -> EnKFConfig:
    known = {
        "ensemble_size", "init_spread", "process_noise_std",
        "anomaly_retention", "seed",
    }
    _require_keys(section, known, "[enkf]")
    return EnKFConfig(
        ensemble_size=int(section.get("ensemble_size", 25)),
        init_spread=float(section.get("init_spread", 0.0)),
        process_noise_std=float(section.get("process_noise_std", 0.0)),
        anomaly_retention=float(section.get("anomaly_retention", 1.0)),
        seed=int(section.get("seed", 0)),
    )


def load_config(path) -> ExperimentConfig:
    """Parse a TOML experiment configuration."""
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    base_dir = path.parent
    known = {
        "label", "mode", "ub_compression", "w_compression", "w_time_stride",
        "noise_eta_ub", "noise_eta_w", "repeats", "timing", "output_dir",
        "tracking_points", "hr_reference", "init_spread_rel",
        "truth", "enkf", "truncation",
    }
    _require_keys(doc, known, "config")
    if "truth" not in doc:
        raise ValueError("config is missing the [truth] section")
    truncation = _parse_truncation(doc["truncation"]) if "truncation" in doc else None
    return ExperimentConfig(
        truth=_parse_truth(doc["truth"], base_dir),
        mode=doc.get("mode", "hr"),
        label=doc.get("label", path.stem),
        ub_compression=float(doc.get("ub_compression", 1.0)),
        w_compression=float(doc["w_compression"]),
        w_time_stride=int(doc.get("w_time_stride", 1)),
        noise_eta_ub=float(doc.get("noise_eta_ub", 0.0)),
        noise_eta_w=float(doc.get("noise_eta_w", 0.0)),
        enkf=_parse_enkf(doc.get("enkf", {})),
        truncation=truncation,
        output_dir=Path(doc["output_dir"]) if "output_dir" in doc else None,
        repeats=int(doc.get("repeats", 10)),
        measure_time=bool(doc.get("timing", True)),
        init_spread_rel=(
            float(doc["init_spread_rel"]) if "init_spread_rel" in doc else None
        ),
        tracking_points=[tuple(int(v) for v in p) for p in doc.get("tracking_points", [])],
        hr_reference=(
            (base_dir / doc["hr_reference"]).resolve()
            if "hr_reference" in doc
            else None
        ),
    )


def _derived_seed(seed: int, key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(key,)).generate_state(1)[0])


def _sensor_count(J: int, compression: float, what: str) -> int:
    n = int(round(J / compression))
    n = max(1, min(n, J))
    if n < 1:
        raise ValueError(f"{what} compression {compression} leaves no sensors")
    return n


def _load_truth(config: ExperimentConfig) -> SnapshotMatrix:
    if isinstance(config.truth, TruthSpec):
        return generate_truth(config.truth)
    return read_snapshot_file(config.truth)


def _load_reference(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def run_experiment(config: ExperimentConfig) -> MetricsReport:
    """Run one twin experiment and return its metrics row.

    When ``config.output_dir`` is set, also writes report.csv, report.json,
    the assimilated field as analysis.snp, and tracking.csv for the
    configured grid points.
    """
    truth = _load_truth(config)
    J, K = truth.shape
    sigma_t = float(np.std(truth.data))

    n_w = _sensor_count(J, config.w_compression, "observation")
    seed = config.enkf.seed
    if config.mode == "hr":
        ub_sensors = uniform_sensor_set(J, J)
        w_sensors = uniform_sensor_set(J, n_w)
        obs_sensors = w_sensors
    else:
        n_ub = _sensor_count(J, config.ub_compression, "background")
        if n_w > n_ub:
            raise ValueError(
                f"lr mode observes a subset of the reduced state: "
                f"n_w={n_w} exceeds n_ub={n_ub}"
            )
        ub_sensors = uniform_sensor_set(J, n_ub)
        positions = uniform_sensor_set(n_ub, n_w)
        w_sensors = SensorSet(ub_sensors.indices[positions.indices], source_J=J)
        obs_sensors = SensorSet(positions.indices, source_J=n_ub)

    twin = make_twin_experiment(
        truth,
        ub_sensors,
        w_sensors,
        NoiseSpec(config.noise_eta_ub, _derived_seed(seed, _UB_NOISE_KEY)),
        NoiseSpec(config.noise_eta_w, _derived_seed(seed, _W_NOISE_KEY)),
        config.w_time_stride,
    )
    r_var = max((config.noise_eta_w * sigma_t) ** 2, R_VARIANCE_FLOOR)
    obs = ObservationModel(obs_sensors, np.full(n_w, r_var))
    enkf_cfg = config.enkf
    if config.init_spread_rel is not None:
        enkf_cfg = dataclasses.replace(
            enkf_cfg, init_spread=config.init_spread_rel * sigma_t
        )

    def compute():
        if config.mode == "hr":
            result = assimilate_window(twin.u_b_full, twin.observations, obs, enkf_cfg)
            return result, result.analysis
        result = assimilate_window(twin.u_b_reduced, twin.observations, obs, enkf_cfg)
        rows_full = twin.u_b_full.data.copy()
        rows_full[ub_sensors.indices, :] = result.analysis
        assimilated = ReducedSnapshotMatrix(
            parent_meta=truth.meta,
            sensors=ub_sensors,
            data=result.analysis,
            time_stride=1,
        )
        reconstructed, _ = lcsvd_reconstruct(
            assimilated, rows_full, result.analysis, config.truncation
        )
        return result, reconstructed

    times = []
    for _ in range(config.repeats):
        start = time.perf_counter()
        result, final = compute()
        times.append(time.perf_counter() - start)
    wall = fmean(times) if config.measure_time else 0.0

    mae_val = metrics_mod.mae(truth.data, final)
    report = MetricsReport(
        case_label=config.label,
        noise_eta=config.noise_eta_ub,
        c_r_ub=config.ub_compression,
        c_r_w=config.w_compression,
        wall_time_s=wall,
        mae=mae_val,
        rrmse=metrics_mod.rrmse(truth.data, final),
        peak_bytes=result.peak_state_bytes,
        mae_pct=100.0 * mae_val / sigma_t if sigma_t > 0 else None,
    )
    if config.hr_reference is not None:
        ref = _load_reference(config.hr_reference)
        if wall > 0 and ref.get("t_comp_s", 0) > 0:
            report.speedup = metrics_mod.speedup(ref["t_comp_s"], wall)
        if ref.get("peak_bytes", 0) > 0:
            report.ram_compression = metrics_mod.ram_compression(
                ref["peak_bytes"], report.peak_bytes
            )

    if config.output_dir is not None:
        _write_artifacts(config, truth, final, report)
    return report


def _write_artifacts(
    config: ExperimentConfig,
    truth: SnapshotMatrix,
    final: np.ndarray,
    report: MetricsReport,
) -> None:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    analysis = SnapshotMatrix(truth.meta, final)
    write_snapshot_file(out / "analysis.snp", analysis)
    _write_tracking(out / "tracking.csv", config, truth, analysis)


def _write_tracking(
    path: Path,
    config: ExperimentConfig,
    truth: SnapshotMatrix,
    analysis: SnapshotMatrix,
) -> None:
    points = config.tracking_points
    if not points:
        meta = truth.meta
        points = [(0, meta.n_x // 2, meta.n_y // 2, 0)]
    columns = [("time", np.arange(truth.K) * truth.meta.dt)]
    for point in points:
        p = tuple(point) if len(point) == 4 else tuple(point) + (0,)
        tag = f"c{p[0]}x{p[1]}y{p[2]}z{p[3]}"
        columns.append((f"truth_{tag}", tracking_series(truth, p)))
        columns.append((f"analysis_{tag}", tracking_series(analysis, p)))
    lines = [",".join(name for name, _ in columns)]
    for k in range(truth.K):
        lines.append(",".join(repr(float(series[k])) for _, series in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _error_row(label: str, message: str) -> str:
    clean = message.replace(",", ";").replace("\n", " ")
    fields = [label] + [""] * 9
    return ",".join(fields) + f",error: {clean}"


def _run_case(config: ExperimentConfig):
    return run_experiment(config)


def run_sweep(configs, output_path=None, max_workers: int | None = None) -> str:
    """Run many experiments, fail-soft, and aggregate one CSV table.

    Rows follow the input order regardless of completion order; a failing
    case contributes an error row and the sweep continues. Parallelism
    across cases is capped by ``max_workers`` or the ENKF_LR_THREADS
    environment variable (default: serial).
    """
    configs = list(configs)
    if not configs:
        raise ValueError("sweep needs at least one configuration")
    if max_workers is None:
        max_workers = int(os.environ.get(THREADS_ENV_VAR, "1"))
    max_workers = max(1, max_workers)

    outcomes: list[tuple[ExperimentConfig, object]] = []
    if max_workers == 1 or len(configs) == 1:
        for cfg in configs:
            try:
                outcomes.append((cfg, _run_case(cfg)))
            except Exception as exc:  # noqa: BLE001 - fail-soft by contract
                outcomes.append((cfg, exc))
    else:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(_run_case, cfg) for cfg in configs]
            for cfg, fut in zip(configs, futures):
                try:
                    outcomes.append((cfg, fut.result()))
                except Exception as exc:  # noqa: BLE001
                    outcomes.append((cfg, exc))

    lines = [CSV_HEADER + ",status"]
    for cfg, outcome in outcomes:
        if isinstance(outcome, MetricsReport):
            lines.append(outcome.to_csv_row() + ",ok")
        else:
            lines.append(_error_row(cfg.label, str(outcome)))
    table = "\n".join(lines) + "\n"
    if output_path is not None:
        Path(output_path).write_text(table, encoding="utf-8")
    return table
