"""Quantitative evaluation: reconstruction errors, efficiency ratios, and
tracking-point series, plus the report record they are collected into.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .snapshots import SnapshotMatrix

__all__ = [
    "MetricsReport",
    "CSV_HEADER",
    "rrmse",
    "mae",
    "speedup",
    "ram_compression",
    "tracking_series",
]

CSV_HEADER = "case,eta,cr_ub,cr_w,t_comp_s,speedup,mae,rrmse,peak_bytes,ram_compression"


def _as_array(V) -> np.ndarray:
    return np.asarray(getattr(V, "data", V), dtype=np.float64)


def rrmse(V, V_rec) -> float:
    """Frobenius norm of the error over the Frobenius norm of the reference."""
    ref = _as_array(V)
    rec = _as_array(V_rec)
    if ref.shape != rec.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {rec.shape}")
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0.0:
        raise ValueError("reference matrix has zero norm")
    return float(np.linalg.norm(ref - rec) / ref_norm)


def mae(V, V_rec) -> float:
    """Mean absolute entrywise deviation."""
    ref = _as_array(V)
    rec = _as_array(V_rec)
    if ref.shape != rec.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {rec.shape}")
    return float(np.mean(np.abs(ref - rec)))


def speedup(t_hr: float, t_lr: float) -> float:
    """Wall-time ratio; callers should pass means of repeated runs."""
    if t_hr <= 0 or t_lr <= 0:
        raise ValueError(f"times must be positive, got {t_hr!r} and {t_lr!r}")
    return t_hr / t_lr


def ram_compression(r_hr: float, r_lr: float) -> float:
    """Relative memory saving (negative when the low-resolution run uses more)."""
    if r_hr <= 0:
        raise ValueError(f"reference memory size must be positive, got {r_hr!r}")
    return (r_hr - r_lr) / r_hr


def tracking_series(V: SnapshotMatrix, grid_point) -> np.ndarray:
    """Time series of one grid point (comp, ix, iy[, iz]) across all snapshots."""
    point = tuple(grid_point)
    if len(point) == 3:
        point = point + (0,)
    if len(point) != 4:
        raise ValueError(f"grid point must be (comp, ix, iy, iz), got {grid_point!r}")
    row = V.meta.flat_index(*point)
    return V.data[row, :].copy()


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class MetricsReport:
    """One row of the results table for a single pipeline run."""

    case_label: str
    noise_eta: float
    c_r_ub: float
    c_r_w: float
    wall_time_s: float
    mae: float
    rrmse: float
    peak_bytes: int
    speedup: float | None = None
    ram_compression: float | None = None
    mae_pct: float | None = None

    def __post_init__(self):
        if self.rrmse < 0 or self.mae < 0:
            raise ValueError("error metrics must be >= 0")
        if self.speedup is not None and self.speedup <= 0:
            raise ValueError("speedup must be positive when present")
        if self.ram_compression is not None and self.ram_compression >= 1:
            raise ValueError("ram_compression must be < 1 when present")

    def to_csv_row(self) -> str:
        fields = [
            self.case_label,
            _fmt(self.noise_eta),
            _fmt(self.c_r_ub),
            _fmt(self.c_r_w),
            _fmt(self.wall_time_s),
            _fmt(self.speedup),
            _fmt(self.mae),
            _fmt(self.rrmse),
            _fmt(self.peak_bytes),
            _fmt(self.ram_compression),
        ]
        return ",".join(fields)

    def to_csv(self) -> str:
        return CSV_HEADER + "\n" + self.to_csv_row() + "\n"

    def to_dict(self) -> dict:
        out = {
            "case": self.case_label,
            "eta": self.noise_eta,
            "cr_ub": self.c_r_ub,
            "cr_w": self.c_r_w,
            "t_comp_s": self.wall_time_s,
            "speedup": self.speedup,
            "mae": self.mae,
            "rrmse": self.rrmse,
            "peak_bytes": self.peak_bytes,
            "ram_compression": self.ram_compression,
        }
        if self.mae_pct is not None:
            out["mae_pct"] = self.mae_pct
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"
