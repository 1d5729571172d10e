"""Synthetic ground truth, calibrated noise injection, and twin-experiment
dataset manufacture.

Two analytic generators stand in for external flow datasets: a traveling
wave whose snapshot matrix is exactly low-rank, and an oscillating wake
(steady shear plus a harmonic ladder of phase-shifted wavetrains) whose
singular values decay slowly. Both are smooth, bounded by twice the
configured amplitude, and exactly periodic in time.

The twin-experiment constructor turns one truth into a noisy full-state
background, its reduced counterpart, and a time-indexed observation map,
with independent noise streams for the background and the observations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .snapshots import (
    FieldMeta,
    ReducedSnapshotMatrix,
    SensorSet,
    SnapshotMatrix,
    extract,
)

__all__ = [
    "NoiseSpec",
    "TruthSpec",
    "TwinExperiment",
    "add_noise",
    "generate_truth",
    "make_twin_experiment",
]

TRUTH_KINDS = ("traveling_wave", "oscillating_wake")

# harmonic amplitudes a_h = WAKE_FLUCT * 2^(1-h), h = 1..WAKE_HARMONICS
WAKE_HARMONICS = 4
WAKE_FLUCT = 0.35
WAKE_BASE = 0.4
WAKE_SHEAR = 0.8


@dataclass(frozen=True)
class NoiseSpec:
    """Noise level as a fraction of the data's global standard deviation."""

    eta: float
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.eta) or self.eta < 0:
            raise ValueError(f"noise level must be >= 0, got {self.eta!r}")


@dataclass(frozen=True)
class TruthSpec:
    """Parameters of an analytic ground-truth flow.

    ``convection_speed`` defaults to wavelength / period; an explicit value
    must keep the field exactly periodic in time (speed * period must be an
    integer number of wavelengths).
    """

    kind: str
    meta: FieldMeta
    amplitude: float = 1.0
    wavelength: float = 16.0
    period: float = 5.0
    convection_speed: float | None = None

    def __post_init__(self):
        if self.kind not in TRUTH_KINDS:
            raise ValueError(f"unknown truth kind {self.kind!r}; expected {TRUTH_KINDS}")
        for name in ("amplitude", "wavelength", "period"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive, got {value!r}")
        if self.convection_speed is None:
            object.__setattr__(self, "convection_speed", self.wavelength / self.period)
        else:
            if not np.isfinite(self.convection_speed) or self.convection_speed <= 0:
                raise ValueError(
                    f"convection_speed must be positive, got {self.convection_speed!r}"
                )
            cycles = self.convection_speed * self.period / self.wavelength
            if abs(cycles - round(cycles)) > 1e-9:
                raise ValueError(
                    "convection_speed breaks time periodicity: speed * period "
                    f"covers {cycles} wavelengths, expected an integer"
                )


def add_noise(matrix: SnapshotMatrix, spec: NoiseSpec) -> SnapshotMatrix:
    """Add i.i.d. Gaussian noise with std = eta * std(all entries).

    A zero noise level or a constant matrix returns the input unchanged.
    The unit-variance noise field is drawn first and then scaled, so scaling
    the input by a positive power of two scales the output exactly.
    """
    if spec.eta == 0.0:
        return matrix
    sigma_t = float(np.std(matrix.data))
    if sigma_t == 0.0:
        return matrix
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(matrix.shape)
    scale = spec.eta * sigma_t
    return SnapshotMatrix(matrix.meta, matrix.data + scale * noise)


def _wave_component(spec: TruthSpec, c: int, x, y, t) -> np.ndarray:
    """amplitude * sin(2 pi (x - speed t) / wavelength) * cos(2 pi y / wavelength + c)."""
    phase_x = 2.0 * np.pi * (x[:, None, None] - spec.convection_speed * t[None, None, :])
    phase_x /= spec.wavelength
    profile_y = np.cos(2.0 * np.pi * y[None, :, None] / spec.wavelength + c)
    return spec.amplitude * np.sin(phase_x) * profile_y


def _wake_component(spec: TruthSpec, c: int, x, y, t) -> np.ndarray:
    """Steady shear plus phase-shifted traveling harmonics in a wake band."""
    meta = spec.meta
    a = spec.amplitude
    y0 = 0.5 * (meta.n_y - 1)
    y_scale = max(meta.n_y / 10.0, 1.0)
    band = np.exp(-(((y[None, :, None] - y0) / max(meta.n_y / 6.0, 1.0)) ** 2))
    shear = np.tanh((y[None, :, None] - y0) / y_scale)

    base = WAKE_BASE * a if c == 0 else 0.0
    shear_amp = WAKE_SHEAR * a if c == 0 else 0.5 * WAKE_SHEAR * a
    out = np.full((meta.n_x, meta.n_y, t.size), base, dtype=np.float64)
    out += shear_amp * shear
    for h in range(1, WAKE_HARMONICS + 1):
        amp_h = WAKE_FLUCT * a * 2.0 ** (1 - h)
        phase = 2.0 * np.pi * h * (
            x[:, None, None] / spec.wavelength - t[None, None, :] / spec.period
        )
        out += amp_h * band * np.sin(phase + c * np.pi / 2.0)
    return out


def generate_truth(spec: TruthSpec) -> SnapshotMatrix:
    """Evaluate the analytic truth on the configured grid and times."""
    meta = spec.meta
    x = np.arange(meta.n_x, dtype=np.float64)
    y = np.arange(meta.n_y, dtype=np.float64)
    t = np.arange(meta.n_t, dtype=np.float64) * meta.dt
    component = _wave_component if spec.kind == "traveling_wave" else _wake_component
    points = meta.n_x * meta.n_y
    data = np.empty((meta.J, meta.n_t), dtype=np.float64)
    for c in range(meta.n_comp):
        plane = component(spec, c, x, y, t)
        block = np.repeat(
            plane.reshape(points, meta.n_t), meta.n_z, axis=0
        ) if meta.n_z > 1 else plane.reshape(points, meta.n_t)
        data[c * points * meta.n_z : (c + 1) * points * meta.n_z, :] = block
    return SnapshotMatrix(meta, data)


class TwinExperiment(NamedTuple):
    """Manufactured inputs for one assimilation experiment."""

    u_b_full: SnapshotMatrix
    u_b_reduced: ReducedSnapshotMatrix
    observations: dict


def make_twin_experiment(
    truth: SnapshotMatrix,
    ub_sensors: SensorSet,
    w_sensors: SensorSet,
    noise_ub: NoiseSpec,
    noise_w: NoiseSpec,
    w_time_stride: int = 1,
) -> TwinExperiment:
    """Manufacture background and observations from a known truth.

    The background is the truth with one noise realization, kept at full
    resolution and extracted at the background sensors; the observations are
    an independent noise realization extracted at the observation sensors
    and time stride, returned as a {time index: vector} map.
    """
    for name, sensors in (("ub_sensors", ub_sensors), ("w_sensors", w_sensors)):
        if sensors.source_J != truth.J:
            raise ValueError(
                f"{name} indexes a state of size {sensors.source_J}, "
                f"truth has J={truth.J}"
            )
    u_b_full = add_noise(truth, noise_ub)
    u_b_reduced = extract(u_b_full, ub_sensors, 1)
    w_matrix = extract(add_noise(truth, noise_w), w_sensors, w_time_stride)
    observations = {
        int(k): w_matrix.data[:, j].copy()
        for j, k in enumerate(w_matrix.time_indices)
    }
    return TwinExperiment(u_b_full, u_b_reduced, observations)
