"""Stochastic ensemble Kalman filter over a snapshot window.

The filter state is an ensemble of full state vectors. The analysis update
uses the anomaly form of the Kalman gain: with A the centered member matrix
and H a row-selection operator, the gain

    K = A (HA)^T [ (HA)(HA)^T + (E-1) R ]^-1

is algebraically identical to B H^T (H B H^T + R)^-1 with B the sample
covariance, but never materializes the n x n covariance. The explicit form
is kept for small-instance diagnostics and as an independent test oracle.

The default forecast operator anchors the ensemble mean to a supplied
background trajectory: each member keeps its (optionally damped) anomaly
around the previous mean, recentered on the next background column, plus
additive process noise. Alternative propagators can be passed in; the only
requirements are member-independent propagation and additive noise.

All randomness derives from per-purpose, per-step streams spawned from the
configured seed, so results are reproducible and independent of scheduling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .snapshots import ReducedSnapshotMatrix, SensorSet, SnapshotMatrix

__all__ = [
    "Ensemble",
    "ObservationModel",
    "EnKFConfig",
    "AssimilationResult",
    "init_ensemble",
    "forecast",
    "background_covariance",
    "kalman_gain_anomaly",
    "perturb_observations",
    "analysis_update",
    "assimilate_window",
    "observation_stream",
]

# stream purposes, mixed into per-step seeds
_INIT, _FORECAST, _OBS = 0, 1, 2

# ModelOperator(members, next_time_index) -> propagated members (n x E)
ModelOperator = Callable[[np.ndarray, int], np.ndarray]


def _member_stream(seed: int, purpose: int, time_index: int, member: int):
    key = np.random.SeedSequence(seed, spawn_key=(purpose, time_index, member))
    return np.random.Generator(np.random.PCG64(key))


def observation_stream(seed: int, time_index: int) -> np.random.Generator:
    """Generator used to perturb the observation assimilated at one step."""
    key = np.random.SeedSequence(seed, spawn_key=(_OBS, time_index))
    return np.random.Generator(np.random.PCG64(key))


@dataclass(frozen=True)
class Ensemble:
    """E state vectors stored as the columns of an n x E matrix."""

    members: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        arr = np.asarray(self.members, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] < 2:
            raise ValueError(
                f"ensemble needs an n x E matrix with E >= 2, got shape {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise ValueError("ensemble members contain non-finite values")
        object.__setattr__(self, "members", arr)

    @property
    def size(self) -> int:
        return int(self.members.shape[1])

    @property
    def dim(self) -> int:
        return int(self.members.shape[0])

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=1)

    def anomalies(self) -> np.ndarray:
        return self.members - self.members.mean(axis=1, keepdims=True)

    def spread_trace(self) -> float:
        """Trace of the sample covariance, without forming it."""
        a = self.anomalies()
        return float(np.sum(a * a) / (self.size - 1))


@dataclass(frozen=True)
class ObservationModel:
    """Row-selection observation operator with diagonal noise covariance."""

    sensors: SensorSet
    r_variance: np.ndarray

    def __post_init__(self):
        var = np.asarray(self.r_variance, dtype=np.float64)
        if var.ndim != 1 or var.size != len(self.sensors):
            raise ValueError(
                f"r_variance must hold one value per sensor "
                f"({len(self.sensors)}), got shape {var.shape}"
            )
        if not np.isfinite(var).all() or (var < 0).any():
            raise ValueError("observation variances must be finite and >= 0")
        object.__setattr__(self, "r_variance", var)

    @property
    def m(self) -> int:
        return len(self.sensors)

    def observe(self, state: np.ndarray) -> np.ndarray:
        """Apply the selection operator (works on vectors and member matrices)."""
        return state[self.sensors.indices]


@dataclass(frozen=True)
class EnKFConfig:
    """Ensemble size, noise magnitudes and the RNG seed.

    ``anomaly_retention`` is the damping factor applied to member anomalies
    by the default background-anchored forecast operator.
    """

    ensemble_size: int = 25
    init_spread: float = 0.0
    process_noise_std: float = 0.0
    anomaly_retention: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError(f"ensemble size must be >= 2, got {self.ensemble_size}")
        if self.init_spread < 0 or self.process_noise_std < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if not 0.0 <= self.anomaly_retention <= 1.0:
            raise ValueError(
                f"anomaly retention must lie in [0, 1], got {self.anomaly_retention}"
            )

    @classmethod
    def for_smooth_flow(cls, **overrides) -> "EnKFConfig":
        """Preset for smooth/laminar dynamics (25 members)."""
        overrides.setdefault("ensemble_size", 25)
        return cls(**overrides)

    @classmethod
    def for_turbulent_flow(cls, **overrides) -> "EnKFConfig":
        """Preset for turbulent dynamics (45 members)."""
        overrides.setdefault("ensemble_size", 45)
        return cls(**overrides)


@dataclass(frozen=True)
class AssimilationResult:
    """Per-step ensemble means plus spread, timing and memory diagnostics."""

    analysis: np.ndarray
    per_step_spread: np.ndarray
    wall_time: float
    peak_state_bytes: int

    def __post_init__(self):
        if self.analysis.shape[1] != self.per_step_spread.size:
            raise ValueError("one spread value per analysis column required")
        if (self.per_step_spread < 0).any():
            raise ValueError("spread traces must be >= 0")


def init_ensemble(u_b0: np.ndarray, config: EnKFConfig) -> Ensemble:
    """Draw E members i.i.d. from N(u_b0, init_spread^2 I)."""
    u_b0 = np.asarray(u_b0, dtype=np.float64)
    if u_b0.ndim != 1:
        raise ValueError(f"initial state must be a vector, got shape {u_b0.shape}")
    if not np.isfinite(u_b0).all():
        raise ValueError("initial state contains non-finite values")
    n, E = u_b0.size, config.ensemble_size
    members = np.repeat(u_b0[:, None], E, axis=1)
    if config.init_spread > 0:
        for i in range(E):
            rng = _member_stream(config.seed, _INIT, 0, i)
            members[:, i] += config.init_spread * rng.standard_normal(n)
    return Ensemble(members=members, time_index=0)


def forecast(
    ens: Ensemble,
    background_next: np.ndarray,
    config: EnKFConfig,
    model: ModelOperator | None = None,
) -> Ensemble:
    """Propagate every member to the next step and add process noise.

    The default operator recenters the ensemble on ``background_next`` while
    retaining each member's anomaly scaled by ``anomaly_retention``.
    """
    background_next = np.asarray(background_next, dtype=np.float64)
    if background_next.shape != (ens.dim,):
        raise ValueError(
            f"background state has length {background_next.size}, "
            f"members have length {ens.dim}"
        )
    k_next = ens.time_index + 1
    if model is None:
        members = background_next[:, None] + config.anomaly_retention * ens.anomalies()
    else:
        members = np.array(model(ens.members, k_next), dtype=np.float64)
        if members.shape != ens.members.shape:
            raise ValueError("model operator changed the ensemble shape")
    if config.process_noise_std > 0:
        for i in range(ens.size):
            rng = _member_stream(config.seed, _FORECAST, k_next, i)
            members[:, i] += config.process_noise_std * rng.standard_normal(ens.dim)
    return Ensemble(members=members, time_index=k_next)


def background_covariance(ens: Ensemble, max_entries: int = 10**8) -> np.ndarray:
    """Unbiased sample covariance of the members (small states only).

    Refuses to allocate beyond ``max_entries``; large states must go through
    the anomaly-based gain instead.
    """
    n = ens.dim
    if n * n > max_entries:
        raise ValueError(
            f"explicit {n} x {n} covariance exceeds the {max_entries}-entry guard; "
            "use the anomaly-based gain"
        )
    a = ens.anomalies()
    return (a @ a.T) / (ens.size - 1)


def _innovation_solve(
    ens: Ensemble, obs: ObservationModel, rhs: np.ndarray
) -> np.ndarray:
    """Solve [ (HA)(HA)^T + (E-1) R ] X = rhs via Cholesky."""
    anomalies = ens.anomalies()
    ha = obs.observe(anomalies)
    s = ha @ ha.T + (ens.size - 1) * np.diag(obs.r_variance)
    try:
        factor = cho_factor(s, lower=True)
    except LinAlgError as exc:
        raise ValueError(
            "observation-space system is numerically singular "
            "(zero ensemble spread with zero observation noise)"
        ) from exc
    return anomalies, ha, cho_solve(factor, rhs)


def kalman_gain_anomaly(ens: Ensemble, obs: ObservationModel) -> np.ndarray:
    """n x m Kalman gain computed from anomalies, never forming B."""
    if obs.sensors.source_J != ens.dim:
        raise ValueError(
            f"observation sensors index a state of size {obs.sensors.source_J}, "
            f"ensemble has size {ens.dim}"
        )
    anomalies, ha, solved = _innovation_solve(ens, obs, obs.observe(ens.anomalies()))
    return anomalies @ solved.T


def perturb_observations(
    w: np.ndarray, obs: ObservationModel, ensemble_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw one noisy observation copy per member, as an m x E matrix."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (obs.m,):
        raise ValueError(
            f"observation vector has length {w.size}, model expects {obs.m}"
        )
    noise = rng.standard_normal((obs.m, ensemble_size))
    return w[:, None] + np.sqrt(obs.r_variance)[:, None] * noise


def analysis_update(
    ens: Ensemble, w: np.ndarray, obs: ObservationModel, rng: np.random.Generator
) -> Ensemble:
    """Update every member with its own perturbed observation."""
    if obs.sensors.source_J != ens.dim:
        raise ValueError(
            f"observation sensors index a state of size {obs.sensors.source_J}, "
            f"ensemble has size {ens.dim}"
        )
    perturbed = perturb_observations(w, obs, ens.size, rng)
    innovations = perturbed - obs.observe(ens.members)
    anomalies, ha, solved = _innovation_solve(ens, obs, innovations)
    members = ens.members + anomalies @ (ha.T @ solved)
    return Ensemble(members=members, time_index=ens.time_index)


def _peak_state_bytes(n: int, K: int, E: int, m: int) -> int:
    """Analytic byte tally of the largest live matrix set in the DA loop.

    Counts the background window and analysis store (n x K each), members
    plus anomalies plus the member-update temporary (n x E each), and the
    observation-space workspaces (two m x E, one m x m, one E x E).
    """
    entries = 2 * n * K + 3 * n * E + 2 * m * E + m * m + E * E
    return 8 * entries


def assimilate_window(
    background: SnapshotMatrix | ReducedSnapshotMatrix,
    observations: Mapping[int, np.ndarray],
    obs: ObservationModel,
    config: EnKFConfig,
    model: ModelOperator | None = None,
) -> AssimilationResult:
    """Run the full forecast/analysis cycle over a background window.

    The ensemble starts from column 0 of the background. At every later
    step it is forecast to that column; whenever ``observations`` holds a
    vector for the step, the perturbed-observation analysis runs as well.
    """
    window = background.data
    n, K = window.shape
    if K < 1 or n < 1:
        raise ValueError("background window is empty")
    if obs.sensors.source_J != n:
        raise ValueError(
            f"observation sensors index a state of size {obs.sensors.source_J}, "
            f"background states have size {n}"
        )
    for k in observations:
        if not 0 <= k < K:
            raise ValueError(f"observation at time {k} outside window [0, {K})")

    start = time.perf_counter()
    ens = init_ensemble(window[:, 0], config)
    analysis = np.empty((n, K), dtype=np.float64)
    spread = np.empty(K, dtype=np.float64)
    for k in range(K):
        if k > 0:
            ens = forecast(ens, window[:, k], config, model=model)
        if k in observations:
            rng = observation_stream(config.seed, k)
            ens = analysis_update(ens, np.asarray(observations[k]), obs, rng)
        analysis[:, k] = ens.mean()
        spread[k] = ens.spread_trace()
    wall = time.perf_counter() - start

    m = obs.m if observations else 0
    return AssimilationResult(
        analysis=analysis,
        per_step_spread=spread,
        wall_time=wall,
        peak_state_bytes=_peak_state_bytes(n, K, config.ensemble_size, m),
    )
