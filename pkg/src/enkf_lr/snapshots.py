"""Snapshot-matrix data model: field metadata, sensor selections, downsampling.

A snapshot matrix stacks flattened field states as columns, one column per
time instant. Rows follow a fixed flattening order: component slowest, then
x, then y, then z. Every spatial selection (downsampling, virtual sensors)
is expressed as a strictly increasing set of row indices into that layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FieldMeta",
    "SnapshotMatrix",
    "SensorSet",
    "ReducedSnapshotMatrix",
    "assemble_snapshot_matrix",
    "disassemble_snapshot_matrix",
    "uniform_sensor_set",
    "extract",
    "compression_rate",
]


@dataclass(frozen=True)
class FieldMeta:
    """Grid and time-sampling metadata for a field sequence.

    ``n_z = 1`` describes two-dimensional data. The flattened state size
    ``J = n_comp * n_x * n_y * n_z`` is exposed as a derived property.
    """

    n_comp: int
    n_x: int
    n_y: int
    n_t: int
    dt: float
    n_z: int = 1

    def __post_init__(self):
        for name in ("n_comp", "n_x", "n_y", "n_z", "n_t"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ValueError(f"dt must be positive and finite, got {self.dt!r}")

    @property
    def J(self) -> int:
        return self.n_comp * self.n_x * self.n_y * self.n_z

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return (self.n_x, self.n_y, self.n_z)

    def flat_index(self, comp: int, ix: int, iy: int, iz: int = 0) -> int:
        """Row index of grid point (comp, ix, iy, iz) in the flattened state."""
        for name, value, bound in (
            ("comp", comp, self.n_comp),
            ("ix", ix, self.n_x),
            ("iy", iy, self.n_y),
            ("iz", iz, self.n_z),
        ):
            if not 0 <= value < bound:
                raise IndexError(f"{name}={value} out of range [0, {bound})")
        return ((comp * self.n_x + ix) * self.n_y + iy) * self.n_z + iz


def _check_finite(arr: np.ndarray, what: str) -> None:
    finite = np.isfinite(arr)
    if not finite.all():
        bad = int(np.argmin(finite.ravel()))
        raise ValueError(f"{what} contains a non-finite value at flat index {bad}")


@dataclass(frozen=True)
class SnapshotMatrix:
    """Dense J x K matrix whose column k is the flattened field at time k."""

    meta: FieldMeta
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"snapshot data must be 2-D, got ndim={arr.ndim}")
        if arr.shape != (self.meta.J, self.meta.n_t):
            raise ValueError(
                f"snapshot data has shape {arr.shape}, expected "
                f"({self.meta.J}, {self.meta.n_t}) from metadata"
            )
        _check_finite(arr, "snapshot data")
        object.__setattr__(self, "data", arr)

    @property
    def J(self) -> int:
        return self.meta.J

    @property
    def K(self) -> int:
        return self.meta.n_t

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class SensorSet:
    """Strictly increasing row indices into a J-dimensional flattened state."""

    indices: np.ndarray
    source_J: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("sensor indices must be a non-empty 1-D sequence")
        if self.source_J < 1 or idx.size > self.source_J:
            raise ValueError(
                f"sensor count {idx.size} invalid for state size {self.source_J}"
            )
        if idx[0] < 0 or idx[-1] >= self.source_J:
            raise ValueError(
                f"sensor indices must lie in [0, {self.source_J}), "
                f"got range [{idx[0]}, {idx[-1]}]"
            )
        if idx.size > 1 and not (np.diff(idx) > 0).all():
            raise ValueError("sensor indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class ReducedSnapshotMatrix:
    """Row/time sub-selection of a parent snapshot matrix.

    ``time_stride`` records which parent columns the reduced columns came
    from (0, stride, 2*stride, ...); downstream reconstruction needs this to
    verify sub-selection consistency against semi-reduced matrices.
    """

    parent_meta: FieldMeta
    sensors: SensorSet
    data: np.ndarray
    time_stride: int = 1

    def __post_init__(self):
        if self.sensors.source_J != self.parent_meta.J:
            raise ValueError(
                f"sensor set indexes J={self.sensors.source_J} but parent "
                f"metadata has J={self.parent_meta.J}"
            )
        if self.time_stride < 1:
            raise ValueError(f"time_stride must be >= 1, got {self.time_stride}")
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"reduced data must be 2-D, got ndim={arr.ndim}")
        expected_k = len(range(0, self.parent_meta.n_t, self.time_stride))
        if arr.shape != (len(self.sensors), expected_k):
            raise ValueError(
                f"reduced data has shape {arr.shape}, expected "
                f"({len(self.sensors)}, {expected_k}) from sensors and stride"
            )
        _check_finite(arr, "reduced snapshot data")
        object.__setattr__(self, "data", arr)

    @property
    def J_bar(self) -> int:
        return int(self.data.shape[0])

    @property
    def K_bar(self) -> int:
        return int(self.data.shape[1])

    @property
    def time_indices(self) -> np.ndarray:
        """Parent column indices the reduced columns were taken from."""
        return np.arange(0, self.parent_meta.n_t, self.time_stride, dtype=np.int64)


def assemble_snapshot_matrix(fields, meta: FieldMeta) -> SnapshotMatrix:
    """Stack per-time component arrays into a snapshot matrix.

    ``fields`` is a length-``n_t`` sequence; each entry supplies ``n_comp``
    arrays holding ``n_x * n_y * n_z`` values (any shape; flattened in
    C order, so x varies slowest within a component block).
    """
    fields = list(fields)
    if len(fields) != meta.n_t:
        raise ValueError(f"got {len(fields)} time entries, expected {meta.n_t}")
    points = meta.n_x * meta.n_y * meta.n_z
    out = np.empty((meta.J, meta.n_t), dtype=np.float64)
    for k, entry in enumerate(fields):
        comps = list(entry)
        if len(comps) != meta.n_comp:
            raise ValueError(
                f"time {k}: got {len(comps)} components, expected {meta.n_comp}"
            )
        for c, comp in enumerate(comps):
            arr = np.asarray(comp, dtype=np.float64).ravel()
            if arr.size != points:
                raise ValueError(
                    f"time {k}, component {c}: {arr.size} values, expected {points}"
                )
            finite = np.isfinite(arr)
            if not finite.all():
                bad = int(np.argmin(finite))
                raise ValueError(
                    f"time {k}, component {c}: non-finite value at flat index {bad}"
                )
            out[c * points : (c + 1) * points, k] = arr
    return SnapshotMatrix(meta, out)


def disassemble_snapshot_matrix(matrix: SnapshotMatrix):
    """Inverse of :func:`assemble_snapshot_matrix`.

    Returns a list over time of lists of per-component arrays shaped
    (n_x, n_y, n_z).
    """
    meta = matrix.meta
    points = meta.n_x * meta.n_y * meta.n_z
    result = []
    for k in range(meta.n_t):
        col = matrix.data[:, k]
        result.append(
            [
                col[c * points : (c + 1) * points].reshape(meta.grid_shape).copy()
                for c in range(meta.n_comp)
            ]
        )
    return result


def uniform_sensor_set(J: int, n_s: int) -> SensorSet:
    """Pick ``n_s`` equidistant row indices out of ``J``.

    Index i is floor(i * J / n_s); consecutive gaps differ by at most one,
    and the selection is deterministic.
    """
    if n_s < 1 or n_s > J:
        raise ValueError(f"sensor count must satisfy 1 <= n_s <= J, got n_s={n_s}, J={J}")
    indices = (np.arange(n_s, dtype=np.int64) * J) // n_s
    return SensorSet(indices=indices, source_J=J)


def extract(
    matrix: SnapshotMatrix, sensors: SensorSet, time_stride: int = 1
) -> ReducedSnapshotMatrix:
    """Restrict a snapshot matrix to sensor rows and strided time columns."""
    if sensors.source_J != matrix.J:
        raise ValueError(
            f"sensor set indexes J={sensors.source_J} but matrix has J={matrix.J}"
        )
    if time_stride < 1:
        raise ValueError(f"time_stride must be >= 1, got {time_stride}")
    cols = np.arange(0, matrix.K, time_stride)
    data = matrix.data[np.ix_(sensors.indices, cols)]
    return ReducedSnapshotMatrix(
        parent_meta=matrix.meta, sensors=sensors, data=data, time_stride=time_stride
    )


def compression_rate(J: int, n_s: int) -> float:
    """Ratio of full state size to retained sensor count."""
    if n_s < 1:
        raise ValueError(f"sensor count must be >= 1, got {n_s}")
    return J / n_s
