"""Reader/writer for the SNP1 binary snapshot interchange format.

Layout, little-endian throughout:

    bytes 0..3    magic "SNP1"
    u32           version (currently 1)
    u32 x 5       n_comp, n_x, n_y, n_z, n_t
    f64           dt
    f64 x J*n_t   snapshot columns, one J-block per time instant, in the
                  fixed component/x/y/z flattening order

Readers reject wrong magic, wrong version, and payloads whose size does not
match the header exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .snapshots import FieldMeta, SnapshotMatrix

__all__ = ["SNP_MAGIC", "SNP_VERSION", "write_snapshot_file", "read_snapshot_file"]

SNP_MAGIC = b"SNP1"
SNP_VERSION = 1

_HEADER = struct.Struct("<4sIIIIIId")


def write_snapshot_file(path, matrix: SnapshotMatrix) -> None:
    """Write a snapshot matrix to ``path`` in SNP1 format."""
    meta = matrix.meta
    header = _HEADER.pack(
        SNP_MAGIC,
        SNP_VERSION,
        meta.n_comp,
        meta.n_x,
        meta.n_y,
        meta.n_z,
        meta.n_t,
        meta.dt,
    )
    # transpose puts each snapshot column contiguous in the byte stream
    payload = np.ascontiguousarray(matrix.data.T, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_snapshot_file(path) -> SnapshotMatrix:
    """Read an SNP1 file back into a snapshot matrix."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated SNP1 header ({len(raw)} bytes)")
    magic, version, n_comp, n_x, n_y, n_z, n_t, dt = _HEADER.unpack_from(raw)
    if magic != SNP_MAGIC:
        raise ValueError(f"{path}: not an SNP1 file (magic {magic!r})")
    if version != SNP_VERSION:
        raise ValueError(f"{path}: unsupported SNP1 version {version}")
    meta = FieldMeta(n_comp=n_comp, n_x=n_x, n_y=n_y, n_t=n_t, dt=dt, n_z=n_z)
    expected = meta.J * meta.n_t * 8
    got = len(raw) - _HEADER.size
    if got != expected:
        kind = "truncated" if got < expected else "oversized"
        raise ValueError(
            f"{path}: {kind} SNP1 payload ({got} bytes, header implies {expected})"
        )
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    data = flat.reshape(meta.n_t, meta.J).T.copy()
    return SnapshotMatrix(meta, data)
