"""Truncated SVD with rank-selection policies and the reduced-data
reconstruction that lifts factors of a downsampled snapshot matrix back to
full resolution.

The lift takes three ingredients: the reduced matrix itself (rows and
columns both subsampled), a semi-reduced matrix keeping all rows at the
reduced times, and a semi-reduced matrix keeping the reduced rows at all
times. Modes are re-orthonormalized by QR before inversion because retaining
small singular values makes the raw factors slightly non-orthogonal, and the
sign of each temporal mode is pinned so the recovered diagonal is
nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .snapshots import ReducedSnapshotMatrix

__all__ = [
    "TruncationPolicy",
    "SVDFactors",
    "truncated_svd",
    "mode_count",
    "reorthonormalize",
    "fix_signs",
    "lcsvd_reconstruct",
]

# modes with recovered singular value below this fraction of the largest are
# dropped instead of inverted
SIGMA_DROP_RATIO = 1e-14


@dataclass(frozen=True)
class TruncationPolicy:
    """How many SVD modes to keep.

    Exactly one variant is active:

    * ``tolerance``: smallest N with sigma[N] / sigma[0] <= eps
      (eps = 0 keeps every positive singular value);
    * ``fixed_rank``: N modes, clipped to min(J, K);
    * ``fraction_of_min_dim``: N = max(1, floor(f * min(J, K))).
    """

    kind: str
    eps: float | None = None
    rank: int | None = None
    fraction: float | None = None

    def __post_init__(self):
        if self.kind == "tolerance":
            if self.eps is None or not (0.0 <= self.eps <= 1.0):
                raise ValueError(f"tolerance must lie in [0, 1], got {self.eps!r}")
            if self.rank is not None or self.fraction is not None:
                raise ValueError("tolerance policy takes only an eps value")
        elif self.kind == "fixed_rank":
            if self.rank is None or self.rank < 1:
                raise ValueError(f"fixed rank must be >= 1, got {self.rank!r}")
            if self.eps is not None or self.fraction is not None:
                raise ValueError("fixed_rank policy takes only a rank value")
        elif self.kind == "fraction_of_min_dim":
            if self.fraction is None or not (0.0 < self.fraction <= 1.0):
                raise ValueError(f"fraction must lie in (0, 1], got {self.fraction!r}")
            if self.eps is not None or self.rank is not None:
                raise ValueError("fraction_of_min_dim policy takes only a fraction")
        else:
            raise ValueError(f"unknown truncation policy kind {self.kind!r}")

    @classmethod
    def tolerance(cls, eps: float) -> "TruncationPolicy":
        return cls(kind="tolerance", eps=float(eps))

    @classmethod
    def fixed_rank(cls, rank: int) -> "TruncationPolicy":
        return cls(kind="fixed_rank", rank=int(rank))

    @classmethod
    def fraction_of_min_dim(cls, fraction: float) -> "TruncationPolicy":
        return cls(kind="fraction_of_min_dim", fraction=float(fraction))


@dataclass(frozen=True)
class SVDFactors:
    """Truncated factorization V ~ W @ diag(sigma) @ T.T.

    ``W`` is J x N (spatial modes), ``T`` is K x N (temporal coefficients),
    ``sigma`` holds the N retained singular values in nonincreasing order.
    ``validate()`` enforces the orthonormality contract; factors recovered
    from noisy reduced data are only approximately orthonormal and are
    returned unvalidated.
    """

    W: np.ndarray
    sigma: np.ndarray
    T: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.sigma.size)

    def reconstruct(self) -> np.ndarray:
        return (self.W * self.sigma) @ self.T.T

    def validate(self, ortho_tol: float = 1e-10) -> "SVDFactors":
        n = self.rank
        if self.W.shape[1] != n or self.T.shape[1] != n:
            raise ValueError("factor column counts disagree with sigma length")
        if n > min(self.W.shape[0], self.T.shape[0]):
            raise ValueError("retained rank exceeds min(J, K)")
        if not (self.sigma > 0).all():
            raise ValueError("singular values must be strictly positive")
        if n > 1 and (np.diff(self.sigma) > 0).any():
            raise ValueError("singular values must be nonincreasing")
        eye = np.eye(n)
        for name, mat in (("W", self.W), ("T", self.T)):
            err = np.abs(mat.T @ mat - eye).max()
            if err > ortho_tol:
                raise ValueError(
                    f"{name} columns are not orthonormal (max deviation {err:.3e})"
                )
        return self


def _select_rank(policy: TruncationPolicy, sigma: np.ndarray, min_dim: int) -> int:
    if sigma.size == 0 or sigma[0] <= 0.0:
        raise ValueError("matrix has no positive singular values (zero matrix)")
    positive = int(np.count_nonzero(sigma > 0.0))
    if policy.kind == "tolerance":
        ratios = sigma / sigma[0]
        n = min_dim
        for i in range(1, sigma.size):
            if ratios[i] <= policy.eps:
                n = i
                break
    elif policy.kind == "fixed_rank":
        n = min(policy.rank, min_dim)
    else:
        n = max(1, int(np.floor(policy.fraction * min_dim)))
    return max(1, min(n, positive))


def mode_count(policy: TruncationPolicy, J_bar: int, K_bar: int) -> int:
    """Retained mode count implied by a policy for a J_bar x K_bar matrix.

    Total on valid inputs: the tolerance variant (data-dependent) returns
    its cap min(J_bar, K_bar).
    """
    if J_bar < 1 or K_bar < 1:
        raise ValueError("matrix dimensions must be >= 1")
    min_dim = min(J_bar, K_bar)
    if policy.kind == "fixed_rank":
        return min(policy.rank, min_dim)
    if policy.kind == "fraction_of_min_dim":
        return max(1, int(np.floor(policy.fraction * min_dim)))
    return min_dim


def truncated_svd(V: np.ndarray, policy: TruncationPolicy) -> SVDFactors:
    """Truncated SVD of a dense matrix under a rank-selection policy."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {V.shape}")
    if not np.isfinite(V).all():
        raise ValueError("matrix contains non-finite entries")
    U, s, Vh = np.linalg.svd(V, full_matrices=False)
    n = _select_rank(policy, s, min(V.shape))
    return SVDFactors(W=U[:, :n], sigma=s[:n].copy(), T=Vh[:n].T.copy()).validate()


def reorthonormalize(M: np.ndarray) -> np.ndarray:
    """Restore orthonormal columns via QR, preserving the column span.

    Returns M @ R^-1 with the sign convention diag(R) > 0, so an already
    orthonormal input comes back unchanged. Rank-deficient input raises and
    names the collapsed column.
    """
    M = np.asarray(M, dtype=np.float64)
    q, r = np.linalg.qr(M, mode="reduced")
    diag = np.diag(r)
    tol = max(M.shape) * np.finfo(np.float64).eps * np.abs(diag).max(initial=0.0)
    dead = np.where(np.abs(diag) <= tol)[0]
    if dead.size:
        raise ValueError(
            f"column {int(dead[0])} is linearly dependent; cannot re-orthonormalize"
        )
    return q * np.sign(diag)


def fix_signs(
    W_bar: np.ndarray, T_bar: np.ndarray, V_bar: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Flip temporal-coefficient columns so diag(W.T @ V @ T) is nonnegative.

    Spatial modes are left untouched; only the temporal side carries the
    sign ambiguity out of this routine.
    """
    W_bar = np.asarray(W_bar, dtype=np.float64)
    T_bar = np.asarray(T_bar, dtype=np.float64)
    V_bar = np.asarray(V_bar, dtype=np.float64)
    jb, n = W_bar.shape
    if T_bar.ndim != 2 or T_bar.shape[1] != n:
        raise ValueError(
            f"temporal factor shape {T_bar.shape} does not match {n} modes"
        )
    if V_bar.shape != (jb, T_bar.shape[0]):
        raise ValueError(
            f"data shape {V_bar.shape} does not match factors "
            f"({jb} x {T_bar.shape[0]})"
        )
    diag = np.einsum("jn,jk,kn->n", W_bar, V_bar, T_bar)
    flip = np.where(diag < 0.0, -1.0, 1.0)
    return W_bar, T_bar * flip


def _check_subselection(name: str, reduced: np.ndarray, taken: np.ndarray) -> None:
    scale = max(1.0, float(np.abs(reduced).max(initial=0.0)))
    err = float(np.abs(reduced - taken).max(initial=0.0))
    if err > 1e-12 * scale:
        raise ValueError(
            f"reduced matrix is not an exact {name} sub-selection of the "
            f"semi-reduced matrix (max deviation {err:.3e})"
        )


def lcsvd_reconstruct(
    V_bar: ReducedSnapshotMatrix,
    V_rows_full: np.ndarray,
    V_cols_full: np.ndarray,
    policy: TruncationPolicy,
) -> tuple[np.ndarray, SVDFactors]:
    """Reconstruct a full J x K matrix from reduced data.

    ``V_rows_full`` keeps every row at the reduced times (J x K_bar);
    ``V_cols_full`` keeps the reduced rows at every time (J_bar x K). Both
    must contain ``V_bar`` exactly as a sub-selection under its sensor set
    and time stride.

    Pipeline: truncated SVD of the reduced matrix, QR re-orthonormalization
    of both factors, temporal sign fixing, then the singular values are
    recomputed from the re-orthonormalized factors before the semi-reduced
    matrices lift modes and coefficients back to full size. Modes whose
    recovered singular value falls below ``SIGMA_DROP_RATIO`` times the
    largest are dropped rather than inverted.

    Returns the reconstruction and the recovered (lifted) factors.
    """
    rows_full = np.asarray(V_rows_full, dtype=np.float64)
    cols_full = np.asarray(V_cols_full, dtype=np.float64)
    reduced = V_bar.data
    J = V_bar.parent_meta.J
    K = V_bar.parent_meta.n_t
    if rows_full.shape != (J, V_bar.K_bar):
        raise ValueError(
            f"row-complete matrix has shape {rows_full.shape}, expected "
            f"({J}, {V_bar.K_bar})"
        )
    if cols_full.shape != (V_bar.J_bar, K):
        raise ValueError(
            f"column-complete matrix has shape {cols_full.shape}, expected "
            f"({V_bar.J_bar}, {K})"
        )
    _check_subselection("row", reduced, rows_full[V_bar.sensors.indices, :])
    _check_subselection("column", reduced, cols_full[:, V_bar.time_indices])

    U, s, Vh = np.linalg.svd(reduced, full_matrices=False)
    n = _select_rank(policy, s, min(reduced.shape))
    W_red = reorthonormalize(U[:, :n])
    T_red = reorthonormalize(Vh[:n].T)
    W_red, T_red = fix_signs(W_red, T_red, reduced)
    sigma = np.einsum("jn,jk,kn->n", W_red, reduced, T_red)

    keep = sigma >= SIGMA_DROP_RATIO * sigma.max(initial=0.0)
    if not keep.any():
        raise ValueError("all recovered singular values are at round-off level")
    if not keep.all():
        W_red = W_red[:, keep]
        T_red = T_red[:, keep]
        sigma = sigma[keep]

    W_rec = (rows_full @ T_red) / sigma
    T_rec = (cols_full.T @ W_red) / sigma
    V_rec = (W_rec * sigma) @ T_rec.T
    return V_rec, SVDFactors(W=W_rec, sigma=sigma, T=T_rec)
