"""Row-subspace estimation from the common measurements ``Z = Phi X``.

The estimate is the dominant eigenspace of the ``N x N`` Gram matrix
``Z^H Z``; it spans the row space of ``X`` whenever ``Phi U Sigma`` has full
column rank.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimMismatch, NotOrthonormal, RankDeficient, ZeroMatrix
from .model import GroundTruth, as_complex_matrix, condition_number
from .sampling import CommonOperator

DEFAULT_SUBSPACE_RANK_TOL = 1e-8
_NEG_EIG_CLAMP = 1e-12
_ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class SubspaceEstimate:
    q: np.ndarray
    eigenvalues: np.ndarray
    r_used: int
    spectrum_full: np.ndarray


@dataclass(frozen=True)
class ConditioningReport:
    kappa_R: float
    kappa_X: float
    kappa_PhiU: float
    rip_bound: Optional[float] = None

    @property
    def bound_holds(self) -> Optional[bool]:
        if self.rip_bound is None:
            return None
        return self.kappa_R <= self.rip_bound * (1 + 1e-9)


def estimate_row_subspace(
    z, rank: Optional[int] = None, rank_tol: float = DEFAULT_SUBSPACE_RANK_TOL
) -> SubspaceEstimate:
    """Estimate an orthonormal basis of the row space from ``z`` (s x N).

    Parameters
    ----------
    z : array_like
        Common measurements, one column per frame.
    rank : int, optional
        Number of eigenvectors to keep. When omitted the rank is the number
        of eigenvalues above ``rank_tol * lambda_max``.
    rank_tol : float
        Relative eigenvalue threshold for automatic rank selection.

    Returns
    -------
    SubspaceEstimate
        ``q`` holds the kept eigenvectors (N x r), eigenvalues descending.
    """
    Z = as_complex_matrix(z)
    if Z.shape[0] < 1:
        raise DimMismatch("need at least one common measurement")
    if not np.all(np.isfinite(Z)):
        raise ValueError("common measurements must be finite")
    G = Z.conj().T @ Z
    G = 0.5 * (G + G.conj().T)
    lam, vecs = np.linalg.eigh(G)
    lam, vecs = lam[::-1], vecs[:, ::-1]
    lam = np.where(lam < _NEG_EIG_CLAMP * max(lam[0], 0.0), 0.0, lam)
    lam = np.maximum(lam, 0.0)

    lam_max = lam[0]
    numerical_rank = int(np.count_nonzero(lam > rank_tol * lam_max)) if lam_max > 0 else 0
    if rank is None:
        if numerical_rank == 0:
            raise ZeroMatrix("common measurements are identically zero")
        r = numerical_rank
    else:
        if not 1 <= rank <= Z.shape[1]:
            raise ValueError(f"rank must lie in [1, {Z.shape[1]}], got {rank}")
        if rank > numerical_rank:
            warnings.warn(
                f"requested rank {rank} exceeds numerical rank {numerical_rank} of Z^H Z",
                RankDeficient,
                stacklevel=2,
            )
        r = rank
    return SubspaceEstimate(
        q=np.ascontiguousarray(vecs[:, :r]),
        eigenvalues=lam[:r].copy(),
        r_used=r,
        spectrum_full=lam,
    )


def _check_orthonormal(v: np.ndarray, name: str) -> None:
    if v.ndim != 2 or v.shape[1] == 0:
        raise NotOrthonormal(f"{name} must be a non-empty 2-D basis")
    gram = v.conj().T @ v
    if np.max(np.abs(gram - np.eye(v.shape[1]))) > _ORTHO_TOL:
        raise NotOrthonormal(f"{name} does not have orthonormal columns")


def projection_error(v1, v2) -> float:
    """Symmetric subspace distance between two orthonormal bases.

    ``(||(I - V1 V1^H) V2||_F^2 + ||(I - V2 V2^H) V1||_F^2) / (||V1||_F^2 + ||V2||_F^2)``.
    Zero for equal spans, one for orthogonal spans.
    """
    a = as_complex_matrix(v1)
    b = as_complex_matrix(v2)
    if a.shape[0] != b.shape[0]:
        raise DimMismatch(f"bases live in C^{a.shape[0]} and C^{b.shape[0]}")
    _check_orthonormal(a, "v1")
    _check_orthonormal(b, "v2")
    res_b = b - a @ (a.conj().T @ b)
    res_a = a - b @ (b.conj().T @ a)
    num = np.linalg.norm(res_b) ** 2 + np.linalg.norm(res_a) ** 2
    den = np.linalg.norm(a) ** 2 + np.linalg.norm(b) ** 2
    return float(min(max(num / den, 0.0), 1.0))


def rip_kappa_bound(delta_k: float, kappa_x: float) -> float:
    """``sqrt((1 + delta) / (1 - delta)) * kappa(X)``; ``inf`` once ``delta >= 1``."""
    if delta_k < 0:
        raise ValueError("delta_k must be non-negative")
    if delta_k >= 1:
        return float("inf")
    return float(np.sqrt((1 + delta_k) / (1 - delta_k)) * kappa_x)


def conditioning_report(
    phi: CommonOperator, gt: GroundTruth, delta_k: Optional[float] = None
) -> ConditioningReport:
    """Condition numbers of ``R = Phi U Sigma``, ``X`` and ``Phi U``."""
    U, sigma = gt.svd.U, gt.svd.sigma
    if phi.n != U.shape[0]:
        raise DimMismatch(f"Phi has {phi.n} columns, X has {U.shape[0]} rows")
    phi_u = phi.phi @ U
    R = phi_u * sigma
    kappa_x = float(sigma[0] / sigma[-1])
    bound = None if delta_k is None else rip_kappa_bound(delta_k, kappa_x)
    return ConditioningReport(
        kappa_R=condition_number(R),
        kappa_X=kappa_x,
        kappa_PhiU=condition_number(phi_u),
        rip_bound=bound,
    )
