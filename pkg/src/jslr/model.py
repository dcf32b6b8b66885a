"""Domain types, synthetic low-rank / jointly sparse phantoms and matrix utilities.

All matrices are complex128. A signal matrix ``X`` is ``n x N``: each column
is a vectorised frame of ``n`` pixels, each row the time course of one pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Optional

import numpy as np

from .errors import InvalidSpec, ZeroMatrix

DEFAULT_RANK_TOL = 1e-10
_ABS_FLOOR = 1e-300
_COND_RANK_TOL = 1e-14
# combinations of r columns checked exhaustively before falling back to sampling
_SPARK_EXHAUSTIVE_LIMIT = 20000
_SPARK_RANDOM_SUBSETS = 64


def as_complex_matrix(m) -> np.ndarray:
    """Return ``m`` as a 2-D complex128 array (no copy when already one)."""
    if isinstance(m, MatrixSignal):
        return m.data
    a = np.asarray(m)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    return a.astype(np.complex128, copy=False)


@dataclass(frozen=True)
class MatrixSignal:
    """An ``n x N`` complex matrix (pixels x frames)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2:
            raise ValueError(f"MatrixSignal needs a 2-D array, got shape {a.shape}")
        a = a.astype(np.complex128, copy=False)
        if not np.all(np.isfinite(a)):
            raise ValueError("MatrixSignal entries must be finite")
        object.__setattr__(self, "data", a)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class SkinnySVD:
    """Rank-r factorisation ``X = U diag(sigma) V^H``."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.sigma.size

    def matrix(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.conj().T


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of a synthetic phantom.

    ``layout`` controls where the ``k`` nonzero rows sit: ``"random"`` draws
    them uniformly, ``"band"`` takes ``k`` consecutive pixels starting at the
    beginning of an image row near the centre (requires ``image_side``).
    """

    n: int
    N: int
    r: int
    k: int
    seed: int = 0
    image_side: Optional[int] = None
    snr_db: Optional[float] = None
    layout: str = "random"
    sigma_range: tuple[float, float] = (1.0, 10.0)
    check_spark: bool = True

    def validate(self) -> None:
        if min(self.n, self.N, self.r, self.k) < 1:
            raise InvalidSpec("n, N, r, k must be positive")
        if self.r > min(self.k, self.N):
            raise InvalidSpec(f"rank r={self.r} exceeds min(k={self.k}, N={self.N})")
        if self.k > self.n:
            raise InvalidSpec(f"sparsity k={self.k} exceeds n={self.n}")
        if self.image_side is not None and self.image_side**2 != self.n:
            raise InvalidSpec(f"image_side={self.image_side} does not match n={self.n}")
        if self.layout not in ("random", "band"):
            raise InvalidSpec(f"unknown layout {self.layout!r}")
        if self.layout == "band" and self.image_side is None:
            raise InvalidSpec("band layout needs image_side")
        lo, hi = self.sigma_range
        if not 0 < lo <= hi:
            raise InvalidSpec("sigma_range must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class GroundTruth:
    x: MatrixSignal
    svd: SkinnySVD
    support: np.ndarray
    r: int
    k: int
    spec: Optional[PhantomSpec] = field(default=None, compare=False)


def _support_indices(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.layout == "random":
        return np.sort(rng.choice(spec.n, size=spec.k, replace=False))
    side = spec.image_side
    rows = -(-spec.k // side)
    start_row = max(0, min(side // 2 - rows // 2, side - rows))
    start = start_row * side
    if start + spec.k > spec.n:
        start = spec.n - spec.k
    return np.arange(start, start + spec.k)


def _complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _has_full_spark(x: np.ndarray, r: int, rng: np.random.Generator) -> bool:
    """True when every r columns of ``x`` are linearly independent."""
    N = x.shape[1]
    if N <= 20 and comb(N, r) <= _SPARK_EXHAUSTIVE_LIMIT:
        from .verify import spark_bruteforce

        return spark_bruteforce(x, max_cardinality=r).spark > r
    for _ in range(_SPARK_RANDOM_SUBSETS):
        cols = rng.choice(N, size=r, replace=False)
        s = np.linalg.svd(x[:, cols], compute_uv=False)
        if s[-1] <= 1e-10 * s[0]:
            return False
    return True


def generate_phantom(spec: PhantomSpec) -> GroundTruth:
    """Draw a rank-``r``, ``k``-jointly-sparse matrix with known factors.

    ``U`` is a complex Gaussian matrix restricted to the support rows and
    orthonormalised, ``V`` an orthonormalised complex Gaussian, and the
    singular values are log-uniform in ``spec.sigma_range``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    support = _support_indices(spec, rng)

    u_s, _ = np.linalg.qr(_complex_gaussian(rng, (spec.k, spec.r)))
    U = np.zeros((spec.n, spec.r), dtype=np.complex128)
    U[support] = u_s
    V, _ = np.linalg.qr(_complex_gaussian(rng, (spec.N, spec.r)))
    lo, hi = spec.sigma_range
    sigma = np.sort(np.exp(rng.uniform(np.log(lo), np.log(hi), size=spec.r)))[::-1]
    sigma = np.ascontiguousarray(sigma)

    x = (U * sigma) @ V.conj().T
    if spec.check_spark and not _has_full_spark(x, spec.r, np.random.default_rng([spec.seed, 1])):
        raise RuntimeError(f"phantom seed {spec.seed} failed the spark(X)=r+1 check")
    return GroundTruth(
        x=MatrixSignal(x),
        svd=SkinnySVD(U=U, sigma=sigma, V=V),
        support=support,
        r=spec.r,
        k=spec.k,
        spec=spec,
    )


def skinny_svd(x, rank_tol: float = DEFAULT_RANK_TOL) -> SkinnySVD:
    """Rank-revealing thin SVD keeping singular values above ``rank_tol * sigma_1``."""
    a = as_complex_matrix(x)
    U, s, Vh = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] <= _ABS_FLOOR:
        raise ZeroMatrix("matrix has no singular value above the absolute floor")
    r = int(np.count_nonzero(s > rank_tol * s[0]))
    return SkinnySVD(U=U[:, :r], sigma=s[:r].copy(), V=Vh[:r].conj().T)


def joint_support(x, tol: float = 1e-8) -> np.ndarray:
    """Sorted indices of rows whose norm exceeds ``tol`` times the largest row norm."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    norms = np.linalg.norm(as_complex_matrix(x), axis=1)
    peak = norms.max(initial=0.0)
    if peak == 0:
        return np.zeros(0, dtype=np.intp)
    return np.flatnonzero(norms > tol * peak)


def condition_number(m) -> float:
    """Ratio of extreme singular values; ``inf`` when rank-deficient."""
    s = np.linalg.svd(as_complex_matrix(m), compute_uv=False)
    if s.size == 0 or s[0] <= _ABS_FLOOR:
        raise ZeroMatrix("condition number of a zero matrix")
    if s[-1] < _COND_RANK_TOL * s[0]:
        return float("inf")
    return float(s[0] / s[-1])
