"""Measurement operators: the common operator Phi and per-column operators A_i.

Each column ``x_i`` of the signal is observed as ``[z_i; y_i] = [Phi; A_i] x_i``.
Radial Fourier operators are exact nonuniform DFTs evaluated by direct
summation on an ``image_side x image_side`` grid with 0-based pixel
coordinates; pixel ``(row, col)`` sits at vector index ``row * side + col``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DimMismatch, EmptyMeasurements, InvalidDims, PartitionMismatch
from .model import as_complex_matrix

GOLDEN_ANGLE = np.pi * (np.sqrt(5.0) - 1.0) / 2.0  # 111.246 degrees
_KPOINT_DECIMALS = 9


class OperatorKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    RADIAL = "radial"
    CUSTOM = "custom"


@dataclass(frozen=True)
class CommonOperator:
    """The measurement matrix shared by every column."""

    phi: np.ndarray
    kind: OperatorKind = OperatorKind.CUSTOM
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.complex128)
        if phi.ndim != 2 or phi.shape[0] < 1:
            raise InvalidDims("Phi must be a 2-D matrix with at least one row")
        if not np.all(np.isfinite(phi)):
            raise InvalidDims("Phi entries must be finite")
        object.__setattr__(self, "phi", phi)

    @property
    def s(self) -> int:
        return self.phi.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[1]

    @property
    def kpoints(self) -> Optional[np.ndarray]:
        return self.metadata.get("kpoints")

    @property
    def image_side(self) -> Optional[int]:
        return self.metadata.get("image_side")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.phi @ x

    def adjoint(self, z: np.ndarray) -> np.ndarray:
        return self.phi.conj().T @ z


@dataclass(frozen=True)
class PerColumnOperators:
    """One operator ``A_i`` per column.

    ``cluster_map[i]`` is the cluster of column ``i`` when the operators come
    from :func:`clustered_plan`; ``clusters`` then holds the distinct
    matrices ``C_j`` and columns of one cluster share the same object.
    ``kpoints`` and ``image_side`` are set for radial Fourier operators and
    enable the FFT-based Gram products used by the solvers.
    """

    ops: list
    cluster_map: Optional[np.ndarray] = None
    clusters: Optional[list] = None
    kpoints: Optional[list] = None
    image_side: Optional[int] = None
    kind: OperatorKind = OperatorKind.CUSTOM

    def __post_init__(self):
        if len(self.ops) == 0:
            raise InvalidDims("need at least one per-column operator")
        n = self.ops[0].shape[1]
        for a in self.ops:
            if a.ndim != 2 or a.shape[1] != n:
                raise InvalidDims("all per-column operators must have n columns")
            if not np.all(np.isfinite(a)):
                raise InvalidDims("per-column operator entries must be finite")

    @property
    def N(self) -> int:
        return len(self.ops)

    @property
    def n(self) -> int:
        return self.ops[0].shape[1]

    @property
    def sizes(self) -> list[int]:
        return [a.shape[0] for a in self.ops]

    def stacked_clusters(self) -> np.ndarray:
        """``C = [C_1; ...; C_p]`` for a clustered plan."""
        if self.clusters is None:
            raise ValueError("operators were not built by clustered_plan")
        return np.vstack(self.clusters)


@dataclass(frozen=True)
class MeasurementSet:
    """Common measurements ``z`` (s x N) and per-column vectors ``y[i]``."""

    z: np.ndarray
    y: list
    snr_db: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.z.ndim != 2 or self.z.shape[1] != len(self.y):
            raise DimMismatch(
                f"z has {self.z.shape[1] if self.z.ndim == 2 else '?'} columns "
                f"but there are {len(self.y)} per-column vectors"
            )

    @property
    def N(self) -> int:
        return len(self.y)

    def stacked_y(self) -> np.ndarray:
        return np.concatenate(self.y) if self.y else np.zeros(0, np.complex128)

    def stacked(self, include_common: bool) -> np.ndarray:
        """Measurement vector in the frame-major order used by the block system."""
        if not include_common:
            return self.stacked_y()
        parts = []
        for i, yi in enumerate(self.y):
            parts.append(self.z[:, i])
            parts.append(yi)
        return np.concatenate(parts)


# -- k-space helpers ---------------------------------------------------------


def line_positions(samples_per_line: int, image_side: int) -> np.ndarray:
    """Signed radial positions ``2 pi t / image_side``, ``t`` centred on 0.

    With ``samples_per_line == image_side`` these are exactly the Cartesian
    DFT frequencies on ``[-pi, pi)``.
    """
    t = np.arange(samples_per_line) - samples_per_line // 2
    return 2.0 * np.pi * t / image_side


def radial_kpoints(
    angles: Sequence[float], samples_per_line: int, image_side: int
) -> np.ndarray:
    """Unique ``(kx, ky)`` points on lines through the origin, in line order."""
    pos = line_positions(samples_per_line, image_side)
    pts = np.concatenate(
        [np.stack([pos * np.cos(a), pos * np.sin(a)], axis=1) for a in angles]
    )
    return dedup_kpoints(pts)


def _kpoint_keys(pts: np.ndarray) -> list:
    rounded = np.round(pts, _KPOINT_DECIMALS) + 0.0  # +0.0 folds -0.0 into 0.0
    return [tuple(p) for p in rounded]


def dedup_kpoints(pts: np.ndarray, exclude: Optional[np.ndarray] = None) -> np.ndarray:
    seen = set(_kpoint_keys(exclude)) if exclude is not None and len(exclude) else set()
    keep = []
    for i, key in enumerate(_kpoint_keys(pts)):
        if key not in seen:
            seen.add(key)
            keep.append(i)
    return pts[keep]


def pixel_coordinates(image_side: int) -> tuple[np.ndarray, np.ndarray]:
    """Column (x) and row (y) coordinate of each vectorised pixel."""
    yy, xx = np.divmod(np.arange(image_side * image_side), image_side)
    return xx.astype(float), yy.astype(float)


def nudft_matrix(kpoints: np.ndarray, image_side: int) -> np.ndarray:
    """Rows ``exp(-j (kx x + ky y))`` over the pixel grid, by direct summation."""
    xx, yy = pixel_coordinates(image_side)
    phase = np.outer(kpoints[:, 0], xx) + np.outer(kpoints[:, 1], yy)
    return np.exp(-1j * phase)


def toeplitz_kernel_fft(kpoints: np.ndarray, image_side: int) -> np.ndarray:
    """FFT of the zero-padded Toeplitz kernel of ``A^H A`` for a NUDFT ``A``.

    ``(A^H A)[p, q] = K[y_p - y_q, x_p - x_q]`` with
    ``K[dy, dx] = sum_w exp(j (kx_w dx + ky_w dy))``; the kernel is computed
    exactly and embedded circularly in a ``2m x 2m`` grid so that
    ``A^H A x`` becomes a linear convolution evaluated by FFT.
    """
    m = image_side
    d = np.arange(-(m - 1), m)
    ex = np.exp(1j * np.outer(kpoints[:, 0], d))
    ey = np.exp(1j * np.outer(kpoints[:, 1], d))
    kern = ey.T @ ex  # [dy, dx]
    pad = np.zeros((2 * m, 2 * m), dtype=np.complex128)
    idx = d % (2 * m)
    pad[np.ix_(idx, idx)] = kern
    return np.fft.fft2(pad)


def toeplitz_gram_apply(kernels_fft: np.ndarray, x: np.ndarray, image_side: int) -> np.ndarray:
    """Apply per-column Gram operators to the columns of ``x`` (n x N) via FFT.

    ``kernels_fft`` is either one ``2m x 2m`` kernel shared by all columns or
    a stack ``(N, 2m, 2m)``.
    """
    m = image_side
    N = x.shape[1]
    imgs = np.zeros((N, 2 * m, 2 * m), dtype=np.complex128)
    imgs[:, :m, :m] = x.T.reshape(N, m, m)
    out = np.fft.ifft2(np.fft.fft2(imgs) * kernels_fft)[:, :m, :m]
    return out.reshape(N, m * m).T


# -- operator construction ---------------------------------------------------


def gaussian_operator(s: int, n: int, seed: int) -> CommonOperator:
    """Complex Gaussian ``s x n`` matrix with unit-variance entries."""
    if not 1 <= s <= n:
        raise InvalidDims(f"need 1 <= s <= n, got s={s}, n={n}")
    return CommonOperator(_gaussian_matrix(s, n, seed), OperatorKind.GAUSSIAN, {"seed": seed})


def radial_fourier_operator(
    num_lines: int,
    samples_per_line: int,
    image_side: int,
    angle_offset: float = 0.0,
    n: Optional[int] = None,
) -> CommonOperator:
    """Fourier samples on ``num_lines`` uniformly spaced radial lines.

    Line ``l`` has angle ``angle_offset + pi * l / num_lines``. The origin
    is shared by every line and kept once.
    """
    if image_side < 2 or num_lines < 1 or samples_per_line < 1:
        raise InvalidDims("need image_side >= 2, num_lines >= 1, samples_per_line >= 1")
    if n is not None and n != image_side**2:
        raise InvalidDims(f"image_side**2 = {image_side**2} does not match n = {n}")
    angles = angle_offset + np.pi * np.arange(num_lines) / num_lines
    pts = radial_kpoints(angles, samples_per_line, image_side)
    lines = [(float(a), line_positions(samples_per_line, image_side)) for a in angles]
    meta = {"kpoints": pts, "lines": lines, "image_side": image_side}
    return CommonOperator(nudft_matrix(pts, image_side), OperatorKind.RADIAL, meta)


def golden_angle_schedule(N: int, lines: int, offset: float = 0.0) -> np.ndarray:
    """``N x lines`` angles advancing by the golden angle line after line."""
    g = np.arange(1, N * lines + 1).reshape(N, lines)
    return np.mod(offset + g * GOLDEN_ANGLE, np.pi)


def per_column_operators(
    kind: Union[OperatorKind, str],
    N: int,
    n: int,
    s_i: Optional[int] = None,
    seed: int = 0,
    *,
    lines: Optional[int] = None,
    samples_per_line: Optional[int] = None,
    image_side: Optional[int] = None,
    angle_schedule: Union[None, np.ndarray, Callable[[int, int], np.ndarray]] = None,
    exclude: Optional[np.ndarray] = None,
) -> PerColumnOperators:
    """Independent operators for each of the ``N`` columns.

    For ``"gaussian"`` each column gets its own ``s_i x n`` complex Gaussian
    draw. For ``"radial"`` column ``i`` is sampled on ``lines`` radial lines
    whose angles come from ``angle_schedule`` (golden-angle stream by
    default); k-space points listed in ``exclude`` (typically the common
    lines) are dropped.
    """
    kind = OperatorKind(kind)
    if N < 1 or n < 1:
        raise InvalidDims("N and n must be positive")
    if kind is OperatorKind.GAUSSIAN:
        if s_i is None or s_i < 1:
            raise InvalidDims("gaussian per-column operators need s_i >= 1")
        ss = np.random.SeedSequence(seed)
        ops = [_gaussian_matrix(s_i, n, child) for child in ss.spawn(N)]
        return PerColumnOperators(ops, kind=kind)

    if kind is not OperatorKind.RADIAL:
        raise InvalidDims(f"cannot generate operators of kind {kind}")
    if image_side is None or image_side**2 != n:
        raise InvalidDims("radial operators need image_side with image_side**2 == n")
    if lines is None or lines < 1:
        raise InvalidDims("radial operators need lines >= 1")
    spl = samples_per_line or image_side
    if angle_schedule is None:
        angles = golden_angle_schedule(N, lines)
    elif callable(angle_schedule):
        angles = np.asarray(angle_schedule(N, lines))
    else:
        angles = np.asarray(angle_schedule, dtype=float)
    if angles.shape != (N, lines):
        raise InvalidDims(f"angle schedule must have shape {(N, lines)}, got {angles.shape}")

    kps, ops = [], []
    for i in range(N):
        pts = radial_kpoints(angles[i], spl, image_side)
        if exclude is not None:
            pts = dedup_kpoints(pts, exclude)
        kps.append(pts)
        ops.append(nudft_matrix(pts, image_side))
    return PerColumnOperators(ops, kpoints=kps, image_side=image_side, kind=kind)


def _gaussian_matrix(s: int, n: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((s, n)) + 1j * rng.standard_normal((s, n))) / np.sqrt(2.0)


def clustered_plan(p: int, r: int, C: Sequence[np.ndarray], N: int) -> PerColumnOperators:
    """Columns in consecutive groups of ``r`` share one matrix.

    Cluster ``j < p-1`` covers columns ``j*r .. (j+1)*r - 1``; the last
    cluster also absorbs any remaining columns up to ``N``. ``p = 1`` is the
    classical MMV setup.
    """
    if p < 1 or r < 1 or len(C) != p:
        raise PartitionMismatch(f"need p >= 1 matrices, got p={p} and {len(C)} matrices")
    if N < p * r:
        raise PartitionMismatch(f"N={N} columns cannot hold {p} clusters of {r} columns")
    mats = [np.asarray(c, dtype=np.complex128) for c in C]
    n = mats[0].shape[1]
    if any(c.ndim != 2 or c.shape[1] != n for c in mats):
        raise PartitionMismatch("cluster matrices must all have n columns")
    cluster_map = np.minimum(np.arange(N) // r, p - 1)
    ops = [mats[j] for j in cluster_map]
    return PerColumnOperators(ops, cluster_map=cluster_map, clusters=mats)


# -- measurement -------------------------------------------------------------


def measure(x, phi: Optional[CommonOperator], a: PerColumnOperators) -> MeasurementSet:
    """Noise-free measurements ``z = Phi X`` and ``y_i = A_i x_i``."""
    X = as_complex_matrix(x)
    n, N = X.shape
    if a.N != N or a.n != n:
        raise DimMismatch(f"signal is {n}x{N}, per-column operators expect {a.n}x{a.N}")
    if phi is None:
        z = np.zeros((0, N), dtype=np.complex128)
    else:
        if phi.n != n:
            raise DimMismatch(f"Phi has {phi.n} columns, signal has {n} rows")
        z = phi.phi @ X
    y = [A @ X[:, i] for i, A in enumerate(a.ops)]
    return MeasurementSet(z=z, y=y)


def measurement_power(m: MeasurementSet) -> tuple[float, int]:
    total = float(np.sum(np.abs(m.z) ** 2)) + sum(float(np.sum(np.abs(v) ** 2)) for v in m.y)
    count = m.z.size + sum(v.size for v in m.y)
    return total, count


def add_noise(m: MeasurementSet, snr_db: Optional[float], seed: int) -> MeasurementSet:
    """Add i.i.d. complex Gaussian noise at a global SNR over ``[Z; y_1..y_N]``.

    ``snr_db`` of ``None`` or ``+inf`` returns the set unchanged.
    """
    if snr_db is None or np.isposinf(snr_db):
        return m
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    total, count = measurement_power(m)
    if count == 0:
        raise EmptyMeasurements("cannot add noise to an empty measurement set")
    noise_var = (total / count) / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    scale = np.sqrt(noise_var / 2.0)

    def noisy(v):
        return v + scale * (rng.standard_normal(v.shape) + 1j * rng.standard_normal(v.shape))

    return replace(m, z=noisy(m.z), y=[noisy(v) for v in m.y], snr_db=float(snr_db), seed=seed)


def realized_snr_db(clean: MeasurementSet, noisy: MeasurementSet) -> float:
    """Empirical SNR of ``noisy`` relative to ``clean``."""
    sig, _ = measurement_power(clean)
    diff = MeasurementSet(
        z=noisy.z - clean.z, y=[b - a for a, b in zip(clean.y, noisy.y)]
    )
    err, _ = measurement_power(diff)
    return 10.0 * np.log10(sig / err)
