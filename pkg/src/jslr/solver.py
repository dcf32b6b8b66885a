"""Subspace-aware recovery of the coefficient matrix ``P`` in ``X = P Q^H``.

With the row basis ``Q`` (N x r) fixed, the measurements of column ``i``
are ``y_i = A_i P conj(q_i)`` where ``q_i`` is row ``i`` of ``Q``; stacking
all columns gives the linear system ``y = B vec(P)`` with ``vec(P)`` the
column-major vectorisation ``[p_1; ...; p_r]``.

Three estimators are provided:

* :func:`solve_least_squares` -- CG on the normal equations (minimum-norm
  solution from a zero start).
* :func:`solve_tv` -- ``1/2 ||B vec(P) - y||^2 + lam ||T P||_1`` with
  entrywise shrinkage.
* :func:`solve_joint_sparse_tv` -- same data term with the mixed
  ``l1-l2`` norm over rows of ``T P`` (one group per gradient position,
  spanning the ``r`` coefficient columns).

``T`` is a forward finite difference (2-D when ``image_side`` is given).
The regularised problems are solved by scaled-form ADMM on the splitting
``D = T P`` after normalising ``y`` to unit norm and ``B`` to unit spectral
norm, so ``lam`` is dimensionless.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import DimMismatch, InvalidImageSide, InvalidParams, NotConverged, TooLarge
from .sampling import CommonOperator, PerColumnOperators, toeplitz_kernel_fft
from .subspace import SubspaceEstimate

DENSE_LIMIT = 10**7
_BALANCE_MU = 10.0
_BALANCE_TAU = 2.0


def vec(p: np.ndarray) -> np.ndarray:
    return p.reshape(-1, order="F")


def unvec(v: np.ndarray, n: int, r: int) -> np.ndarray:
    return v.reshape(n, r, order="F")


class BlockSystem:
    """Linear map ``vec(P) -> [D_1 P conj(q_1); ...; D_N P conj(q_N)]``.

    ``D_i`` is ``A_i``, or ``[Phi; A_i]`` when a common operator is passed
    (so the common samples also constrain ``P``). The dense matrix is only
    built on request and only below ``dense_limit`` entries.
    """

    def __init__(
        self,
        q: Union[np.ndarray, SubspaceEstimate],
        a: PerColumnOperators,
        phi: Optional[CommonOperator] = None,
        dense_limit: int = DENSE_LIMIT,
    ):
        Q = q.q if isinstance(q, SubspaceEstimate) else np.asarray(q, dtype=np.complex128)
        if Q.ndim != 2 or Q.shape[1] < 1:
            raise DimMismatch("subspace basis must be N x r with r >= 1")
        if Q.shape[0] != a.N:
            raise DimMismatch(f"basis has {Q.shape[0]} rows but there are {a.N} operators")
        if phi is not None and phi.n != a.n:
            raise DimMismatch("Phi and A_i act on different signal lengths")
        self.q = Q
        self.a = a
        self.phi = phi
        self.n, self.r = a.n, Q.shape[1]
        self.N = a.N
        s_common = phi.s if phi is not None else 0
        self.s_common = s_common
        self.sizes = [s_common + s for s in a.sizes]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.m = int(self.offsets[-1])
        self.dense_limit = dense_limit
        self._dense = None
        self._opnorm = None
        self._setup_gram()

    # -- Gram (B^H B) machinery --------------------------------------------

    def _setup_gram(self):
        a, phi, Q = self.a, self.phi, self.q
        side = a.image_side
        self._pair_kernels = None
        self._phi_gram = None
        if a.kpoints is not None and side is not None:
            kern = np.stack([toeplitz_kernel_fft(k, side) for k in a.kpoints])
            if phi is not None and phi.kpoints is not None and phi.image_side == side:
                kern += toeplitz_kernel_fft(phi.kpoints, side)[None]
            elif phi is not None:
                self._phi_gram = phi.phi.conj().T @ phi.phi
            # B^H B acts on P through r x r cross kernels
            # K_jl = sum_i Q[i, j] conj(Q[i, l]) K_i, so out_j = sum_l K_jl * p_l
            self._pair_kernels = np.einsum("ij,il,ixy->jlxy", Q, Q.conj(), kern, optimize=True)
        elif phi is not None:
            self._phi_gram = phi.phi.conj().T @ phi.phi

    def normal_apply(self, v: np.ndarray) -> np.ndarray:
        """``B^H B v`` without forming ``B``."""
        P = unvec(v, self.n, self.r)
        if self._pair_kernels is not None:
            m = self.a.image_side
            imgs = np.zeros((self.r, 2 * m, 2 * m), dtype=np.complex128)
            imgs[:, :m, :m] = P.T.reshape(self.r, m, m)
            spec = np.einsum("jlxy,lxy->jxy", self._pair_kernels, np.fft.fft2(imgs))
            out = np.fft.ifft2(spec)[:, :m, :m].reshape(self.r, self.n).T
        else:
            X = P @ self.q.conj().T
            W = np.empty_like(X)
            for i, A in enumerate(self.a.ops):
                W[:, i] = A.conj().T @ (A @ X[:, i])
            out = W @ self.q
        if self._phi_gram is not None:
            out = out + self._phi_gram @ (P @ (self.q.conj().T @ self.q))
        return vec(out)

    def circulant_blocks(self) -> Optional[np.ndarray]:
        """Per-frequency ``r x r`` blocks of the optimal circulant approximation.

        Level-2 T. Chan approximation of the block-Toeplitz Gram (Phi part
        excluded when it is not radial); shape ``(m, m, r, r)`` on the
        ``image_side`` grid, or ``None`` without Toeplitz structure.
        """
        if self._pair_kernels is None:
            return None
        m = self.a.image_side
        ks = np.fft.ifft2(self._pair_kernels)
        a = np.arange(m)
        idx = (a % (2 * m), (a - m) % (2 * m))
        wts = ((m - a) / m, a / m)
        c = np.zeros((self.r, self.r, m, m), dtype=np.complex128)
        for iy, wy in zip(idx, wts):
            for ix, wx in zip(idx, wts):
                c += ks[:, :, iy[:, None], ix[None, :]] * (wy[:, None] * wx[None, :])
        return np.moveaxis(np.fft.fft2(c), (0, 1), (2, 3))

    # -- forward / adjoint -------------------------------------------------

    def apply(self, v: np.ndarray) -> np.ndarray:
        P = unvec(v, self.n, self.r)
        X = P @ self.q.conj().T
        out = np.empty(self.m, dtype=np.complex128)
        Z = self.phi.apply(X) if self.phi is not None else None
        for i, A in enumerate(self.a.ops):
            o = self.offsets[i]
            if Z is not None:
                out[o : o + self.s_common] = Z[:, i]
                o += self.s_common
            out[o : self.offsets[i + 1]] = A @ X[:, i]
        return out

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.complex128)
        if y.shape != (self.m,):
            raise DimMismatch(f"expected {self.m} measurements, got {y.shape}")
        W = np.empty((self.n, self.N), dtype=np.complex128)
        if self.phi is not None:
            Z = np.stack([y[self.offsets[i] : self.offsets[i] + self.s_common] for i in range(self.N)], 1)
            W[:] = self.phi.adjoint(Z)
        else:
            W[:] = 0
        for i, A in enumerate(self.a.ops):
            o = self.offsets[i] + self.s_common
            W[:, i] += A.conj().T @ y[o : self.offsets[i + 1]]
        return vec(W @ self.q)

    @property
    def dense(self) -> Optional[np.ndarray]:
        """Explicit ``B`` (``m x n r``) or ``None`` above the size limit."""
        if self._dense is None and self.m * self.n * self.r <= self.dense_limit:
            blocks = []
            for i, A in enumerate(self.a.ops):
                D = A if self.phi is None else np.vstack([self.phi.phi, A])
                blocks.append(np.kron(self.q[i].conj()[None, :], D))
            self._dense = np.vstack(blocks)
        return self._dense

    def require_dense(self) -> np.ndarray:
        B = self.dense
        if B is None:
            raise TooLarge(f"dense B would have {self.m * self.n * self.r} entries")
        return B

    def op_norm(self, iters: int = 50, seed: int = 0) -> float:
        """Spectral norm of ``B`` by power iteration on ``B^H B``."""
        if self._opnorm is None:
            rng = np.random.default_rng(seed)
            v = rng.standard_normal(self.n * self.r) + 1j * rng.standard_normal(self.n * self.r)
            v /= np.linalg.norm(v)
            lam = 0.0
            for _ in range(iters):
                w = self.normal_apply(v)
                lam = np.linalg.norm(w)
                if lam == 0:
                    break
                v = w / lam
            self._opnorm = float(np.sqrt(lam))
        return self._opnorm


def build_block_system(
    q: Union[np.ndarray, SubspaceEstimate],
    a: PerColumnOperators,
    phi: Optional[CommonOperator] = None,
) -> BlockSystem:
    return BlockSystem(q, a, phi)


# -- finite differences and proximal maps -----------------------------------


def _fwd_diff(x: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(x)
    src = [slice(None)] * x.ndim
    dst = [slice(None)] * x.ndim
    src[axis], dst[axis] = slice(1, None), slice(None, -1)
    out[tuple(dst)] = x[tuple(src)] - x[tuple(dst)]
    return out


def _fwd_diff_adjoint(d: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(d)
    head = [slice(None)] * d.ndim
    tail = [slice(None)] * d.ndim
    head[axis], tail[axis] = slice(None, -1), slice(1, None)
    out[tuple(head)] -= d[tuple(head)]
    out[tuple(tail)] += d[tuple(head)]
    return out


class FiniteDifference:
    """Forward differences with a zero last difference (Neumann boundary).

    With ``image_side`` the columns are treated as images and the output
    stacks horizontal then vertical differences (``2n x r``); otherwise a
    1-D difference along the pixel index is used (``n x r``).
    """

    def __init__(self, n: int, image_side: Optional[int] = None):
        if image_side is not None and image_side**2 != n:
            raise InvalidImageSide(f"image_side={image_side} does not match n={n}")
        self.n = n
        self.image_side = image_side

    @property
    def out_rows(self) -> int:
        return self.n if self.image_side is None else 2 * self.n

    def apply(self, P: np.ndarray) -> np.ndarray:
        if self.image_side is None:
            return _fwd_diff(P, 0)
        m, r = self.image_side, P.shape[1]
        img = P.reshape(m, m, r)
        return np.concatenate([_fwd_diff(img, 1).reshape(self.n, r), _fwd_diff(img, 0).reshape(self.n, r)])

    def adjoint(self, D: np.ndarray) -> np.ndarray:
        if self.image_side is None:
            return _fwd_diff_adjoint(D, 0)
        m, r = self.image_side, D.shape[1]
        dx = D[: self.n].reshape(m, m, r)
        dy = D[self.n :].reshape(m, m, r)
        return (_fwd_diff_adjoint(dx, 1) + _fwd_diff_adjoint(dy, 0)).reshape(self.n, r)

    def gram(self, P: np.ndarray) -> np.ndarray:
        return self.adjoint(self.apply(P))


def _shrink_factor(mag: np.ndarray, tau: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        f = 1.0 - tau / mag
    return np.where(mag > tau, f, 0.0)


def group_soft_threshold(D: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise prox of ``tau * sum_g ||D[g, :]||_2``."""
    mag = np.sqrt(np.sum(D.real**2 + D.imag**2, axis=1))
    return D * _shrink_factor(mag, tau)[:, None]


def soft_threshold(D: np.ndarray, tau: float) -> np.ndarray:
    """Entrywise complex soft threshold (magnitude shrinkage, phase kept)."""
    mag = np.sqrt(D.real**2 + D.imag**2)
    return D * _shrink_factor(mag, tau)


# -- solvers -----------------------------------------------------------------


@dataclass(frozen=True)
class AdmmParams:
    lam: float = 1e-3
    rho: float = 1.0
    max_iters: int = 500
    primal_tol: float = 1e-6
    dual_tol: float = 1e-6
    over_relaxation: float = 1.0
    cg_iters: int = 50
    cg_tol: float = 1e-8
    adaptive_rho: bool = True
    lam_start: Optional[float] = None
    continuation_iters: int = 0

    def __post_init__(self):
        if self.lam < 0 or not np.isfinite(self.lam):
            raise InvalidParams("lam must be finite and non-negative")
        if self.rho <= 0 or self.max_iters < 1 or self.cg_iters < 1:
            raise InvalidParams("rho, max_iters and cg_iters must be positive")
        for name in ("primal_tol", "dual_tol", "cg_tol"):
            t = getattr(self, name)
            if not 0 < t < 1:
                raise InvalidParams(f"{name} must lie in (0, 1)")
        if not 1.0 <= self.over_relaxation <= 1.8:
            raise InvalidParams("over_relaxation must lie in [1, 1.8]")
        if self.lam_start is not None and not (self.lam_start > 0 and np.isfinite(self.lam_start)):
            raise InvalidParams("lam_start must be positive and finite")
        if self.continuation_iters < 0:
            raise InvalidParams("continuation_iters must be non-negative")

    def lam_at(self, it: int) -> float:
        """Regularisation weight used at (0-based) iteration ``it``.

        With ``lam_start > lam`` the weight decays geometrically from
        ``lam_start`` to ``lam`` over ``continuation_iters`` iterations.
        """
        if self.lam_start is None or self.lam_start <= self.lam or self.continuation_iters == 0:
            return self.lam
        if it >= self.continuation_iters:
            return self.lam
        decay = (self.lam / self.lam_start) ** (it / self.continuation_iters)
        return max(self.lam, self.lam_start * decay)


@dataclass
class RecoveryResult:
    p: np.ndarray
    x_hat: np.ndarray
    iterations: int
    residual_history: list
    converged: bool
    dual_history: list = field(default_factory=list)


def conjugate_gradient(
    apply: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iters: int = 50,
    precond: Optional[Callable[[np.ndarray], np.ndarray]] = None,
):
    """(Preconditioned) CG for a Hermitian positive semi-definite operator.

    Returns ``(x, iterations, history)`` where ``history`` holds the relative
    residual ``||b - A x|| / ||b||`` after every iteration (entry 0 is the
    starting residual).
    """
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0, [0.0]
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply(x) if x0 is not None else b.copy()
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = np.vdot(r, z).real
    history = [np.linalg.norm(r) / bnorm]
    it = 0
    while it < max_iters and history[-1] > tol:
        Ap = apply(p)
        pAp = np.vdot(p, Ap).real
        if pAp <= 0 or rz <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = precond(r) if precond is not None else r
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        history.append(np.linalg.norm(r) / bnorm)
    return x, it, history


def _laplacian_symbol(m: int) -> np.ndarray:
    w = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(m) / m)
    return w[:, None] + w[None, :]


class _CirculantPreconditioner:
    """Inverse of ``C / scale^2 + rho * L`` applied frequency by frequency."""

    def __init__(self, blocks: np.ndarray, scale: float, m: int, r: int):
        self.blocks = blocks / scale**2
        self.lap = _laplacian_symbol(m)
        self.m, self.r = m, r
        self.rho = None
        self.inv = None

    def update(self, rho: float) -> None:
        if rho != self.rho:
            eye = np.eye(self.r)
            mat = self.blocks + rho * self.lap[:, :, None, None] * eye
            # small ridge keeps the DC block invertible when B misses the mean
            mat = mat + 1e-12 * np.abs(mat).max() * eye
            self.inv = np.linalg.inv(mat)
            self.rho = rho

    def __call__(self, v: np.ndarray) -> np.ndarray:
        m, r = self.m, self.r
        imgs = np.fft.fft2(v.reshape(m * m, r, order="F").T.reshape(r, m, m), axes=(1, 2))
        sol = np.einsum("xyjl,lxy->jxy", self.inv, imgs)
        out = np.fft.ifft2(sol, axes=(1, 2))
        return out.reshape(r, m * m).T.reshape(-1, order="F")


def reconstruct(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``X_hat = P Q^H``."""
    p = np.asarray(p)
    q = q.q if isinstance(q, SubspaceEstimate) else np.asarray(q)
    if p.shape[1] != q.shape[1]:
        raise DimMismatch(f"P has {p.shape[1]} columns, Q has {q.shape[1]}")
    return p @ q.conj().T


def recovery_error(x_hat, x_true) -> float:
    """Normalised Frobenius error ``||X_hat - X|| / ||X||``."""
    a = np.asarray(getattr(x_hat, "data", x_hat))
    b = np.asarray(getattr(x_true, "data", x_true))
    if a.shape != b.shape:
        raise DimMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def solve_least_squares(
    sys: BlockSystem,
    y: np.ndarray,
    tol: float = 1e-10,
    max_iters: int = 1000,
    support: Optional[np.ndarray] = None,
) -> RecoveryResult:
    """Least squares through CG on ``B^H B vec(P) = B^H y``.

    Starting from zero, CG stays in the range of ``B^H`` and converges to the
    minimum-norm solution. With ``support`` the rows of ``P`` outside the
    index set are held at zero.
    """
    n, r = sys.n, sys.r
    rhs = sys.adjoint_apply(y)
    if support is None:
        op = sys.normal_apply
    else:
        mask = np.zeros((n, r), dtype=bool)
        mask[np.asarray(support, dtype=np.intp)] = True
        mvec = vec(mask)
        rhs = np.where(mvec, rhs, 0)

        def op(v):
            return np.where(mvec, sys.normal_apply(np.where(mvec, v, 0)), 0)

    v, it, hist = conjugate_gradient(op, rhs, tol=tol, max_iters=max_iters)
    bnorm = np.linalg.norm(rhs)
    final = np.linalg.norm(rhs - op(v)) / bnorm if bnorm > 0 else 0.0
    converged = bool(final <= tol)
    if not converged:
        warnings.warn(
            f"least squares stopped after {it} iterations at relative residual {final:.2e}",
            NotConverged,
            stacklevel=2,
        )
    P = unvec(v, n, r).copy()
    return RecoveryResult(
        p=P, x_hat=reconstruct(P, sys.q), iterations=it, residual_history=hist, converged=converged
    )


def _admm(
    sys: BlockSystem,
    y: np.ndarray,
    params: AdmmParams,
    image_side: Optional[int],
    prox: Callable[[np.ndarray, float], np.ndarray],
) -> RecoveryResult:
    n, r = sys.n, sys.r
    T = FiniteDifference(n, image_side)
    ynorm = np.linalg.norm(y)
    if ynorm == 0:
        P = np.zeros((n, r), dtype=np.complex128)
        return RecoveryResult(P, reconstruct(P, sys.q), 0, [0.0], True)
    bscale = sys.op_norm()
    rho, lam, alpha = params.rho, params.lam, params.over_relaxation
    bty = unvec(sys.adjoint_apply(y / ynorm), n, r) / bscale

    def lhs(v, rho_t):
        return sys.normal_apply(v) / bscale**2 + rho_t * vec(T.gram(unvec(v, n, r)))

    precond = None
    blocks = sys.circulant_blocks() if image_side is not None else None
    if blocks is not None:
        precond = _CirculantPreconditioner(blocks, bscale, image_side, r)

    P = np.zeros((n, r), dtype=np.complex128)
    D = np.zeros((T.out_rows, r), dtype=np.complex128)
    U = np.zeros_like(D)
    primal, dual = [], []
    converged = False
    it = 0
    # rho follows lam during continuation so the shrink threshold lam/rho is
    # fixed; residual balancing multiplies on top of that schedule
    balance = 1.0
    for it in range(1, params.max_iters + 1):
        lam_t = params.lam_at(it - 1)
        rho_t = rho * balance * lam_t / lam
        if it > 1 and rho_t != rho_prev:
            U *= rho_prev / rho_t
        rho_prev = rho_t
        rhs = bty + rho_t * T.adjoint(D - U)
        if precond is not None:
            precond.update(rho_t)
        v, _, _ = conjugate_gradient(
            lambda x: lhs(x, rho_t), vec(rhs), x0=vec(P), tol=params.cg_tol,
            max_iters=params.cg_iters, precond=precond,
        )
        P = unvec(v, n, r)
        TP = T.apply(P)
        TPh = alpha * TP + (1 - alpha) * D
        D_old = D
        D = prox(TPh + U, lam_t / rho_t)
        U = U + TPh - D
        r_norm = np.linalg.norm(TP - D)
        s_norm = rho_t * np.linalg.norm(T.adjoint(D - D_old))
        primal.append(float(r_norm))
        dual.append(float(s_norm))
        if lam_t == lam:
            eps_pri = params.primal_tol * max(np.linalg.norm(TP), np.linalg.norm(D), 1e-300)
            eps_dual = params.dual_tol * max(rho_t * np.linalg.norm(T.adjoint(U)), 1e-300)
            if r_norm <= eps_pri and s_norm <= eps_dual:
                converged = True
                break
        if params.adaptive_rho:
            # residual balancing; rescaling of U happens at the top of the loop
            if r_norm > _BALANCE_MU * s_norm:
                balance *= _BALANCE_TAU
            elif s_norm > _BALANCE_MU * r_norm:
                balance /= _BALANCE_TAU
    if not converged:
        warnings.warn(f"ADMM hit max_iters={params.max_iters}", NotConverged, stacklevel=3)
    P = P * (ynorm / bscale)
    return RecoveryResult(
        p=P,
        x_hat=reconstruct(P, sys.q),
        iterations=it,
        residual_history=primal,
        converged=converged,
        dual_history=dual,
    )


def _check_image_side(sys: BlockSystem, image_side: Optional[int]) -> None:
    if image_side is not None and image_side**2 != sys.n:
        raise InvalidImageSide(f"image_side={image_side} does not match n={sys.n}")


def solve_joint_sparse_tv(
    sys: BlockSystem, y: np.ndarray, params: AdmmParams, image_side: Optional[int] = None
) -> RecoveryResult:
    """Mixed ``l1-l2`` finite-difference regularised recovery.

    Each row of ``T P`` (one gradient position across all ``r`` coefficient
    columns) is shrunk as a group. ``lam = 0`` reduces to least squares.
    """
    _check_image_side(sys, image_side)
    if params.lam == 0:
        return solve_least_squares(sys, y)
    return _admm(sys, y, params, image_side, group_soft_threshold)


def solve_tv(
    sys: BlockSystem, y: np.ndarray, params: AdmmParams, image_side: Optional[int] = None
) -> RecoveryResult:
    """Anisotropic TV on each coefficient column (entrywise ``l1`` shrinkage)."""
    _check_image_side(sys, image_side)
    if params.lam == 0:
        return solve_least_squares(sys, y)
    return _admm(sys, y, params, image_side, soft_threshold)
