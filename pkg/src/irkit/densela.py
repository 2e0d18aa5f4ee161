"""Dense matrix kernels under precision contexts.

GEPP LU factorization, triangular substitution, preconditioned operator
application, reduced Householder QR, a small dense nonsymmetric (and
generalized) eigensolver, norms and condition numbers.

Context handling: DOUBLE and SINGLE are native IEEE arithmetic (LAPACK and
BLAS running in that precision); HALF has no hardware support and is
simulated by rounding after every elementary operation; QUAD carries
double-double pairs through the kernel and reduces on exit.

Matrices and vectors are plain float64 ndarrays whose entries are images of
the format they are stored in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from irkit.precision import (
    Format,
    PrecisionContext,
    dd_add,
    dd_div,
    dd_matvec,
    dd_mul,
    dd_mul_double,
    dd_sub,
    round_array,
)

__all__ = [
    "LUFactors",
    "EigenPairs",
    "ExactZeroPivot",
    "RankDeficient",
    "NoConvergence",
    "SingularB",
    "Singular",
    "lu_factor",
    "lu_solve",
    "quad_solve",
    "apply_preconditioned",
    "precond_rhs",
    "qr_reduced",
    "eig_small",
    "eig_generalized",
    "inf_norm",
    "two_norm",
    "cond_inf",
    "residual",
]


class ExactZeroPivot(Exception):
    """A pivot column (or diagonal entry) is exactly zero at this precision."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"exact zero pivot at column {index}")


class RankDeficient(Exception):
    """QR detected numerical rank deficiency."""


class NoConvergence(Exception):
    """The eigenvalue iteration failed to converge."""


class SingularB(Exception):
    """The right-hand matrix of a generalized eigenproblem is singular."""


class Singular(Exception):
    """Matrix is singular to working precision."""


@dataclass
class LUFactors:
    """GEPP factors with A[perm, :] ~= L @ U.

    L is unit lower triangular with |L[i, j]| <= 1, U upper triangular; all
    entries are exactly representable in ``format``.  ``growth`` records
    max|U| / max|A| for diagnostics.
    """

    L: np.ndarray
    U: np.ndarray
    perm: np.ndarray
    format: Format
    growth: float
    _f32: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def as_float32(self) -> tuple[np.ndarray, np.ndarray]:
        """Cached float32 views of the factors for native-single kernels."""
        if self._f32 is None:
            self._f32 = (self.L.astype(np.float32), self.U.astype(np.float32))
        return self._f32


@dataclass
class EigenPairs:
    """Eigenpairs sorted by ascending |value|; conjugate pairs adjacent.

    ``vectors[:, j]`` is the unit-2-norm eigenvector for ``values[j]``.
    """

    values: np.ndarray
    vectors: np.ndarray


# ---------------------------------------------------------------------------
# LU factorization
# ---------------------------------------------------------------------------

def lu_factor(a, ctx: PrecisionContext) -> LUFactors:
    """GEPP under ``ctx``: native LAPACK for DOUBLE/SINGLE, op-by-op
    rounded elimination for HALF."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("lu_factor requires a square matrix")
    fmt = ctx.format
    a = round_array(a, fmt).copy()
    amax = float(np.max(np.abs(a))) if a.size else 0.0

    if fmt is not Format.HALF:
        work = a.astype(np.float32) if fmt is Format.SINGLE else a
        lu, piv = scipy.linalg.lu_factor(work, check_finite=False)
        n = a.shape[0]
        perm = np.arange(n)
        for i, p in enumerate(piv):
            perm[i], perm[p] = perm[p], perm[i]
        lower = (np.tril(lu, -1) + np.eye(n, dtype=lu.dtype)).astype(np.float64)
        upper = np.triu(lu).astype(np.float64)
        if np.any(np.diag(upper) == 0.0):
            raise ExactZeroPivot(int(np.argmax(np.diag(upper) == 0.0)))
        growth = float(np.max(np.abs(upper)) / amax) if amax else float("nan")
        return LUFactors(lower, upper, perm, fmt, growth)

    n = a.shape[0]
    perm = np.arange(n)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for k in range(n - 1):
            col = np.abs(a[k:, k])
            p = k + int(np.argmax(col))
            if a[p, k] == 0.0:
                raise ExactZeroPivot(k)
            if p != k:
                a[[k, p], :] = a[[p, k], :]
                perm[[k, p]] = perm[[p, k]]
            mult = round_array(a[k + 1 :, k] / a[k, k], fmt)
            a[k + 1 :, k] = mult
            prod = round_array(np.outer(mult, a[k, k + 1 :]), fmt)
            a[k + 1 :, k + 1 :] = round_array(a[k + 1 :, k + 1 :] - prod, fmt)
    if a[n - 1, n - 1] == 0.0:
        raise ExactZeroPivot(n - 1)
    lower = np.tril(a, -1) + np.eye(n)
    upper = np.triu(a)
    growth = float(np.max(np.abs(upper)) / amax) if amax else float("nan")
    return LUFactors(lower, upper, perm, fmt, growth)


# ---------------------------------------------------------------------------
# triangular substitution
# ---------------------------------------------------------------------------

def _check_diag(u: np.ndarray) -> None:
    zero = np.diag(u) == 0.0
    if np.any(zero):
        raise ExactZeroPivot(int(np.argmax(zero)))


def _sub_native(f: LUFactors, b: np.ndarray) -> np.ndarray:
    _check_diag(f.U)
    y = scipy.linalg.solve_triangular(
        f.L, b, lower=True, unit_diagonal=True, check_finite=False
    )
    return scipy.linalg.solve_triangular(f.U, y, lower=False, check_finite=False)


def _sub_f32(f: LUFactors, b: np.ndarray) -> np.ndarray:
    # native IEEE single precision substitution
    _check_diag(f.U)
    l32, u32 = f.as_float32()
    y = scipy.linalg.solve_triangular(
        l32, b.astype(np.float32), lower=True, unit_diagonal=True,
        check_finite=False,
    )
    x = scipy.linalg.solve_triangular(u32, y, lower=False, check_finite=False)
    return x.astype(np.float64)


def _sub_sim(f: LUFactors, b: np.ndarray, fmt: Format) -> np.ndarray:
    # column sweep: every multiply, subtract and divide rounds to fmt
    _check_diag(f.U)
    n = f.n
    y = b.copy()
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for i in range(n - 1):
            y[i + 1 :] = round_array(
                y[i + 1 :] - round_array(f.L[i + 1 :, i] * y[i], fmt), fmt
            )
        for i in range(n - 1, -1, -1):
            y[i] = round_array(y[i] / f.U[i, i], fmt)
            if i:
                y[:i] = round_array(
                    y[:i] - round_array(f.U[:i, i] * y[i], fmt), fmt
                )
    return y


def _sub_dd(f: LUFactors, bh: np.ndarray, bl: np.ndarray):
    _check_diag(f.U)
    n = f.n
    yh, yl = bh.copy(), bl.copy()
    for i in range(n - 1):
        th, tl = dd_mul_double(f.L[i + 1 :, i], yh[i], yl[i])
        yh[i + 1 :], yl[i + 1 :] = dd_sub(yh[i + 1 :], yl[i + 1 :], th, tl)
    for i in range(n - 1, -1, -1):
        yh[i], yl[i] = dd_div(yh[i], yl[i], f.U[i, i], 0.0)
        if i:
            th, tl = dd_mul_double(f.U[:i, i], yh[i], yl[i])
            yh[:i], yl[:i] = dd_sub(yh[:i], yl[:i], th, tl)
    return yh, yl


def lu_solve(
    f: LUFactors,
    b,
    ctx: PrecisionContext,
    store_fmt: Format | None = None,
) -> np.ndarray:
    """Forward + back substitution, every operation under ``ctx``.

    The result is rounded to ``store_fmt`` when given (the storage precision
    of the caller).
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (f.n,):
        raise ValueError("right-hand side length does not match the factors")
    fmt = ctx.format
    if fmt is Format.QUAD:
        bp = b[f.perm]
        xh, xl = _sub_dd(f, bp, np.zeros_like(bp))
        x = xh + xl
    elif fmt is Format.DOUBLE:
        x = _sub_native(f, b[f.perm])
    elif fmt is Format.SINGLE:
        x = _sub_f32(f, round_array(b, fmt)[f.perm])
    else:
        bp = round_array(b, fmt)[f.perm]
        x = _sub_sim(f, bp, fmt)
    return round_array(x, store_fmt) if store_fmt is not None else x


# ---------------------------------------------------------------------------
# preconditioned operator
# ---------------------------------------------------------------------------

def apply_preconditioned(
    a,
    f: LUFactors,
    v,
    matvec_ctx: PrecisionContext,
    store_fmt: Format,
) -> np.ndarray:
    """U^-1 L^-1 (A v) with the multiply and both solves under ``matvec_ctx``."""
    a = np.asarray(a, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if a.shape != (f.n, f.n) or v.shape != (f.n,):
        raise ValueError("dimension mismatch in apply_preconditioned")
    fmt = matvec_ctx.format
    if fmt is Format.QUAD:
        wh, wl = dd_matvec(a, v)
        wh, wl = wh[f.perm], wl[f.perm]
        xh, xl = _sub_dd(f, wh, wl)
        w = xh + xl
    elif fmt is Format.DOUBLE:
        w = _sub_native(f, (a @ v)[f.perm])
    elif fmt is Format.SINGLE:
        prod = a.astype(np.float32) @ v.astype(np.float32)
        w = _sub_f32(f, prod.astype(np.float64)[f.perm])
    else:
        acc = np.zeros(f.n)
        with np.errstate(over="ignore", invalid="ignore"):
            for j in range(f.n):
                if v[j] == 0.0:
                    continue
                acc = round_array(acc + round_array(a[:, j] * v[j], fmt), fmt)
        w = _sub_sim(f, acc[f.perm], fmt)
    return round_array(w, store_fmt)


def apply_preconditioned_extended(a, f: LUFactors, v):
    """The QUAD-context preconditioned apply as an unreduced (hi, lo) pair.

    Exposes the double-double accuracy of the operator application before
    any store rounding; used for accuracy diagnostics.
    """
    a = np.asarray(a, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    wh, wl = dd_matvec(a, v)
    return _sub_dd(f, wh[f.perm], wl[f.perm])


def precond_rhs(
    f: LUFactors,
    r,
    matvec_ctx: PrecisionContext,
    store_fmt: Format,
) -> np.ndarray:
    """U^-1 L^-1 r under ``matvec_ctx``, rounded to ``store_fmt``."""
    r = np.asarray(r, dtype=np.float64)
    fmt = matvec_ctx.format
    if fmt is Format.QUAD:
        rp = r[f.perm]
        xh, xl = _sub_dd(f, rp, np.zeros_like(rp))
        s = xh + xl
    elif fmt is Format.DOUBLE:
        s = _sub_native(f, r[f.perm])
    elif fmt is Format.SINGLE:
        s = _sub_f32(f, round_array(r, fmt)[f.perm])
    else:
        s = _sub_sim(f, round_array(r, fmt)[f.perm], fmt)
    return round_array(s, store_fmt)


# ---------------------------------------------------------------------------
# residuals in the residual precision
# ---------------------------------------------------------------------------

def residual(a, x, b, ctx: PrecisionContext) -> np.ndarray:
    """b - A x accumulated entirely in ``ctx``, reduced to the carrier."""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    fmt = ctx.format
    if fmt is Format.QUAD:
        mh, ml = dd_matvec(a, x)
        rh, rl = dd_add(b, np.zeros_like(b), -mh, -ml)
        return rh + rl
    if fmt is Format.DOUBLE:
        return b - a @ x
    if fmt is Format.SINGLE:
        r32 = b.astype(np.float32) - a.astype(np.float32) @ x.astype(np.float32)
        return r32.astype(np.float64)
    acc = round_array(b, fmt)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(a.shape[1]):
            if x[j] == 0.0:
                continue
            acc = round_array(acc - round_array(a[:, j] * x[j], fmt), fmt)
    return acc


# ---------------------------------------------------------------------------
# QR, eigensolvers, norms
# ---------------------------------------------------------------------------

def quad_solve(a, b) -> np.ndarray:
    """Solve A x = b entirely in double-double GEPP (an accuracy oracle)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape != (n,):
        raise ValueError("quad_solve requires a square system")
    ah, al = a.copy(), np.zeros_like(a)
    perm = np.arange(n)
    for k in range(n - 1):
        p = k + int(np.argmax(np.abs(ah[k:, k])))
        if ah[p, k] == 0.0 and al[p, k] == 0.0:
            raise ExactZeroPivot(k)
        if p != k:
            ah[[k, p], :] = ah[[p, k], :]
            al[[k, p], :] = al[[p, k], :]
            perm[[k, p]] = perm[[p, k]]
        mh, ml = dd_div(ah[k + 1 :, k], al[k + 1 :, k], ah[k, k], al[k, k])
        ah[k + 1 :, k], al[k + 1 :, k] = mh, ml
        ph, pl = dd_mul(
            mh[:, np.newaxis],
            ml[:, np.newaxis],
            ah[k, k + 1 :][np.newaxis, :],
            al[k, k + 1 :][np.newaxis, :],
        )
        ah[k + 1 :, k + 1 :], al[k + 1 :, k + 1 :] = dd_sub(
            ah[k + 1 :, k + 1 :], al[k + 1 :, k + 1 :], ph, pl
        )
    if ah[n - 1, n - 1] == 0.0 and al[n - 1, n - 1] == 0.0:
        raise ExactZeroPivot(n - 1)
    yh, yl = b[perm].copy(), np.zeros(n)
    for i in range(n - 1):
        th, tl = dd_mul(ah[i + 1 :, i], al[i + 1 :, i], yh[i], yl[i])
        yh[i + 1 :], yl[i + 1 :] = dd_sub(yh[i + 1 :], yl[i + 1 :], th, tl)
    for i in range(n - 1, -1, -1):
        yh[i], yl[i] = dd_div(yh[i], yl[i], ah[i, i], al[i, i])
        if i:
            th, tl = dd_mul(ah[:i, i], al[:i, i], yh[i], yl[i])
            yh[:i], yl[:i] = dd_sub(yh[:i], yl[:i], th, tl)
    return yh + yl


def qr_reduced(m) -> tuple[np.ndarray, np.ndarray]:
    """Householder QR with orthonormal Q and nonnegative diag(R).

    Raises :class:`RankDeficient` when a diagonal entry of R falls below
    n * u * ||M|| (a degenerate basis).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < m.shape[1]:
        raise ValueError("qr_reduced requires rows >= cols")
    if not np.all(np.isfinite(m)):
        raise RankDeficient("non-finite entries; degenerate basis")
    q, r = np.linalg.qr(m, mode="reduced")
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    q = q * signs[np.newaxis, :]
    r = r * signs[:, np.newaxis]
    scale = float(np.linalg.norm(r))
    tol = max(m.shape) * Format.DOUBLE.unit_roundoff * scale
    if np.any(np.abs(np.diag(r)) < tol):
        raise RankDeficient(
            f"diagonal of R below {tol:.3e}; numerically rank deficient"
        )
    return q, r


def eig_small(m) -> EigenPairs:
    """All eigenpairs of a small dense real matrix, ascending by |value|.

    Backed by the LAPACK real-Schur path (Hessenberg reduction, implicitly
    shifted QR, quasi-triangular back-substitution).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("eig_small requires a square matrix")
    if not np.all(np.isfinite(m)):
        raise NoConvergence("non-finite entries")
    try:
        values, vectors = np.linalg.eig(m)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    values = np.asarray(values, dtype=np.complex128)
    vectors = np.asarray(vectors, dtype=np.complex128)
    norms = np.linalg.norm(vectors, axis=0)
    norms[norms == 0.0] = 1.0
    vectors = vectors / norms[np.newaxis, :]
    # |conj pair| values are bit-equal, so a stable sort keeps them adjacent
    order = np.argsort(np.abs(values), kind="stable")
    return EigenPairs(values[order], vectors[:, order])


def eig_generalized(amat, bmat) -> EigenPairs:
    """Solve A z = theta B z by reduction to eig_small(B^-1 A)."""
    amat = np.asarray(amat, dtype=np.float64)
    bmat = np.asarray(bmat, dtype=np.float64)
    if amat.shape != bmat.shape or amat.shape[0] != amat.shape[1]:
        raise ValueError("eig_generalized requires square matrices of equal size")
    if not np.all(np.isfinite(amat)):
        raise NoConvergence("non-finite entries in the left matrix")
    if not np.all(np.isfinite(bmat)):
        raise SingularB("non-finite entries in the right matrix")
    try:
        cond = np.linalg.cond(bmat)
    except np.linalg.LinAlgError as exc:
        raise SingularB(str(exc)) from exc
    if not np.isfinite(cond) or cond > 1.0 / Format.DOUBLE.unit_roundoff:
        raise SingularB(f"condition estimate {cond:.3e} exceeds 1/u")
    reduced = np.linalg.solve(bmat, amat)
    return eig_small(reduced)


def inf_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        return float(np.max(np.abs(m))) if m.size else 0.0
    return float(np.max(np.sum(np.abs(m), axis=1)))


def two_norm(v) -> float:
    return float(np.linalg.norm(np.asarray(v, dtype=np.float64)))


def cond_inf(a) -> float:
    """||A||_inf * ||A^-1||_inf with the explicit inverse via double GEPP."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("cond_inf requires a square matrix")
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise Singular(str(exc)) from exc
    return inf_norm(a) * inf_norm(inv)
