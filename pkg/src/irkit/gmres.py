"""Restarted, left-preconditioned GMRES(m).

Used as the correction solver inside GMRES-based iterative refinement and as
the first-cycle engine of the recycling solver.  Arnoldi runs modified
Gram-Schmidt in the working format with one selective reorthogonalization
pass; the least-squares residual is tracked by Givens rotations so cycles
can stop early.  Operator applications go through the preconditioned matvec
at their own context.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from irkit.densela import LUFactors, apply_preconditioned, precond_rhs
from irkit.precision import (
    Format,
    PrecisionContext,
    mat_tvec,
    round_array,
    round_scalar,
    vaxpy,
    vdot,
    vnorm2,
    vscale,
    vsub,
)

__all__ = ["GmresConfig", "GmresOutcome", "gmres_solve", "arnoldi_cycle"]


@dataclass
class GmresConfig:
    """Restart length, tolerance and precision policy of one GMRES solve."""

    m: int
    tau: float
    matvec_ctx: PrecisionContext
    work_fmt: Format
    max_cycles: int | None = None  # None -> ceil(10 n / m)
    reorthogonalize: bool = True
    # "recurrence" carries the basis-coordinate residual across restarts
    # (keeps making progress below the storage-precision residual floor);
    # "explicit" recomputes s - A~ x, the textbook restarted-GMRES choice.
    restart_residual: str = "recurrence"

    def resolved_max_cycles(self, n: int) -> int:
        if self.max_cycles is not None:
            return self.max_cycles
        return max(1, math.ceil(10 * n / self.m))

    def validate(self, n: int) -> None:
        if not (1 <= self.m <= n):
            raise ValueError(f"restart length m={self.m} must satisfy 1 <= m <= n={n}")
        if not self.tau > 0:
            raise ValueError("tolerance tau must be positive")
        if self.resolved_max_cycles(n) < 1:
            raise ValueError("max_cycles must be >= 1")


@dataclass
class GmresOutcome:
    """Result of one (restarted) Krylov solve."""

    solution: np.ndarray
    iterations_per_cycle: list[int]
    converged: bool
    final_relres: float
    basis: tuple[np.ndarray, np.ndarray] | None
    stagnated: bool = False
    happy_breakdown: bool = False
    operator_applies: int = 0
    cycle_diagnostics: list | None = None

    @property
    def total_iterations(self) -> int:
        return sum(self.iterations_per_cycle)


@dataclass
class ArnoldiCycle:
    """One restart cycle: basis, Hessenberg column data and LS solution."""

    V: np.ndarray  # n x (steps + 1)
    H: np.ndarray  # (steps + 1) x steps
    B: np.ndarray | None  # deflation coefficients, k x steps
    steps: int
    y: np.ndarray
    estimate: float
    estimates: list[float] = field(default_factory=list)
    converged: bool = False
    breakdown: bool = False


def _rot_new(a: float, b: float, fmt: Format) -> tuple[float, float]:
    h = math.hypot(a, b)
    if h == 0.0:
        return 1.0, 0.0
    return round_scalar(a / h, fmt), round_scalar(b / h, fmt)


def _rot_apply(c: float, s: float, a: float, b: float, fmt: Format):
    # [c s; -s c] @ [a; b], each multiply and add rounded separately
    t1 = round_scalar(
        round_scalar(c * a, fmt) + round_scalar(s * b, fmt), fmt
    )
    t2 = round_scalar(
        round_scalar(c * b, fmt) - round_scalar(s * a, fmt), fmt
    )
    return t1, t2


def _solve_upper(r: np.ndarray, g: np.ndarray) -> np.ndarray:
    if np.any(np.diag(r) == 0.0):
        return np.linalg.lstsq(r, g, rcond=None)[0]
    return scipy.linalg.solve_triangular(r, g, lower=False, check_finite=False)


@np.errstate(invalid="ignore", over="ignore", divide="ignore")
def arnoldi_cycle(
    apply_op,
    r0: np.ndarray,
    beta: float,
    m: int,
    tol_abs: float,
    fmt: Format,
    reorthogonalize: bool = True,
    deflate_c: np.ndarray | None = None,
) -> ArnoldiCycle:
    """One Arnoldi restart cycle with Givens residual tracking.

    With ``deflate_c`` the operator is projected as (I - C C^T) A v and the
    C^T A v coefficients are recorded, which is the deflated process used by
    the recycling solver.  A zero subdiagonal entry is a happy breakdown and
    counts as convergence.
    """
    n = r0.shape[0]
    k = 0 if deflate_c is None else deflate_c.shape[1]
    v = np.zeros((n, m + 1))
    h = np.zeros((m + 1, m))
    r = np.zeros((m + 1, m))  # rotated columns of h
    b = np.zeros((k, m)) if k else None
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    v[:, 0] = vscale(1.0 / beta, r0, fmt)
    sqrt_u = math.sqrt(fmt.unit_roundoff)

    steps = 0
    converged = False
    breakdown = False
    estimates: list[float] = []

    for j in range(m):
        w = apply_op(v[:, j])
        if k:
            coeffs = mat_tvec(deflate_c, w, fmt)
            for i in range(k):
                w = vaxpy(-coeffs[i], deflate_c[:, i], w, fmt)
            b[:, j] = coeffs
        wnorm0 = vnorm2(w, fmt)
        col = np.zeros(j + 2)
        for i in range(j + 1):
            hij = vdot(v[:, i], w, fmt)
            w = vaxpy(-hij, v[:, i], w, fmt)
            col[i] = hij
        hlast = vnorm2(w, fmt)
        if reorthogonalize and hlast < sqrt_u * wnorm0:
            for i in range(j + 1):
                c2 = vdot(v[:, i], w, fmt)
                w = vaxpy(-c2, v[:, i], w, fmt)
                col[i] = round_scalar(col[i] + c2, fmt)
            hlast = vnorm2(w, fmt)
        col[j + 1] = hlast
        h[: j + 2, j] = col

        rot = col.copy()
        for i in range(j):
            rot[i], rot[i + 1] = _rot_apply(cs[i], sn[i], rot[i], rot[i + 1], fmt)
        cs[j], sn[j] = _rot_new(rot[j], rot[j + 1], fmt)
        rot[j], _ = _rot_apply(cs[j], sn[j], rot[j], rot[j + 1], fmt)
        rot[j + 1] = 0.0
        r[: j + 2, j] = rot
        g[j], g[j + 1] = _rot_apply(cs[j], sn[j], g[j], 0.0, fmt)
        estimate = abs(g[j + 1])
        estimates.append(estimate)
        steps = j + 1

        if hlast == 0.0:
            breakdown = True
            converged = True
            break
        v[:, j + 1] = vscale(1.0 / hlast, w, fmt)
        if estimate <= tol_abs:
            converged = True
            break

    y = _solve_upper(r[:steps, :steps], g[:steps])
    y = round_array(y, fmt)
    return ArnoldiCycle(
        V=v[:, : steps + 1],
        H=h[: steps + 1, :steps],
        B=b[:, :steps] if b is not None else None,
        steps=steps,
        y=y,
        estimate=estimates[-1] if estimates else 0.0,
        estimates=estimates,
        converged=converged,
        breakdown=breakdown,
    )


def _recurrence_residual(cyc: ArnoldiCycle, beta: float, fmt: Format) -> np.ndarray:
    """res = V (beta e1 - Hbar y), the restart residual in basis coordinates.

    Keeping the recurrence across restarts (instead of recomputing the true
    residual) lets the solve continue past the storage-precision residual
    floor, matching the estimate-driven convergence test.
    """
    j = cyc.steps
    t = -cyc.H[: j + 1, :j] @ cyc.y
    t[0] += beta
    t = round_array(t, fmt)
    res = np.zeros(cyc.V.shape[0])
    for i in range(j + 1):
        res = vaxpy(t[i], cyc.V[:, i], res, fmt)
    return res


@np.errstate(invalid="ignore", over="ignore", divide="ignore")
def gmres_solve(
    a,
    f: LUFactors,
    r,
    cfg: GmresConfig,
    x0: np.ndarray | None = None,
) -> GmresOutcome:
    """Solve U^-1 L^-1 A d = U^-1 L^-1 r by restarted GMRES(m).

    The convergence test is the Givens estimate of the preconditioned
    residual relative to the preconditioned right-hand side.  Exhausting the
    cycle budget marks the outcome as stagnated (a divergence signal for the
    refinement driver, not an exception).
    """
    a = np.asarray(a, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    n = f.n
    cfg.validate(n)
    fmt = cfg.work_fmt
    applies = 0

    def apply_op(vec):
        nonlocal applies
        applies += 1
        return apply_preconditioned(a, f, vec, cfg.matvec_ctx, fmt)

    s = precond_rhs(f, r, cfg.matvec_ctx, fmt)
    snorm = vnorm2(s, fmt)
    x = np.zeros(n) if x0 is None else round_array(x0, fmt).copy()
    if snorm == 0.0:
        return GmresOutcome(x, [], True, 0.0, None, operator_applies=0)
    tol_abs = cfg.tau * snorm

    res = s.copy() if x0 is None else vsub(s, apply_op(x), fmt)
    iterations: list[int] = []
    converged = False
    breakdown = False
    last_cycle: ArnoldiCycle | None = None

    for _ in range(cfg.resolved_max_cycles(n)):
        beta = vnorm2(res, fmt)
        if beta <= tol_abs:
            converged = True
            break
        cyc = arnoldi_cycle(
            apply_op, res, beta, cfg.m, tol_abs, fmt, cfg.reorthogonalize
        )
        last_cycle = cyc
        iterations.append(cyc.steps)
        for jj in range(cyc.steps):
            x = vaxpy(cyc.y[jj], cyc.V[:, jj], x, fmt)
        if cyc.converged:
            converged = True
            res = _recurrence_residual(cyc, beta, fmt)
            breakdown = breakdown or cyc.breakdown
            break
        if cfg.restart_residual == "recurrence":
            res = _recurrence_residual(cyc, beta, fmt)
        else:
            res = vsub(s, apply_op(x), fmt)
        breakdown = breakdown or cyc.breakdown

    final_relres = vnorm2(res, fmt) / snorm
    basis = None
    if last_cycle is not None:
        basis = (last_cycle.V, last_cycle.H)
    return GmresOutcome(
        solution=x,
        iterations_per_cycle=iterations,
        converged=converged,
        final_relres=final_relres,
        basis=basis,
        stagnated=not converged,
        happy_breakdown=breakdown,
        operator_applies=applies,
    )
