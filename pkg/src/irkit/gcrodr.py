"""GCRO-DR(m, k): deflated, recycling GMRES.

The solver keeps a recycle triple (Y_k, U_k, C_k) with A~ U_k = C_k and
C_k^T C_k = I across invocations sharing the preconditioned operator A~.
An invocation with a recycle space starts by re-orthogonalizing it (reduced
QR of A~ Y_k) and projecting the residual onto the complement of range(C_k);
a cold invocation runs one plain GMRES(m) cycle and harvests harmonic Ritz
vectors for the smallest-magnitude values.  Every later cycle performs
m - k deflated Arnoldi steps with (I - C_k C_k^T) A~, solves the small
block least-squares problem, and rebuilds the recycle space from the
generalized harmonic Ritz problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from irkit.densela import (
    EigenPairs,
    LUFactors,
    NoConvergence,
    RankDeficient,
    SingularB,
    apply_preconditioned,
    eig_generalized,
    eig_small,
    precond_rhs,
    qr_reduced,
    two_norm,
)
from irkit.gmres import (
    ArnoldiCycle,
    GmresOutcome,
    _recurrence_residual,
    arnoldi_cycle,
)
from irkit.precision import (
    Format,
    PrecisionContext,
    mat_tvec,
    round_array,
    vaxpy,
    vnorm2,
    vsub,
)

__all__ = [
    "GcrodrConfig",
    "RecycleSpace",
    "gcrodr_solve",
    "harmonic_ritz_first",
    "harmonic_ritz_recycle",
]


@dataclass
class RecycleSpace:
    """(Y_k, U_k, C_k) carried between solves sharing the operator."""

    Yk: np.ndarray
    Uk: np.ndarray
    Ck: np.ndarray
    k_eff: int


@dataclass
class GcrodrConfig:
    """Subspace size m, recycle dimension k and precision policy."""

    m: int
    k: int
    tau: float
    matvec_ctx: PrecisionContext
    work_fmt: Format
    max_cycles: int | None = None
    reorthogonalize: bool = True
    collect_diagnostics: bool = False
    # residual carried between cycles: the algorithm's own recurrence
    # (r <- r - W G y) or an explicit recomputation of s - A~ x
    cycle_residual: str = "recurrence"

    def resolved_max_cycles(self, n: int) -> int:
        if self.max_cycles is not None:
            return self.max_cycles
        return max(1, math.ceil(10 * n / self.m))

    def validate(self, n: int) -> None:
        if not (1 <= self.k < self.m <= n):
            raise ValueError(
                f"need 1 <= k < m <= n, got k={self.k}, m={self.m}, n={n}"
            )
        if not self.tau > 0:
            raise ValueError("tolerance tau must be positive")


# ---------------------------------------------------------------------------
# harmonic Ritz extraction
# ---------------------------------------------------------------------------

def _real_basis_smallest(pairs: EigenPairs, k: int, dim: int) -> np.ndarray:
    """Real basis for the k smallest-|value| eigenvectors.

    A conjugate pair contributes its real and imaginary parts together; if
    the pair straddles the cutoff it is retained whole (k_eff = k + 1) when
    that still leaves room in the space, since a real basis cannot split a
    pair and retaining beats discarding.
    """
    allow = k + 1 if k + 1 <= dim - 1 else k
    cols: list[np.ndarray] = []
    i = 0
    values = pairs.values
    vectors = pairs.vectors
    while i < len(values) and len(cols) < k:
        lam = values[i]
        vec = vectors[:, i]
        if lam.imag == 0.0:
            cols.append(np.real(vec))
            i += 1
            continue
        if len(cols) + 2 <= allow:
            cols.append(np.real(vec))
            cols.append(np.imag(vec))
            i += 2
            continue
        if not cols:  # forced: a lone pair at k = dim boundary
            cols.append(np.real(vec))
            i += 1
            continue
        break  # pair does not fit the allowance; keep k - 1 columns
    p = np.column_stack(cols)
    norms = np.linalg.norm(p, axis=0)
    norms[norms == 0.0] = 1.0
    return p / norms[np.newaxis, :]


def harmonic_ritz_first(
    h: np.ndarray,
    h_sub: float,
    v: np.ndarray,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic Ritz basis after a plain Arnoldi cycle.

    Solves the rank-one-modified Hessenberg eigenproblem
    (H + h_sub^2 H^-T e_m e_m^T) z = theta z, selects the k
    smallest-magnitude values, and returns (P_k, V P_k).  A singular H
    degrades to plain Ritz values of H.
    """
    h = np.asarray(h, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    j = h.shape[0]
    m = h
    if h_sub != 0.0:
        e = np.zeros(j)
        e[-1] = 1.0
        try:
            w = np.linalg.solve(h.T, e)
            if np.all(np.isfinite(w)):
                m = h + (h_sub * h_sub) * np.outer(w, e)
        except np.linalg.LinAlgError:
            pass  # fall back to Ritz values of H
    pairs = eig_small(m)
    p = _real_basis_smallest(pairs, min(k, j), j)
    return p, v[:, :j] @ p


def harmonic_ritz_recycle(
    g: np.ndarray,
    w: np.ndarray,
    v: np.ndarray,
    k: int,
    fmt: Format = Format.DOUBLE,
) -> np.ndarray:
    """Harmonic Ritz basis from the block relation A~ V^ = W^ G_.

    Solves G^T G z = theta G^T (W^T V) z for the k smallest-magnitude
    values.  A numerically singular right-hand matrix is perturbed on its
    diagonal by sqrt(u) * ||B|| and retried once; a second failure
    propagates SingularB so the caller can skip this cycle's update.
    """
    g = np.asarray(g, dtype=np.float64)
    p_dim = g.shape[1]
    wtv = np.column_stack([mat_tvec(w, v[:, i], fmt) for i in range(p_dim)])
    a1 = g.T @ g
    b1 = g.T @ wtv
    try:
        pairs = eig_generalized(a1, b1)
    except SingularB:
        if not np.all(np.isfinite(b1)):
            raise
        shift = math.sqrt(Format.DOUBLE.unit_roundoff) * np.linalg.norm(b1)
        pairs = eig_generalized(a1, b1 + shift * np.eye(p_dim))
    return _real_basis_smallest(pairs, min(k, p_dim), p_dim)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def _u_from_r(ytil: np.ndarray, r: np.ndarray, fmt: Format) -> np.ndarray:
    # U = Ytil R^-1  via  R^T U^T = Ytil^T
    u = scipy.linalg.solve_triangular(
        r, ytil.T, trans="T", lower=False, check_finite=False
    ).T
    return round_array(u, fmt)


def _ls_solve(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(g, mode="reduced")
    if np.any(np.abs(np.diag(r)) == 0.0):
        return np.linalg.lstsq(g, rhs, rcond=None)[0]
    return scipy.linalg.solve_triangular(
        r, q.T @ rhs, lower=False, check_finite=False
    )


@np.errstate(invalid="ignore", over="ignore", divide="ignore")
def gcrodr_solve(
    a,
    f: LUFactors,
    r,
    cfg: GcrodrConfig,
    recycle_in: RecycleSpace | None = None,
) -> tuple[GmresOutcome, RecycleSpace | None]:
    """One preconditioned GCRO-DR(m, k) solve of U^-1 L^-1 A d = U^-1 L^-1 r.

    Returns the solve outcome and the recycle space for the next invocation
    (Y_k handed off as U_k).  A rank-deficient recycle basis is discarded
    and the solve falls back to a cold start; exhausting the cycle budget
    marks the outcome stagnated.
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
    x = np.zeros(n)
    if snorm == 0.0:
        out = GmresOutcome(x, [], True, 0.0, None, operator_applies=0)
        return out, recycle_in
    tol_abs = cfg.tau * snorm
    res = s.copy()

    iterations: list[int] = []
    cycles = 0
    max_cycles = cfg.resolved_max_cycles(n)
    ck: np.ndarray | None = None
    uk: np.ndarray | None = None
    keff = 0
    breakdown = False
    last_cycle: ArnoldiCycle | None = None
    diagnostics: list[dict] | None = [] if cfg.collect_diagnostics else None

    # --- re-orthogonalize and apply an incoming recycle space -------------
    if recycle_in is not None:
        yk = np.asarray(recycle_in.Yk, dtype=np.float64)
        if yk.ndim != 2 or yk.shape[0] != n or yk.shape[1] < 1:
            raise ValueError("recycle space dimension does not match the system")
        yk = round_array(yk, fmt)
        ay = np.column_stack([apply_op(yk[:, i]) for i in range(yk.shape[1])])
        try:
            q, rr = qr_reduced(ay)
            ck = round_array(q, fmt)
            uk = _u_from_r(yk, rr, fmt)
            keff = ck.shape[1]
            t = mat_tvec(ck, res, fmt)
            for i in range(keff):
                x = vaxpy(t[i], uk[:, i], x, fmt)
                res = vaxpy(-t[i], ck[:, i], res, fmt)
        except RankDeficient:
            ck = uk = None
            keff = 0

    def plain_cycle_and_harvest() -> None:
        """GMRES(m) cycle, update x/res, harvest a recycle space."""
        nonlocal x, res, ck, uk, keff, breakdown, last_cycle, cycles
        beta = vnorm2(res, fmt)
        cyc = arnoldi_cycle(
            apply_op, res, beta, cfg.m, tol_abs, fmt, cfg.reorthogonalize
        )
        last_cycle = cyc
        iterations.append(cyc.steps)
        cycles += 1
        breakdown = breakdown or cyc.breakdown
        j = cyc.steps
        for jj in range(j):
            x = vaxpy(cyc.y[jj], cyc.V[:, jj], x, fmt)
        if cyc.converged or cfg.cycle_residual == "recurrence":
            res = _recurrence_residual(cyc, beta, fmt)
        else:
            res = vsub(s, apply_op(x), fmt)
        if j < cfg.k:
            return  # cycle too short to extract k harmonic Ritz vectors
        try:
            p, ytil = harmonic_ritz_first(
                cyc.H[:j, :j], float(cyc.H[j, j - 1]), cyc.V, cfg.k
            )
            ytil = round_array(ytil, fmt)
            q, rr = qr_reduced(cyc.H[: j + 1, :j] @ p)
            ck = round_array(cyc.V[:, : j + 1] @ q, fmt)
            uk = _u_from_r(ytil, rr, fmt)
            keff = p.shape[1]
        except (RankDeficient, NoConvergence):
            ck = uk = None
            keff = 0

    if ck is None:
        plain_cycle_and_harvest()
        if diagnostics is not None and ck is not None:
            diagnostics.append(
                {"kind": "cold", "steps": iterations[-1], "k_eff": keff,
                 "Ck": ck.copy(), "Uk": uk.copy()}
            )

    # --- deflated cycles ---------------------------------------------------
    converged = False
    while True:
        beta = vnorm2(res, fmt)
        if beta <= tol_abs:
            converged = True
            break
        if cycles >= max_cycles:
            break
        if ck is None:
            # no usable recycle space (degenerate harvest): behave as GMRES
            plain_cycle_and_harvest()
            continue

        budget = cfg.m - keff
        cyc = arnoldi_cycle(
            apply_op, res, beta, budget, tol_abs, fmt,
            cfg.reorthogonalize, deflate_c=ck,
        )
        last_cycle = cyc
        iterations.append(cyc.steps)
        cycles += 1
        breakdown = breakdown or cyc.breakdown
        j = cyc.steps

        # Ghat = [[D, B], [0, Hbar]] where D normalizes the U columns
        dk = np.array([vnorm2(uk[:, i], fmt) for i in range(keff)])
        dk[dk == 0.0] = 1.0
        dk = round_array(1.0 / dk, fmt)
        ut = np.column_stack(
            [round_array(uk[:, i] * dk[i], fmt) for i in range(keff)]
        )
        ghat = np.zeros((keff + j + 1, keff + j))
        ghat[:keff, :keff] = np.diag(dk)
        ghat[:keff, keff:] = cyc.B[:, :j]
        ghat[keff:, keff:] = cyc.H[: j + 1, :j]
        what = np.column_stack([ck, cyc.V[:, : j + 1]])
        vhat = np.column_stack([ut, cyc.V[:, :j]])

        rhs = mat_tvec(what, res, fmt)
        y = round_array(_ls_solve(ghat, rhs), fmt)
        for jj in range(keff + j):
            x = vaxpy(y[jj], vhat[:, jj], x, fmt)
        gy = round_array(ghat @ y, fmt)
        new_res = res.copy()
        for i in range(keff + j + 1):
            new_res = vaxpy(-gy[i], what[:, i], new_res, fmt)
        res_before = res
        if cyc.converged or cfg.cycle_residual == "recurrence":
            res = new_res
        else:
            res = vsub(s, apply_op(x), fmt)

        if j >= 1:
            try:
                p = harmonic_ritz_recycle(ghat, what, vhat, cfg.k, fmt)
                ytil = round_array(vhat @ p, fmt)
                q, rr = qr_reduced(ghat @ p)
                ck = round_array(what @ q, fmt)
                uk = _u_from_r(ytil, rr, fmt)
                keff = p.shape[1]
            except (SingularB, RankDeficient, NoConvergence):
                pass  # keep the previous recycle space for this cycle
        if diagnostics is not None:
            # true residuals before/after the minimization step of this cycle
            res_true = vsub(s, apply_op(x), fmt)
            diagnostics.append(
                {"kind": "deflated", "steps": j, "k_eff": keff,
                 "budget": budget, "Ck": ck.copy(), "Uk": uk.copy(),
                 "res_norm_before": two_norm(res_before),
                 "res_norm_after": two_norm(new_res),
                 "res_true_norm": two_norm(res_true)}
            )

    final_relres = vnorm2(res, fmt) / snorm
    recycle_out = None
    if uk is not None:
        # hand Y_k = U_k to the next system
        recycle_out = RecycleSpace(Yk=uk.copy(), Uk=uk, Ck=ck, k_eff=keff)
    basis = (last_cycle.V, last_cycle.H) if last_cycle is not None else None
    outcome = GmresOutcome(
        solution=x,
        iterations_per_cycle=iterations,
        converged=converged,
        final_relres=final_relres,
        basis=basis,
        stagnated=not converged,
        happy_breakdown=breakdown,
        operator_applies=applies,
        cycle_diagnostics=diagnostics,
    )
    return outcome, recycle_out
