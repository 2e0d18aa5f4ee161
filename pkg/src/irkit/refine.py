"""Mixed-precision iterative refinement drivers.

Five methods share one loop: factorize in the low precision, get an initial
solution by substitution, then repeat (residual in the high precision,
scaled correction solve, update in the working precision) until the
normwise relative backward error reaches the working-precision level.  The
correction solver is LU substitution (SIR), restarted GMRES (GMRES-IR /
SGMRES-IR) or GCRO-DR with the recycle space carried across refinement
steps (RGMRES-IR / RSGMRES-IR).  The S-variants apply the preconditioned
operator in the uniform working precision instead of doubled precision.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from irkit.densela import (
    ExactZeroPivot,
    LUFactors,
    inf_norm,
    lu_factor,
    lu_solve,
    quad_solve,
    residual,
)
from irkit.gcrodr import GcrodrConfig, RecycleSpace, gcrodr_solve
from irkit.gmres import GmresConfig, gmres_solve
from irkit.precision import (
    Format,
    PrecisionTriple,
    context_for,
    round_array,
    squared_format,
    vadd,
    vscale,
)

__all__ = [
    "Method",
    "DivergenceReason",
    "RefineConfig",
    "RefinementReport",
    "ConvergenceDecision",
    "check_convergence",
    "sir",
    "gmres_ir",
    "rgmres_ir",
    "solve",
]


class Method(enum.Enum):
    SIR = "sir"
    GMRES_IR = "gmres-ir"
    SGMRES_IR = "sgmres-ir"
    RGMRES_IR = "rgmres-ir"
    RSGMRES_IR = "rsgmres-ir"

    @classmethod
    def parse(cls, name: str) -> "Method":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown method {name!r}; expected one of "
                f"{[m.value for m in cls]}"
            ) from None

    @property
    def uses_gmres(self) -> bool:
        return self in (Method.GMRES_IR, Method.SGMRES_IR)

    @property
    def uses_recycling(self) -> bool:
        return self in (Method.RGMRES_IR, Method.RSGMRES_IR)

    @property
    def uniform_precision(self) -> bool:
        return self in (Method.SGMRES_IR, Method.RSGMRES_IR)


class DivergenceReason(enum.Enum):
    I_MAX_EXCEEDED = "IMaxExceeded"
    INNER_STAGNATION = "InnerStagnation"
    ERROR_GROWTH = "ErrorGrowth"


_DEFAULT_TAU = {
    Format.HALF: 1e-2,
    Format.SINGLE: 1e-4,
    Format.DOUBLE: 1e-8,
    Format.QUAD: 1e-8,
}


@dataclass
class RefineConfig:
    """Precisions, method and solver parameters of one refinement run."""

    precisions: PrecisionTriple
    method: Method = Method.GMRES_IR
    m: int = 0  # 0 -> min(n, 40) at solve time
    k: int = 0  # recycling methods only
    tau: float | None = None  # None -> 1e-4 (single u) / 1e-8 (double u)
    i_max: int = 10000
    extra_precision_matvec: bool | None = None  # None -> by method
    c_conv: float = 2.0
    max_cycles: int | None = None
    reorthogonalize: bool = True
    scale_diag: bool = False
    collect_diagnostics: bool = False
    restart_residual: str = "recurrence"  # restarted GMRES boundary residual
    cycle_residual: str = "recurrence"   # recycling-solver boundary residual

    def resolved_tau(self) -> float:
        if self.tau is not None:
            return self.tau
        return _DEFAULT_TAU[self.precisions.u]

    def resolved_extra_precision(self) -> bool:
        if self.extra_precision_matvec is not None:
            return self.extra_precision_matvec
        return not self.method.uniform_precision

    def matvec_format(self) -> Format:
        u = self.precisions.u
        return squared_format(u) if self.resolved_extra_precision() else u

    def resolved_m(self, n: int) -> int:
        return self.m if self.m else min(n, 40)


@dataclass
class RefinementReport:
    """Per-step inner iteration counts, error histories and the verdict."""

    converged: bool
    steps: int
    inner_iters: list[int]
    nbe_history: list[float]
    ferr_history: list[float]
    divergence_reason: DivergenceReason | None = None
    solution: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def total_inner(self) -> int:
        return sum(self.inner_iters)

    @property
    def nbe_final(self) -> float:
        return self.nbe_history[-1] if self.nbe_history else float("nan")

    @property
    def ferr_final(self) -> float:
        return self.ferr_history[-1] if self.ferr_history else float("nan")


@dataclass
class ConvergenceDecision:
    state: str  # "continue" | "converged" | "diverged"
    reason: DivergenceReason | None
    nbe: float
    cbe: float = float("nan")
    ferr: float = float("nan")


def check_convergence(
    a,
    b,
    x,
    d,
    history: list[float],
    precisions: PrecisionTriple,
    c_conv: float = 2.0,
    inner_stagnated: bool = False,
    norm_a_inf: float | None = None,
    norm_b_inf: float | None = None,
    ferr: float = float("nan"),
) -> ConvergenceDecision:
    """Classify a refinement step after the solution update.

    Converged when the normwise and componentwise relative backward errors
    (residual computed in the residual precision) and, when a reference
    solution is available, the forward error are all at most c_conv * u.
    Divergence fires on three consecutive >= 2x increases of the normwise
    backward error, or when the inner solver stagnated.  ``history`` holds
    the previous steps' normwise values.
    """
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if norm_a_inf is None:
        norm_a_inf = inf_norm(a)
    if norm_b_inf is None:
        norm_b_inf = inf_norm(b)
    r = residual(a, x, b, context_for(precisions.ur))
    denom = norm_a_inf * inf_norm(x) + norm_b_inf
    nbe = float(np.max(np.abs(r))) / denom if denom > 0 else float("inf")
    comp_denom = np.abs(a) @ np.abs(x) + np.abs(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.abs(r) / comp_denom
    ratios = ratios[np.isfinite(ratios)]
    cbe = float(np.max(ratios)) if ratios.size else nbe

    gate = c_conv * precisions.u.unit_roundoff
    worst = max(nbe, cbe, ferr if math.isfinite(ferr) else 0.0)
    if math.isfinite(worst) and worst <= gate:
        return ConvergenceDecision("converged", None, nbe, cbe, ferr)
    if inner_stagnated:
        return ConvergenceDecision(
            "diverged", DivergenceReason.INNER_STAGNATION, nbe, cbe, ferr
        )
    growth = 0
    seq = history + [nbe]
    for prev, cur in zip(seq[:-1], seq[1:]):
        if not math.isfinite(cur) or (math.isfinite(prev) and cur >= 2.0 * prev):
            growth += 1
        else:
            growth = 0
    if growth >= 3:
        return ConvergenceDecision(
            "diverged", DivergenceReason.ERROR_GROWTH, nbe, cbe, ferr
        )
    return ConvergenceDecision("continue", None, nbe, cbe, ferr)


# ---------------------------------------------------------------------------
# reference solution for forward-error diagnostics
# ---------------------------------------------------------------------------

_QUAD_SOLVE_LIMIT = 600  # full double-double GEPP above this gets slow


def _reference_solution(a: np.ndarray, b: np.ndarray, u: Format) -> np.ndarray | None:
    """Accuracy reference for forward errors.

    Full double-double GEPP at small sizes (reliable far beyond binary64
    conditioning); at large sizes a double factorization refined with
    double-double residuals, which covers the moderate condition numbers
    such systems have in practice.
    """
    try:
        if a.shape[0] <= _QUAD_SOLVE_LIMIT:
            x = quad_solve(a, b)
            return x if np.all(np.isfinite(x)) else None
        f = lu_factor(a, context_for(Format.DOUBLE))
        x = lu_solve(f, b, context_for(Format.DOUBLE))
        for _ in range(4):
            r = residual(a, x, b, context_for(Format.QUAD))
            x = x + lu_solve(f, r, context_for(Format.DOUBLE))
        return x if np.all(np.isfinite(x)) else None
    except ExactZeroPivot:
        return None


def _pow2_equilibrate(a: np.ndarray, b: np.ndarray):
    """Two-sided diagonal scaling by powers of two (exact in binary)."""
    row = np.max(np.abs(a), axis=1)
    row[row == 0.0] = 1.0
    dr = 2.0 ** (-np.round(np.log2(row)))
    a1 = dr[:, np.newaxis] * a
    col = np.max(np.abs(a1), axis=0)
    col[col == 0.0] = 1.0
    dc = 2.0 ** (-np.round(np.log2(col)))
    return a1 * dc[np.newaxis, :], dr * b, dc


# ---------------------------------------------------------------------------
# the shared refinement loop
# ---------------------------------------------------------------------------

@np.errstate(invalid="ignore", over="ignore", divide="ignore")
def _refine(a, b, cfg: RefineConfig) -> RefinementReport:
    prec = cfg.precisions
    u = prec.u
    uf_ctx = context_for(prec.uf)
    ur_ctx = context_for(prec.ur)
    tau = cfg.resolved_tau()

    a = round_array(np.asarray(a, dtype=np.float64), u)
    b = round_array(np.asarray(b, dtype=np.float64), u)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape != (n,):
        raise ValueError("need a square matrix and a matching right-hand side")

    diagnostics: dict = {}
    col_scale = None
    if cfg.scale_diag:
        a, b, col_scale = _pow2_equilibrate(a, b)
        a = round_array(a, u)
        b = round_array(b, u)
        diagnostics["equilibrated"] = True

    norm_a = inf_norm(a)
    norm_b = inf_norm(b)

    try:
        factors = lu_factor(a, uf_ctx)
    except ExactZeroPivot as exc:
        return RefinementReport(
            converged=False,
            steps=0,
            inner_iters=[],
            nbe_history=[],
            ferr_history=[],
            divergence_reason=DivergenceReason.INNER_STAGNATION,
            solution=None,
            diagnostics={"lu_failed": str(exc), **diagnostics},
        )
    diagnostics["lu_growth"] = factors.growth

    x = lu_solve(factors, b, uf_ctx, store_fmt=u)
    if not np.all(np.isfinite(x)):
        # overflowed low-precision substitution; restart the iteration at 0
        x = np.zeros(n)
        diagnostics["x0_reset"] = True

    xref = _reference_solution(a, b, u)
    if xref is None:
        diagnostics["no_reference_solution"] = True

    method = cfg.method
    gmres_cfg = None
    gcro_cfg = None
    if method.uses_gmres:
        gmres_cfg = GmresConfig(
            m=cfg.resolved_m(n),
            tau=tau,
            matvec_ctx=context_for(cfg.matvec_format()),
            work_fmt=u,
            max_cycles=cfg.max_cycles,
            reorthogonalize=cfg.reorthogonalize,
            restart_residual=cfg.restart_residual,
        )
    elif method.uses_recycling:
        if not (1 <= cfg.k < cfg.resolved_m(n)):
            raise ValueError("recycling methods need 1 <= k < m")
        gcro_cfg = GcrodrConfig(
            m=cfg.resolved_m(n),
            k=cfg.k,
            tau=tau,
            matvec_ctx=context_for(cfg.matvec_format()),
            work_fmt=u,
            max_cycles=cfg.max_cycles,
            reorthogonalize=cfg.reorthogonalize,
            collect_diagnostics=cfg.collect_diagnostics,
            cycle_residual=cfg.cycle_residual,
        )

    recycle: RecycleSpace | None = None
    nbe_hist: list[float] = []
    ferr_hist: list[float] = []
    inner: list[int] = []
    reason: DivergenceReason | None = DivergenceReason.I_MAX_EXCEEDED
    converged = False

    for _ in range(cfg.i_max):
        r = residual(a, x, b, ur_ctx)
        nu = float(np.max(np.abs(r)))  # captured before storage rounding
        if nu == 0.0 or not math.isfinite(nu):
            if nu == 0.0:
                converged = True
                reason = None
                inner.append(0)
                nbe_hist.append(0.0)
                ferr_hist.append(_forward_error(x, xref))
            else:
                reason = DivergenceReason.ERROR_GROWTH
            break
        r_hat = round_array(r / nu, u)

        inner_stagnated = False
        if method is Method.SIR:
            d = lu_solve(factors, r_hat, uf_ctx, store_fmt=u)
            step_inner = 1
        elif method.uses_gmres:
            out = gmres_solve(a, factors, r_hat, gmres_cfg)
            d = out.solution
            step_inner = out.total_iterations
            inner_stagnated = out.stagnated
        else:
            out, recycle = gcrodr_solve(a, factors, r_hat, gcro_cfg, recycle)
            d = out.solution
            step_inner = out.total_iterations
            inner_stagnated = out.stagnated

        x = vadd(x, vscale(nu, d, u), u)
        inner.append(step_inner)
        ferr = _forward_error(x, xref)
        decision = check_convergence(
            a, b, x, d, nbe_hist, prec, cfg.c_conv,
            inner_stagnated, norm_a, norm_b, ferr,
        )
        nbe_hist.append(decision.nbe)
        ferr_hist.append(ferr)
        if decision.state == "converged":
            converged = True
            reason = None
            break
        if decision.state == "diverged":
            reason = decision.reason
            break

    solution = x
    if col_scale is not None and solution is not None:
        solution = col_scale * solution
    return RefinementReport(
        converged=converged,
        steps=len(inner),
        inner_iters=inner,
        nbe_history=nbe_hist,
        ferr_history=ferr_hist,
        divergence_reason=None if converged else reason,
        solution=solution,
        diagnostics=diagnostics,
    )


def _forward_error(x: np.ndarray, xref: np.ndarray | None) -> float:
    if xref is None:
        return float("nan")
    denom = float(np.max(np.abs(xref)))
    if denom == 0.0:
        return float(np.max(np.abs(x - xref)))
    return float(np.max(np.abs(x - xref))) / denom


# ---------------------------------------------------------------------------
# public drivers
# ---------------------------------------------------------------------------

def sir(a, b, cfg: RefineConfig) -> RefinementReport:
    """Standard iterative refinement: corrections by LU substitution."""
    if cfg.method is not Method.SIR:
        raise ValueError("sir() requires cfg.method == Method.SIR")
    return _refine(a, b, cfg)


def gmres_ir(a, b, cfg: RefineConfig) -> RefinementReport:
    """GMRES-based refinement (doubled or uniform matvec precision)."""
    if not cfg.method.uses_gmres:
        raise ValueError("gmres_ir() requires a GMRES-based method")
    return _refine(a, b, cfg)


def rgmres_ir(a, b, cfg: RefineConfig) -> RefinementReport:
    """Recycled-GMRES refinement: GCRO-DR with the space carried across steps."""
    if not cfg.method.uses_recycling:
        raise ValueError("rgmres_ir() requires a recycling method")
    return _refine(a, b, cfg)


def solve(a, b, cfg: RefineConfig) -> RefinementReport:
    """Dispatch on cfg.method."""
    if cfg.method is Method.SIR:
        return sir(a, b, cfg)
    if cfg.method.uses_gmres:
        return gmres_ir(a, b, cfg)
    return rgmres_ir(a, b, cfg)
