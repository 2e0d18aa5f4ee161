"""Experiment runner and CLI.

Generates or loads test matrices, runs method x precision sweeps, and emits
iteration-count tables ("total (c1,c2,...)" cells, "-" on divergence) as
CSV, markdown or JSON, plus eigenvalue-spectrum dumps and recycle-dimension
scans.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from irkit.densela import (
    NoConvergence,
    cond_inf,
    eig_small,
    lu_factor,
)
from irkit.matgen import (
    ProlateSpec,
    RandSvdSpec,
    gen_prolate,
    gen_randsvd,
    read_matrix_market,
    rhs_ones,
    write_matrix_market,
)
from irkit.precision import (
    Format,
    PrecisionTriple,
    context_for,
    set_half_flush_subnormals,
)
from irkit.refine import Method, RefineConfig, RefinementReport, solve as refine_solve

__all__ = [
    "ProblemRef",
    "SweepSpec",
    "run_sweep",
    "spectrum_dump",
    "kscan",
    "emit",
    "format_cell",
    "main",
]

_CSV_COLUMNS = [
    "problem_id",
    "kappa_inf",
    "kappa_2",
    "method",
    "m",
    "k",
    "tau",
    "converged",
    "steps",
    "total_inner",
    "per_step",
    "nbe_final",
    "ferr_final",
    "divergence_reason",
]


@dataclass(frozen=True)
class ProblemRef:
    """A declarative test problem: generated family or a Matrix Market file."""

    kind: str  # "prolate" | "randsvd" | "mtx"
    alpha: float | None = None
    kappa2: float | None = None
    n: int = 100
    seed: int = 1
    path: str | None = None

    @property
    def problem_id(self) -> str:
        if self.kind == "prolate":
            return f"prolate:{self.alpha:g}"
        if self.kind == "randsvd":
            return f"randsvd:{self.kappa2:g}"
        return Path(self.path).stem

    def materialize(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "prolate":
            a = gen_prolate(ProlateSpec(self.n, self.alpha))
        elif self.kind == "randsvd":
            a = gen_randsvd(RandSvdSpec(self.n, self.kappa2, self.seed))
        elif self.kind == "mtx":
            a = read_matrix_market(self.path)
        else:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        return a, rhs_ones(a.shape[0])

    @classmethod
    def parse(cls, text: str, n: int = 100, seed: int = 1) -> "ProblemRef":
        """"prolate:0.475", "randsvd:1e12" or "mtx:/path/file.mtx"."""
        kind, _, arg = text.partition(":")
        kind = kind.strip().lower()
        if kind == "prolate":
            return cls("prolate", alpha=float(arg), n=n, seed=seed)
        if kind == "randsvd":
            return cls("randsvd", kappa2=float(arg), n=n, seed=seed)
        if kind == "mtx":
            return cls("mtx", path=arg, n=n, seed=seed)
        raise ValueError(f"unknown problem spec {text!r}")


@dataclass
class SweepSpec:
    """A grid of problems x methods under one precision/parameter setting."""

    problems: list[ProblemRef]
    methods: list[Method]
    precisions: PrecisionTriple
    m: int
    k: int = 0
    tau: float | None = None
    i_max: int = 10000
    seed: int = 1
    scale_diag: bool = False
    jobs: int = 1
    skip_kappa2: bool = False


def format_cell(report: RefinementReport) -> str:
    """Render "total (c1,c2,...)"; divergent runs render "-"."""
    if not report.converged:
        return "-"
    per = ",".join(str(c) for c in report.inner_iters)
    return f"{report.total_inner} ({per})"


def _refine_config(spec: SweepSpec, method: Method) -> RefineConfig:
    return RefineConfig(
        precisions=spec.precisions,
        method=method,
        m=spec.m,
        k=spec.k,
        tau=spec.tau,
        i_max=spec.i_max,
        scale_diag=spec.scale_diag,
    )


def _report_payload(report: RefinementReport) -> dict:
    return {
        "converged": report.converged,
        "steps": report.steps,
        "inner_iters": list(report.inner_iters),
        "total_inner": report.total_inner,
        "nbe_history": [float(v) for v in report.nbe_history],
        "ferr_history": [float(v) for v in report.ferr_history],
        "divergence_reason": (
            report.divergence_reason.value if report.divergence_reason else None
        ),
        "solution": (
            [float(v) for v in report.solution]
            if report.solution is not None
            else None
        ),
        "diagnostics": {
            key: (float(val) if isinstance(val, (int, float)) else str(val))
            for key, val in report.diagnostics.items()
        },
    }


def _sweep_one_problem(args) -> list[dict]:
    spec, ref = args
    rows = []
    try:
        a, b = ref.materialize()
        kinf = cond_inf(a)
        k2 = float("nan") if spec.skip_kappa2 else float(np.linalg.cond(a))
    except Exception as exc:  # recorded in-row, sweep continues
        for method in spec.methods:
            rows.append(_error_row(ref.problem_id, spec, method, exc))
        return rows
    for method in spec.methods:
        try:
            cfg = _refine_config(spec, method)
            report = refine_solve(a, b, cfg)
            rows.append(
                {
                    "problem_id": ref.problem_id,
                    "kappa_inf": kinf,
                    "kappa_2": k2,
                    "method": method.value,
                    "m": spec.m,
                    "k": spec.k if method.uses_recycling else 0,
                    "tau": cfg.resolved_tau(),
                    "converged": report.converged,
                    "steps": report.steps,
                    "total_inner": report.total_inner,
                    "per_step": ";".join(str(c) for c in report.inner_iters),
                    "nbe_final": report.nbe_final,
                    "ferr_final": report.ferr_final,
                    "divergence_reason": (
                        report.divergence_reason.value
                        if report.divergence_reason
                        else ""
                    ),
                    "cell": format_cell(report),
                    "report": _report_payload(report),
                }
            )
        except Exception as exc:
            rows.append(_error_row(ref.problem_id, spec, method, exc))
    return rows


def _error_row(problem_id: str, spec: SweepSpec, method: Method, exc) -> dict:
    return {
        "problem_id": problem_id,
        "kappa_inf": float("nan"),
        "kappa_2": float("nan"),
        "method": method.value,
        "m": spec.m,
        "k": spec.k if method.uses_recycling else 0,
        "tau": spec.tau if spec.tau is not None else float("nan"),
        "converged": False,
        "steps": 0,
        "total_inner": 0,
        "per_step": "",
        "nbe_final": float("nan"),
        "ferr_final": float("nan"),
        "divergence_reason": f"error: {exc}",
        "cell": "-",
        "report": None,
    }


def run_sweep(spec: SweepSpec) -> list[dict]:
    """One row per (problem, method), ordered by the spec regardless of
    completion order.  Row failures are recorded in-row."""
    if not spec.problems:
        raise ValueError("empty problem set")
    if not spec.methods:
        raise ValueError("empty method list")
    work = [(spec, ref) for ref in spec.problems]
    if spec.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(spec.jobs) as pool:
            per_problem = list(pool.map(_sweep_one_problem, work))
    else:
        per_problem = [_sweep_one_problem(item) for item in work]
    rows: list[dict] = []
    for chunk in per_problem:
        rows.extend(chunk)
    return rows


# ---------------------------------------------------------------------------
# spectrum dump and recycle-dimension scan
# ---------------------------------------------------------------------------

def _preconditioned_matrix(a: np.ndarray, factors) -> np.ndarray:
    """U^-1 L^-1 P A formed column by column in double."""
    m = a[factors.perm, :]
    m = scipy.linalg.solve_triangular(
        factors.L, m, lower=True, unit_diagonal=True, check_finite=False
    )
    return scipy.linalg.solve_triangular(
        factors.U, m, lower=False, check_finite=False
    )


def spectrum_dump(a, uf_format: Format, out) -> list[str]:
    """Write eigenvalues of A and of the double- and uf-preconditioned
    operators as CSV points (set,re,im).  Returns the set names written."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n > 500:
        raise ValueError("spectrum dump is limited to n <= 500")
    sets: list[tuple[str, np.ndarray]] = []
    failures: list[str] = []

    def add(name: str, mat: np.ndarray) -> None:
        try:
            sets.append((name, eig_small(mat).values))
        except NoConvergence:
            failures.append(name)

    add("original", a)
    f_double = lu_factor(a, context_for(Format.DOUBLE))
    add("precond_double", _preconditioned_matrix(a, f_double))
    f_low = lu_factor(a, context_for(uf_format))
    add(f"precond_{uf_format.value}", _preconditioned_matrix(a, f_low))

    lines = ["set,re,im"]
    for name, values in sets:
        for lam in values:
            lines.append(f"{name},{lam.real!r},{lam.imag!r}")
    Path(out).write_text("\n".join(lines) + "\n", encoding="ascii")
    return [name for name, _ in sets]


def kscan(
    problem: ProblemRef,
    cfg: RefineConfig,
    k_range,
) -> list[dict]:
    """Total inner iterations of the recycling method for each k.

    Divergent runs emit total -1.
    """
    k_values = list(k_range)
    if any(k >= cfg.resolved_m(problem.n) for k in k_values):
        raise ValueError("every k must be smaller than m")
    a, b = problem.materialize()
    rows = []
    for k in k_values:
        report = refine_solve(a, b, replace(cfg, k=int(k)))
        rows.append(
            {
                "k": int(k),
                "total_inner": report.total_inner if report.converged else -1,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit(rows: list[dict], fmt: str, path) -> None:
    """Serialize sweep rows deterministically as csv, markdown or json."""
    path = Path(path)
    if fmt == "csv":
        columns = _CSV_COLUMNS if not rows or "problem_id" in rows[0] else list(rows[0])
        lines = [",".join(columns)]
        for row in rows:
            lines.append(",".join(_fmt_value(row.get(c, "")) for c in columns))
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    elif fmt == "markdown":
        if rows and "problem_id" in rows[0]:
            columns = ["problem_id", "method", "m", "k", "result", "converged", "nbe_final"]
            lines = ["| " + " | ".join(columns) + " |",
                     "|" + "|".join(" --- " for _ in columns) + "|"]
            for row in rows:
                cells = [
                    str(row["problem_id"]),
                    str(row["method"]),
                    str(row["m"]),
                    str(row["k"]),
                    row.get("cell", "-"),
                    _fmt_value(row["converged"]),
                    _fmt_value(row["nbe_final"]),
                ]
                lines.append("| " + " | ".join(cells) + " |")
        else:
            columns = list(rows[0]) if rows else []
            lines = ["| " + " | ".join(columns) + " |",
                     "|" + "|".join(" --- " for _ in columns) + "|"]
            for row in rows:
                lines.append(
                    "| " + " | ".join(_fmt_value(row[c]) for c in columns) + " |"
                )
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    elif fmt == "json":
        path.write_text(
            json.dumps(rows, indent=2, allow_nan=True) + "\n", encoding="ascii"
        )
    else:
        raise ValueError(f"unknown output format {fmt!r}")


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _add_precision_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--uf", default="single", help="factorization precision")
    p.add_argument("--u", default="double", help="working precision")
    p.add_argument("--ur", default="quad", help="residual precision")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--m", type=int, default=40, help="restart / subspace size")
    p.add_argument("--k", type=int, default=0, help="recycle dimension")
    p.add_argument("--tau", type=float, default=None, help="inner tolerance")
    p.add_argument("--imax", type=int, default=10000, help="max refinement steps")
    p.add_argument("--seed", type=int, default=1, help="generator seed")
    p.add_argument("--n", type=int, default=100, help="generated problem size")
    p.add_argument(
        "--scale-diag", action="store_true",
        help="two-sided power-of-two equilibration before solving",
    )
    p.add_argument(
        "--half-ftz", action="store_true",
        help="flush half-precision subnormals to zero (default keeps them)",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irkit",
        description="Mixed-precision iterative refinement experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one problem with one method")
    p_solve.add_argument("--problem", required=True,
                         help="prolate:ALPHA | randsvd:KAPPA2 | mtx:PATH")
    p_solve.add_argument("--method", default="gmres-ir")
    _add_precision_flags(p_solve)
    _add_solver_flags(p_solve)
    p_solve.add_argument("--out", default=None, help="write the report as JSON")

    p_sweep = sub.add_parser("sweep", help="run a problems x methods grid")
    p_sweep.add_argument("--prolate", default=None, help="comma list of alpha")
    p_sweep.add_argument("--randsvd", default=None, help="comma list of kappa2")
    p_sweep.add_argument("--mtx", default=None, help="comma list of .mtx paths")
    p_sweep.add_argument("--methods", default="gmres-ir,rgmres-ir")
    _add_precision_flags(p_sweep)
    _add_solver_flags(p_sweep)
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--format", default="csv",
                         choices=("csv", "markdown", "json"))

    p_spec = sub.add_parser("spectrum", help="dump eigenvalue point sets")
    p_spec.add_argument("--problem", required=True)
    p_spec.add_argument("--uf", default="half")
    p_spec.add_argument("--n", type=int, default=100)
    p_spec.add_argument("--seed", type=int, default=1)
    p_spec.add_argument("--out", required=True)

    p_kscan = sub.add_parser("kscan", help="total iterations for a k range")
    p_kscan.add_argument("--problem", required=True)
    p_kscan.add_argument("--method", default="rgmres-ir")
    _add_precision_flags(p_kscan)
    _add_solver_flags(p_kscan)
    p_kscan.add_argument("--k-range", required=True,
                         help="LO:HI (inclusive) or comma list")
    p_kscan.add_argument("--out", required=True)
    p_kscan.add_argument("--format", default="csv",
                         choices=("csv", "markdown", "json"))

    p_gen = sub.add_parser("gen", help="write a generated matrix as .mtx")
    p_gen.add_argument("--problem", required=True)
    p_gen.add_argument("--n", type=int, default=100)
    p_gen.add_argument("--seed", type=int, default=1)
    p_gen.add_argument("--out", required=True)
    return parser


def _parse_k_range(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _precisions(args) -> PrecisionTriple:
    return PrecisionTriple.parse(args.uf, args.u, args.ur)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if getattr(args, "half_ftz", False):
        set_half_flush_subnormals(True)
    try:
        if args.command == "solve":
            ref = ProblemRef.parse(args.problem, n=args.n, seed=args.seed)
            a, b = ref.materialize()
            cfg = RefineConfig(
                precisions=_precisions(args),
                method=Method.parse(args.method),
                m=args.m,
                k=args.k,
                tau=args.tau,
                i_max=args.imax,
                scale_diag=args.scale_diag,
            )
            report = refine_solve(a, b, cfg)
            print(f"{ref.problem_id} {args.method}: {format_cell(report)}"
                  f"  nbe={report.nbe_final:.3e} ferr={report.ferr_final:.3e}"
                  + ("" if report.converged
                     else f"  [{report.divergence_reason.value}]"))
            if args.out:
                Path(args.out).write_text(
                    json.dumps(_report_payload(report), indent=2) + "\n",
                    encoding="ascii",
                )
            return 0

        if args.command == "sweep":
            problems: list[ProblemRef] = []
            if args.prolate:
                problems += [
                    ProblemRef("prolate", alpha=float(tok), n=args.n, seed=args.seed)
                    for tok in args.prolate.split(",") if tok.strip()
                ]
            if args.randsvd:
                problems += [
                    ProblemRef("randsvd", kappa2=float(tok), n=args.n, seed=args.seed)
                    for tok in args.randsvd.split(",") if tok.strip()
                ]
            if args.mtx:
                problems += [
                    ProblemRef("mtx", path=tok.strip(), n=args.n, seed=args.seed)
                    for tok in args.mtx.split(",") if tok.strip()
                ]
            spec = SweepSpec(
                problems=problems,
                methods=[Method.parse(tok) for tok in args.methods.split(",")],
                precisions=_precisions(args),
                m=args.m,
                k=args.k,
                tau=args.tau,
                i_max=args.imax,
                seed=args.seed,
                scale_diag=args.scale_diag,
                jobs=args.jobs,
            )
            rows = run_sweep(spec)
            emit(rows, args.format, args.out)
            for row in rows:
                print(f"{row['problem_id']:>16} {row['method']:>10}: {row['cell']}")
            return 0

        if args.command == "spectrum":
            ref = ProblemRef.parse(args.problem, n=args.n, seed=args.seed)
            a, _ = ref.materialize()
            names = spectrum_dump(a, Format.parse(args.uf), args.out)
            print(f"wrote {len(names)} point sets to {args.out}")
            return 0

        if args.command == "kscan":
            ref = ProblemRef.parse(args.problem, n=args.n, seed=args.seed)
            cfg = RefineConfig(
                precisions=_precisions(args),
                method=Method.parse(args.method),
                m=args.m,
                tau=args.tau,
                i_max=args.imax,
                scale_diag=args.scale_diag,
            )
            rows = kscan(ref, cfg, _parse_k_range(args.k_range))
            emit(rows, args.format, args.out)
            for row in rows:
                print(f"k={row['k']:>3}  total={row['total_inner']}")
            return 0

        if args.command == "gen":
            ref = ProblemRef.parse(args.problem, n=args.n, seed=args.seed)
            a, _ = ref.materialize()
            write_matrix_market(args.out, a, comment=ref.problem_id)
            print(f"wrote {ref.problem_id} ({a.shape[0]}x{a.shape[1]}) to {args.out}")
            return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
