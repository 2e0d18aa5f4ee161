"""Mixed-precision iterative refinement toolkit.

Dense linear solvers built from standard iterative refinement (SIR),
GMRES-based refinement (GMRES-IR / SGMRES-IR), and recycled-GMRES
refinement (RGMRES-IR / RSGMRES-IR) on top of simulated floating-point
precisions, plus an experiment harness for iteration-count studies.
"""

from irkit.precision import (
    DoubleDouble,
    Format,
    PrecisionContext,
    PrecisionTriple,
    ctx_op,
    extended_dot,
    round_array,
    round_scalar,
)
from irkit.densela import (
    EigenPairs,
    LUFactors,
    apply_preconditioned,
    cond_inf,
    eig_generalized,
    eig_small,
    inf_norm,
    lu_factor,
    lu_solve,
    qr_reduced,
    residual,
    two_norm,
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
from irkit.gmres import GmresConfig, GmresOutcome, gmres_solve
from irkit.gcrodr import GcrodrConfig, RecycleSpace, gcrodr_solve
from irkit.refine import (
    Method,
    RefineConfig,
    RefinementReport,
    check_convergence,
    gmres_ir,
    rgmres_ir,
    sir,
    solve,
)

__version__ = "0.1.0"
