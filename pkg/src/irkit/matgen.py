"""Test problem construction and Matrix Market ingestion.

Builds random dense matrices with geometrically distributed singular values
and a prescribed 2-norm condition number, symmetric ill-conditioned prolate
Toeplitz matrices, the all-ones right-hand side, and dense matrices read
from Matrix Market files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RandSvdSpec",
    "ProlateSpec",
    "ParseError",
    "UnsupportedField",
    "gen_randsvd",
    "gen_prolate",
    "rhs_ones",
    "read_matrix_market",
    "write_matrix_market",
]


class ParseError(Exception):
    """Malformed Matrix Market input; carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class UnsupportedField(Exception):
    """Matrix Market field/symmetry this reader does not accept."""


@dataclass(frozen=True)
class RandSvdSpec:
    """Random dense matrix with geometric singular values sigma_1=1 .. 1/kappa2."""

    n: int
    kappa2: float
    seed: int = 1

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("randsvd needs n >= 2")
        if self.kappa2 <= 1.0:
            raise ValueError("randsvd needs kappa2 > 1")


@dataclass(frozen=True)
class ProlateSpec:
    """Symmetric Toeplitz matrix with parameter 0 < alpha < 0.5."""

    n: int
    alpha: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("prolate needs n >= 1")
        if not (0.0 < self.alpha < 0.5):
            raise ValueError("prolate needs alpha in (0, 0.5)")


def _haar_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    # QR of a Gaussian matrix with the R diagonal signs fixed is Haar
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return q * signs[np.newaxis, :]


def gen_randsvd(spec: RandSvdSpec) -> np.ndarray:
    """A = P diag(sigma) Q^T with sigma_i = kappa2^(-(i-1)/(n-1)).

    P and Q are independent Haar-distributed orthogonal factors drawn from a
    counter-based Philox stream, so the construction is deterministic in
    ``spec.seed`` (the stream is this package's own; only the distribution
    is standard).
    """
    rng = np.random.Generator(np.random.Philox(spec.seed))
    n = spec.n
    sigma = spec.kappa2 ** (-np.arange(n) / (n - 1))
    p = _haar_orthogonal(rng, n)
    q = _haar_orthogonal(rng, n)
    return (p * sigma[np.newaxis, :]) @ q.T


def gen_prolate(spec: ProlateSpec) -> np.ndarray:
    """Symmetric Toeplitz: diag 2*alpha, off-diag sin(2 pi alpha d)/(pi d)."""
    n, alpha = spec.n, spec.alpha
    d = np.arange(1, n)
    first = np.empty(n)
    first[0] = 2.0 * alpha
    first[1:] = np.sin(2.0 * math.pi * alpha * d) / (math.pi * d)
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return first[idx]


def rhs_ones(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("rhs_ones needs n >= 1")
    return np.ones(n)


# ---------------------------------------------------------------------------
# Matrix Market
# ---------------------------------------------------------------------------

_SUPPORTED_FIELDS = {"real", "integer"}
_SUPPORTED_SYMMETRY = {"general", "symmetric"}


def read_matrix_market(path) -> np.ndarray:
    """Read a real coordinate/array Matrix Market file as a dense matrix.

    Symmetric storage is expanded; duplicate coordinate entries are summed.
    Raises :class:`ParseError` with a line number on malformed input and
    :class:`UnsupportedField` for complex/pattern data.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.readlines()
    if not lines:
        raise ParseError(1, "empty file")

    header = lines[0].split()
    if len(header) < 5 or header[0] not in ("%%MatrixMarket", "%MatrixMarket"):
        raise ParseError(1, "missing %%MatrixMarket header")
    obj, layout, field, symmetry = (tok.lower() for tok in header[1:5])
    if obj != "matrix":
        raise ParseError(1, f"unsupported object {obj!r}")
    if layout not in ("coordinate", "array"):
        raise ParseError(1, f"unsupported layout {layout!r}")
    if field not in _SUPPORTED_FIELDS:
        raise UnsupportedField(f"field {field!r} is not supported")
    if symmetry not in _SUPPORTED_SYMMETRY:
        raise UnsupportedField(f"symmetry {symmetry!r} is not supported")

    # first non-comment, non-blank line after the header is the size line
    i = 1
    while i < len(lines) and (lines[i].startswith("%") or not lines[i].strip()):
        i += 1
    if i == len(lines):
        raise ParseError(len(lines), "missing size line")
    size_tokens = lines[i].split()
    size_line = i + 1

    def parse_int(tok: str, line_no: int) -> int:
        try:
            return int(tok)
        except ValueError:
            raise ParseError(line_no, f"expected integer, got {tok!r}") from None

    if layout == "coordinate":
        if len(size_tokens) != 3:
            raise ParseError(size_line, "coordinate size line needs rows cols nnz")
        rows = parse_int(size_tokens[0], size_line)
        cols = parse_int(size_tokens[1], size_line)
        nnz = parse_int(size_tokens[2], size_line)
        a = np.zeros((rows, cols))
        seen = 0
        for j in range(i + 1, len(lines)):
            text = lines[j].strip()
            if not text or text.startswith("%"):
                continue
            toks = text.split()
            if len(toks) != 3:
                raise ParseError(j + 1, "expected 'row col value'")
            r = parse_int(toks[0], j + 1)
            c = parse_int(toks[1], j + 1)
            try:
                v = float(toks[2])
            except ValueError:
                raise ParseError(j + 1, f"bad value {toks[2]!r}") from None
            if not (1 <= r <= rows and 1 <= c <= cols):
                raise ParseError(j + 1, f"index ({r},{c}) out of range")
            a[r - 1, c - 1] += v  # duplicates sum
            if symmetry == "symmetric" and r != c:
                a[c - 1, r - 1] += v
            seen += 1
        if seen != nnz:
            raise ParseError(len(lines), f"expected {nnz} entries, found {seen}")
        return a

    # array layout: column-major dense values
    if len(size_tokens) != 2:
        raise ParseError(size_line, "array size line needs rows cols")
    rows = parse_int(size_tokens[0], size_line)
    cols = parse_int(size_tokens[1], size_line)
    values = []
    for j in range(i + 1, len(lines)):
        text = lines[j].strip()
        if not text or text.startswith("%"):
            continue
        try:
            values.append(float(text.split()[0]))
        except ValueError:
            raise ParseError(j + 1, f"bad value {text!r}") from None
    if symmetry == "symmetric":
        expected = rows * (rows + 1) // 2
        if rows != cols or len(values) != expected:
            raise ParseError(len(lines), f"expected {expected} entries for symmetric array")
        a = np.zeros((rows, cols))
        it = iter(values)
        for c in range(cols):
            for r in range(c, rows):
                v = next(it)
                a[r, c] = v
                a[c, r] = v
        return a
    if len(values) != rows * cols:
        raise ParseError(len(lines), f"expected {rows * cols} entries, found {len(values)}")
    return np.array(values).reshape((cols, rows)).T


def write_matrix_market(path, a, comment: str | None = None) -> None:
    """Write a dense matrix in coordinate/general format (zeros dropped)."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("write_matrix_market requires a 2-D matrix")
    rows, cols = a.shape
    rr, cc = np.nonzero(a)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{rows} {cols} {len(rr)}\n")
        for r, c in zip(rr, cc):
            fh.write(f"{r + 1} {c + 1} {a[r, c]!r}\n")
