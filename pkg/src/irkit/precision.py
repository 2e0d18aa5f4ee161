"""Simulated floating-point precisions and extended accumulation.

All values live in binary64 carriers.  A value "in format f" is a binary64
number that is exactly representable in f, i.e. the image of
``round_scalar(x, f)``.

Per-format arithmetic policy:

* ``DOUBLE`` and ``SINGLE`` are native IEEE arithmetic -- operations run in
  binary64 or binary32 hardware (BLAS/LAPACK in that precision), every
  result exactly representable in the format.
* ``HALF`` has no hardware arithmetic here and is simulated by rounding
  after every elementary operation (round to nearest, ties to even,
  subnormals kept by default; see :func:`set_half_flush_subnormals`).
  There is no fused multiply-add in the simulated path.  Reductions use a
  pairwise tree whose every partial sum is rounded to the format (the
  association order of a sum is not part of the contract).
* ``QUAD`` is emulated with double-double arithmetic (error-free
  transformations); its effective unit roundoff is about 2^-105, not the
  2^-113 of IEEE binary128 -- see the README for the caveat.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Format",
    "PrecisionContext",
    "PrecisionTriple",
    "DoubleDouble",
    "round_scalar",
    "round_array",
    "ctx_op",
    "extended_dot",
    "vdot",
    "vnorm2",
    "vaxpy",
    "vscale",
    "vadd",
    "vsub",
    "vsum",
    "mat_tvec",
    "matvec_fmt",
    "squared_format",
]


class Format(enum.Enum):
    """A floating-point format participating in a mixed-precision solve."""

    HALF = "half"
    SINGLE = "single"
    DOUBLE = "double"
    QUAD = "quad"

    @property
    def unit_roundoff(self) -> float:
        return _UNIT_ROUNDOFF[self]

    @property
    def significand_bits(self) -> int:
        return _SIGNIFICAND_BITS[self]

    @property
    def exponent_range(self) -> tuple[int, int]:
        """(emin, emax) of the normal range."""
        return _EXPONENT_RANGE[self]

    @classmethod
    def parse(cls, name: str) -> "Format":
        """Accept CLI/config spellings: "half", "single", "double", "quad"."""
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown format {name!r}; expected one of "
                f"{[f.value for f in cls]}"
            ) from None


_UNIT_ROUNDOFF = {
    Format.HALF: 2.0 ** -11,
    Format.SINGLE: 2.0 ** -24,
    Format.DOUBLE: 2.0 ** -53,
    # double-double emulation; effective value, not an IEEE format
    Format.QUAD: 2.0 ** -105,
}

_SIGNIFICAND_BITS = {
    Format.HALF: 11,
    Format.SINGLE: 24,
    Format.DOUBLE: 53,
    Format.QUAD: 106,
}

_EXPONENT_RANGE = {
    Format.HALF: (-14, 15),
    Format.SINGLE: (-126, 127),
    Format.DOUBLE: (-1022, 1023),
    Format.QUAD: (-1022, 1023),  # inherits the binary64 exponent range
}

_ROUND_DTYPE = {Format.HALF: np.float16, Format.SINGLE: np.float32}

# Process-wide half-precision subnormal handling.  True flushes results in
# (0, 2^-14) to signed zero after rounding, imitating flush-to-zero
# hardware; False keeps subnormals.  Divergence boundaries of half-
# factorization experiments are sensitive to this choice.
_HALF_FLUSH_TO_ZERO = False
_HALF_MIN_NORMAL = 2.0 ** -14


def set_half_flush_subnormals(enabled: bool) -> bool:
    """Toggle flush-to-zero for the half format; returns the old setting."""
    global _HALF_FLUSH_TO_ZERO
    old = _HALF_FLUSH_TO_ZERO
    _HALF_FLUSH_TO_ZERO = bool(enabled)
    return old


def half_flushes_subnormals() -> bool:
    return _HALF_FLUSH_TO_ZERO


@dataclass(frozen=True)
class PrecisionContext:
    """A rounding discipline under which kernels execute.

    Every arithmetic result produced under a HALF/SINGLE context is exactly
    representable in that format (subnormals included, overflow to +/-inf).
    A DOUBLE context is exact native binary64.  A QUAD context carries
    unevaluated double-double pairs inside extended operations.
    """

    format: Format

    @property
    def is_native(self) -> bool:
        return self.format is Format.DOUBLE

    @property
    def unit_roundoff(self) -> float:
        return self.format.unit_roundoff


CTX_HALF = PrecisionContext(Format.HALF)
CTX_SINGLE = PrecisionContext(Format.SINGLE)
CTX_DOUBLE = PrecisionContext(Format.DOUBLE)
CTX_QUAD = PrecisionContext(Format.QUAD)

_CTX_FOR_FORMAT = {
    Format.HALF: CTX_HALF,
    Format.SINGLE: CTX_SINGLE,
    Format.DOUBLE: CTX_DOUBLE,
    Format.QUAD: CTX_QUAD,
}


def context_for(fmt: Format) -> PrecisionContext:
    return _CTX_FOR_FORMAT[fmt]


def squared_format(fmt: Format) -> Format:
    """The format used to evaluate "precision u^2" operator applications."""
    if fmt is Format.HALF:
        return Format.SINGLE
    if fmt is Format.SINGLE:
        return Format.DOUBLE
    return Format.QUAD


@dataclass(frozen=True)
class PrecisionTriple:
    """Factorization / working / residual precisions of a refinement run."""

    uf: Format
    u: Format
    ur: Format

    def __post_init__(self) -> None:
        if not (
            self.uf.unit_roundoff
            >= self.u.unit_roundoff
            >= self.ur.unit_roundoff
        ):
            raise ValueError(
                "precisions must satisfy uf >= u >= ur in unit roundoff, got "
                f"({self.uf.value}, {self.u.value}, {self.ur.value})"
            )

    @classmethod
    def parse(cls, uf: str, u: str, ur: str) -> "PrecisionTriple":
        return cls(Format.parse(uf), Format.parse(u), Format.parse(ur))


# ---------------------------------------------------------------------------
# rounding
# ---------------------------------------------------------------------------

def round_scalar(x: float, fmt: Format) -> float:
    """Round ``x`` to the nearest value representable in ``fmt`` (ties even).

    Subnormals are kept; overflow saturates to +/-inf per IEEE round-to-
    nearest.  DOUBLE and QUAD return the carrier value unchanged.
    """
    if fmt is Format.DOUBLE or fmt is Format.QUAD:
        return float(x)
    with np.errstate(over="ignore", invalid="ignore"):
        r = float(np.float64(x).astype(_ROUND_DTYPE[fmt]))
    if fmt is Format.HALF and _HALF_FLUSH_TO_ZERO and 0.0 < abs(r) < _HALF_MIN_NORMAL:
        return math.copysign(0.0, r)
    return r


def round_array(x, fmt: Format) -> np.ndarray:
    """Elementwise :func:`round_scalar` on an array, kept in float64."""
    a = np.asarray(x, dtype=np.float64)
    if fmt is Format.DOUBLE or fmt is Format.QUAD:
        return a
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.astype(_ROUND_DTYPE[fmt]).astype(np.float64)
    if fmt is Format.HALF and _HALF_FLUSH_TO_ZERO:
        small = np.abs(out) < _HALF_MIN_NORMAL
        if np.any(small):
            out = np.where(small, np.copysign(0.0, out), out)
    return out


# ---------------------------------------------------------------------------
# double-double building blocks (work on floats and ndarrays alike)
# ---------------------------------------------------------------------------

_SPLITTER = 134217729.0  # 2**27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _quick_two_sum(a, b):
    # requires |a| >= |b| elementwise
    s = a + b
    return s, b - (s - a)


def _split(a):
    c = _SPLITTER * a
    big = c - a
    hi = c - big
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def dd_add(xh, xl, yh, yl):
    s, e = _two_sum(xh, yh)
    t, f = _two_sum(xl, yl)
    e = e + t
    s, e = _quick_two_sum(s, e)
    e = e + f
    return _quick_two_sum(s, e)


def dd_sub(xh, xl, yh, yl):
    return dd_add(xh, xl, -yh, -yl)


def dd_mul(xh, xl, yh, yl):
    p, e = _two_prod(xh, yh)
    e = e + (xh * yl + xl * yh)
    return _quick_two_sum(p, e)


def dd_mul_double(d, xh, xl):
    """(d, 0) * (xh, xl) with d a plain double."""
    p, e = _two_prod(d, xh)
    e = e + d * xl
    return _quick_two_sum(p, e)


def dd_div(xh, xl, yh, yl):
    q1 = xh / yh
    rh, rl = dd_sub(xh, xl, *dd_mul_double(q1, yh, yl))
    q2 = rh / yh
    rh, rl = dd_sub(rh, rl, *dd_mul_double(q2, yh, yl))
    q3 = rh / yh
    qh, ql = _quick_two_sum(q1, q2)
    return dd_add(qh, ql, q3, 0.0)


def dd_sqrt(xh, xl):
    if xh == 0.0 and xl == 0.0:
        return 0.0, 0.0
    y = math.sqrt(xh)
    y2h, y2l = _two_prod(y, y)
    dh, dl = dd_sub(xh, xl, y2h, y2l)
    return _quick_two_sum(y, (dh + dl) / (2.0 * y))


def dd_pairwise_sum(hi, lo, axis: int = 0):
    """Sum double-double entries along ``axis``; exact pair arithmetic."""
    hi = np.moveaxis(np.asarray(hi, dtype=np.float64), axis, 0)
    lo = np.moveaxis(np.asarray(lo, dtype=np.float64), axis, 0)
    while hi.shape[0] > 1:
        n = hi.shape[0]
        even = (n // 2) * 2
        sh, sl = dd_add(hi[0:even:2], lo[0:even:2], hi[1:even:2], lo[1:even:2])
        if n % 2:
            sh = np.concatenate([sh, hi[even:]], axis=0)
            sl = np.concatenate([sl, lo[even:]], axis=0)
        hi, lo = sh, sl
    return hi[0], lo[0]


def dd_dot(x, y):
    """Dot product with exact products and double-double accumulation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ph, pl = _two_prod(x, y)
    return dd_pairwise_sum(ph, pl, axis=0)


def dd_matvec(a, x):
    """A @ x accumulated in double-double; returns (hi, lo) arrays."""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    ph, pl = _two_prod(a, x[np.newaxis, :])
    return dd_pairwise_sum(ph, pl, axis=1)


class DoubleDouble:
    """An unevaluated hi+lo pair; reduced to binary64 on demand."""

    __slots__ = ("hi", "lo")

    def __init__(self, hi: float, lo: float = 0.0):
        self.hi = float(hi)
        self.lo = float(lo)

    @classmethod
    def from_float(cls, x: float) -> "DoubleDouble":
        return cls(float(x), 0.0)

    def __float__(self) -> float:
        return self.hi + self.lo

    def __repr__(self) -> str:
        return f"DoubleDouble({self.hi!r}, {self.lo!r})"

    def _coerce(self, other) -> "DoubleDouble":
        if isinstance(other, DoubleDouble):
            return other
        return DoubleDouble.from_float(other)

    def __add__(self, other):
        o = self._coerce(other)
        return DoubleDouble(*dd_add(self.hi, self.lo, o.hi, o.lo))

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return DoubleDouble(*dd_sub(self.hi, self.lo, o.hi, o.lo))

    def __rsub__(self, other):
        o = self._coerce(other)
        return DoubleDouble(*dd_sub(o.hi, o.lo, self.hi, self.lo))

    def __mul__(self, other):
        o = self._coerce(other)
        return DoubleDouble(*dd_mul(self.hi, self.lo, o.hi, o.lo))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        return DoubleDouble(*dd_div(self.hi, self.lo, o.hi, o.lo))

    def __rtruediv__(self, other):
        o = self._coerce(other)
        return DoubleDouble(*dd_div(o.hi, o.lo, self.hi, self.lo))

    def __neg__(self):
        return DoubleDouble(-self.hi, -self.lo)

    def __abs__(self):
        return -self if self.hi < 0 or (self.hi == 0 and self.lo < 0) else self

    def sqrt(self) -> "DoubleDouble":
        return DoubleDouble(*dd_sqrt(self.hi, self.lo))


Scalar = Union[float, DoubleDouble]


# ---------------------------------------------------------------------------
# elementary operations under a context
# ---------------------------------------------------------------------------

_BINARY_OPS = ("add", "sub", "mul", "div")


def ctx_op(op: str, a: Scalar, b: Scalar | None, ctx: PrecisionContext) -> Scalar:
    """One elementary operation under ``ctx``.

    For HALF/SINGLE the result is computed in the carrier and rounded to the
    context format; DOUBLE returns the carrier result; QUAD computes in
    double-double and returns an unevaluated :class:`DoubleDouble`.  ``sqrt``
    is unary (``b`` ignored).  Multiplies and adds always round separately;
    there is no fused multiply-add.
    """
    fmt = ctx.format
    if fmt is Format.QUAD:
        x = a if isinstance(a, DoubleDouble) else DoubleDouble.from_float(a)
        if op == "sqrt":
            return x.sqrt()
        y = b if isinstance(b, DoubleDouble) else DoubleDouble.from_float(b)
        if op == "add":
            return x + y
        if op == "sub":
            return x - y
        if op == "mul":
            return x * y
        if op == "div":
            return x / y
        raise ValueError(f"unknown operation {op!r}")

    a = float(a)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if op == "sqrt":
            r = math.sqrt(a) if a >= 0 else float("nan")
        else:
            if op not in _BINARY_OPS:
                raise ValueError(f"unknown operation {op!r}")
            b = float(b)
            if op == "add":
                r = a + b
            elif op == "sub":
                r = a - b
            elif op == "mul":
                r = a * b
            else:
                r = np.float64(a) / np.float64(b)  # IEEE inf on div by zero
    return round_scalar(r, fmt) if fmt is not Format.DOUBLE else float(r)


def extended_dot(x, y, ctx: PrecisionContext) -> Scalar:
    """Inner product accumulated entirely in ``ctx``.

    HALF/SINGLE round every product and every partial sum to the format;
    DOUBLE is native; QUAD returns the unreduced :class:`DoubleDouble` so
    callers decide where to round.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("extended_dot requires equal-length vectors")
    fmt = ctx.format
    if fmt is Format.QUAD:
        return DoubleDouble(*dd_dot(x, y))
    if fmt is Format.DOUBLE:
        return float(x @ y)
    if fmt is Format.SINGLE:
        return float(x.astype(np.float32) @ y.astype(np.float32))
    prods = round_array(x * y, fmt)
    return float(_pairwise_rounded_sum(prods, fmt))


# ---------------------------------------------------------------------------
# format-faithful vector algebra (used by all dense kernels)
# ---------------------------------------------------------------------------

def _pairwise_rounded_sum(a: np.ndarray, fmt: Format, axis: int = 0):
    """Pairwise sum with every partial sum rounded to ``fmt``.

    An odd trailing element is carried unchanged into the next level, so the
    reduction is deterministic for any length.
    """
    a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, 0)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:], dtype=np.float64) if a.ndim > 1 else 0.0
    while a.shape[0] > 1:
        n = a.shape[0]
        even = (n // 2) * 2
        s = round_array(a[0:even:2] + a[1:even:2], fmt)
        if n % 2:
            s = np.concatenate([s, a[even:]], axis=0)
        a = s
    return a[0]


def vsum(x, fmt: Format) -> float:
    if fmt is Format.DOUBLE or fmt is Format.QUAD:
        return float(np.sum(np.asarray(x, dtype=np.float64)))
    if fmt is Format.SINGLE:
        return float(np.sum(np.asarray(x, dtype=np.float32)))
    return float(_pairwise_rounded_sum(np.asarray(x, dtype=np.float64), fmt))


def vdot(x, y, fmt: Format) -> float:
    if fmt is Format.DOUBLE or fmt is Format.QUAD:
        return float(np.asarray(x) @ np.asarray(y))
    if fmt is Format.SINGLE:
        return float(
            np.asarray(x, dtype=np.float32) @ np.asarray(y, dtype=np.float32)
        )
    prods = round_array(np.asarray(x) * np.asarray(y), fmt)
    return float(_pairwise_rounded_sum(prods, fmt))


def vnorm2(x, fmt: Format) -> float:
    if fmt is Format.DOUBLE or fmt is Format.QUAD:
        return float(np.linalg.norm(np.asarray(x, dtype=np.float64)))
    if fmt is Format.SINGLE:
        return float(np.linalg.norm(np.asarray(x, dtype=np.float32)))
    return round_scalar(math.sqrt(vdot(x, x, fmt)), fmt)


def vscale(alpha: float, x, fmt: Format) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if fmt is Format.DOUBLE or fmt is Format.QUAD:
        return alpha * x
    if fmt is Format.SINGLE:
        return (np.float32(alpha) * x.astype(np.float32)).astype(np.float64)
    return round_array(alpha * x, fmt)


def vaxpy(alpha: float, x, y, fmt: Format) -> np.ndarray:
    """y + alpha*x with the multiply and the add rounded separately."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if fmt is Format.DOUBLE or fmt is Format.QUAD:
        return y + alpha * x
    if fmt is Format.SINGLE:
        out = y.astype(np.float32) + np.float32(alpha) * x.astype(np.float32)
        return out.astype(np.float64)
    return round_array(y + round_array(alpha * x, fmt), fmt)


def vadd(x, y, fmt: Format) -> np.ndarray:
    if fmt is Format.SINGLE:
        out = (
            np.asarray(x, dtype=np.float32) + np.asarray(y, dtype=np.float32)
        )
        return out.astype(np.float64)
    s = np.asarray(x, dtype=np.float64) + np.asarray(y, dtype=np.float64)
    if fmt is Format.DOUBLE or fmt is Format.QUAD:
        return s
    return round_array(s, fmt)


def vsub(x, y, fmt: Format) -> np.ndarray:
    if fmt is Format.SINGLE:
        out = (
            np.asarray(x, dtype=np.float32) - np.asarray(y, dtype=np.float32)
        )
        return out.astype(np.float64)
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    if fmt is Format.DOUBLE or fmt is Format.QUAD:
        return d
    return round_array(d, fmt)


def mat_tvec(m, r, fmt: Format) -> np.ndarray:
    """M^T r in the format's own arithmetic."""
    m = np.asarray(m, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if fmt is Format.DOUBLE or fmt is Format.QUAD:
        return m.T @ r
    if fmt is Format.SINGLE:
        out = m.astype(np.float32).T @ r.astype(np.float32)
        return np.atleast_1d(out.astype(np.float64))
    prods = round_array(m * r[:, np.newaxis], fmt)
    return np.atleast_1d(_pairwise_rounded_sum(prods, fmt, axis=0))


def matvec_fmt(m, y, fmt: Format) -> np.ndarray:
    """M @ y in the format's own arithmetic (column sweep when simulated)."""
    m = np.asarray(m, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if fmt is Format.DOUBLE or fmt is Format.QUAD:
        return m @ y
    if fmt is Format.SINGLE:
        return (m.astype(np.float32) @ y.astype(np.float32)).astype(np.float64)
    acc = np.zeros(m.shape[0], dtype=np.float64)
    for j in range(m.shape[1]):
        if y[j] == 0.0:
            continue  # exact no-op, safe to skip
        acc = round_array(acc + round_array(m[:, j] * y[j], fmt), fmt)
    return acc
