"""Shared independent oracles for the test suite.

These deliberately avoid the package's own arithmetic paths: a bit-level
binary16 rounder built from first principles, exact rational linear
algebra, and high-precision mpmath references.
"""

import math
from fractions import Fraction

import mpmath
import numpy as np

FP16_MAX = 65504.0


def fp16_round_oracle(x: float) -> float:
    """Round-to-nearest-even into IEEE binary16, from first principles."""
    if math.isnan(x):
        return math.nan
    if x == 0.0:
        return math.copysign(0.0, x)
    if math.isinf(x):
        return x
    sign = math.copysign(1.0, x)
    a = abs(x)
    if a >= 65536.0:
        return sign * math.inf
    _, e = math.frexp(a)  # a in [2^(e-1), 2^e)
    unbiased = e - 1
    if unbiased < -14:
        quantum = 2.0 ** -24  # subnormal spacing
    else:
        quantum = 2.0 ** (unbiased - 10)
    n = a / quantum  # exact: power-of-two scaling
    r = round(n) * quantum  # python round = ties to even, exact on floats
    if r > FP16_MAX:
        return sign * math.inf
    return sign * r


def exact_dot(x, y) -> Fraction:
    total = Fraction(0)
    for a, b in zip(x, y):
        total += Fraction(float(a)) * Fraction(float(b))
    return total


def exact_solve(a, b):
    """Gaussian elimination over exact rationals."""
    n = len(b)
    m = [[Fraction(float(v)) for v in row] + [Fraction(float(bb))]
         for row, bb in zip(a, b)]
    for k in range(n):
        p = max(range(k, n), key=lambda i: abs(m[i][k]))
        if m[p][k] == 0:
            raise ZeroDivisionError("singular matrix in exact solve")
        m[k], m[p] = m[p], m[k]
        for i in range(k + 1, n):
            f = m[i][k] / m[k][k]
            for j in range(k, n + 1):
                m[i][j] -= f * m[k][j]
    x = [Fraction(0)] * n
    for i in range(n - 1, -1, -1):
        acc = m[i][n]
        for j in range(i + 1, n):
            acc -= m[i][j] * x[j]
        x[i] = acc / m[i][i]
    return x


def charpoly_exact(a) -> list[Fraction]:
    """Characteristic polynomial coefficients (monic, descending powers)
    by the Faddeev-LeVerrier recurrence over exact rationals."""
    a = [[Fraction(float(v)) for v in row] for row in np.asarray(a)]
    n = len(a)
    ident = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]

    def matmul(x, y):
        return [
            [sum(x[i][l] * y[l][j] for l in range(n)) for j in range(n)]
            for i in range(n)
        ]

    def trace(x):
        return sum(x[i][i] for i in range(n))

    coeffs = [Fraction(1)]
    m = [row[:] for row in ident]
    for k in range(1, n + 1):
        m = matmul(a, m)
        c = -trace(m) / k
        coeffs.append(c)
        for i in range(n):
            m[i][i] += c
    return coeffs


def eig_oracle(a, prec: int = 256):
    """Eigenvalues as roots of the exact characteristic polynomial."""
    coeffs = charpoly_exact(a)
    with mpmath.workprec(prec):
        poly = [mpmath.mpf(c.numerator) / mpmath.mpf(c.denominator)
                for c in coeffs]
        roots = mpmath.polyroots(poly, maxsteps=200, extraprec=200)
        return sorted(
            (complex(r) for r in roots), key=lambda z: (abs(z), z.real, z.imag)
        )


def mp_solve(a, b, prec: int = 256):
    """High-precision linear solve via mpmath."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    with mpmath.workprec(prec):
        mat = mpmath.matrix([[mpmath.mpf(v) for v in row] for row in a])
        rhs = mpmath.matrix([mpmath.mpf(v) for v in b])
        sol = mpmath.lu_solve(mat, rhs)
        return [sol[i] for i in range(len(b))]


def mp_precond_apply(a, lower, upper, perm, v, prec: int = 256):
    """U^-1 L^-1 (A v)[perm] in high precision; returns mpmath vector."""
    a = np.asarray(a, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    with mpmath.workprec(prec):
        av = [
            mpmath.fsum(mpmath.mpf(a[i, j]) * mpmath.mpf(v[j])
                        for j in range(a.shape[1]))
            for i in range(a.shape[0])
        ]
        w = [av[p] for p in perm]
        n = len(w)
        # forward substitution, unit lower
        y = [mpmath.mpf(0)] * n
        for i in range(n):
            acc = w[i]
            for j in range(i):
                acc -= mpmath.mpf(lower[i, j]) * y[j]
            y[i] = acc
        x = [mpmath.mpf(0)] * n
        for i in range(n - 1, -1, -1):
            acc = y[i]
            for j in range(i + 1, n):
                acc -= mpmath.mpf(upper[i, j]) * x[j]
            x[i] = acc / mpmath.mpf(upper[i, i])
        return x
