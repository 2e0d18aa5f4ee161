import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import exact_dot, fp16_round_oracle
from irkit.precision import (
    CTX_DOUBLE,
    CTX_HALF,
    CTX_QUAD,
    CTX_SINGLE,
    DoubleDouble,
    Format,
    PrecisionContext,
    PrecisionTriple,
    ctx_op,
    extended_dot,
    round_array,
    round_scalar,
    set_half_flush_subnormals,
    squared_format,
)


def all_finite_fp16():
    bits = np.arange(1 << 16, dtype=np.uint16)
    vals = bits.view(np.float16).astype(np.float64)
    return vals[np.isfinite(vals)]


class TestFormats:
    def test_unit_roundoffs(self):
        assert Format.HALF.unit_roundoff == 2.0 ** -11
        assert Format.SINGLE.unit_roundoff == 2.0 ** -24
        assert Format.DOUBLE.unit_roundoff == 2.0 ** -53
        # published reference values
        assert Format.HALF.unit_roundoff == pytest.approx(4.88e-4, rel=1e-2)
        assert Format.SINGLE.unit_roundoff == pytest.approx(5.96e-8, rel=1e-2)
        assert Format.DOUBLE.unit_roundoff == pytest.approx(1.11e-16, rel=1e-2)
        # emulated quadruple: double-double effective roundoff
        assert Format.QUAD.unit_roundoff <= 2.0 ** -104

    def test_parse(self):
        assert Format.parse("half") is Format.HALF
        assert Format.parse(" Quad ") is Format.QUAD
        with pytest.raises(ValueError):
            Format.parse("fp8")

    def test_triple_ordering_enforced(self):
        PrecisionTriple.parse("half", "single", "double")
        with pytest.raises(ValueError):
            PrecisionTriple.parse("double", "single", "quad")

    def test_squared_format(self):
        assert squared_format(Format.SINGLE) is Format.DOUBLE
        assert squared_format(Format.DOUBLE) is Format.QUAD
        assert squared_format(Format.HALF) is Format.SINGLE


class TestRoundScalar:
    def test_exact_value(self):
        assert round_scalar(1.0, Format.HALF) == 1.0

    def test_tie_to_even_at_one(self):
        # midpoint between 1 and the next half-precision value 1 + 2^-10
        assert fp16_round_oracle(1.0 + 2.0 ** -11) == 1.0
        assert round_scalar(1.0 + 2.0 ** -11, Format.HALF) == 1.0

    def test_overflow_to_inf(self):
        x = 6.55e4 * 2.0
        assert fp16_round_oracle(x) == math.inf
        assert round_scalar(x, Format.HALF) == math.inf
        assert round_scalar(-x, Format.HALF) == -math.inf

    def test_double_identity(self):
        for x in (1.0, -3.7e300, 5e-324, math.inf):
            assert round_scalar(x, Format.DOUBLE) == x

    def test_matches_bit_level_oracle_on_random_values(self):
        rng = np.random.Generator(np.random.Philox(7))
        xs = np.concatenate(
            [
                rng.uniform(-1e5, 1e5, 300),
                rng.uniform(-1e-4, 1e-4, 300),
                rng.uniform(-7e4, 7e4, 300),
            ]
        )
        for x in xs:
            assert round_scalar(float(x), Format.HALF) == fp16_round_oracle(
                float(x)
            ), x

    def test_exactness_all_finite_fp16(self):
        vals = all_finite_fp16()
        assert vals.size == 63488
        out = round_array(vals, Format.HALF)
        assert np.array_equal(out, vals)

    def test_idempotence_all_finite_fp16(self):
        vals = all_finite_fp16()
        once = round_array(vals * (1 + 3e-4), Format.HALF)
        twice = round_array(once, Format.HALF)
        assert np.array_equal(once, twice)

    @given(st.floats(allow_nan=False, allow_infinity=False, width=64))
    @settings(max_examples=300, deadline=None)
    def test_idempotence_hypothesis(self, x):
        for fmt in (Format.HALF, Format.SINGLE):
            once = round_scalar(x, fmt)
            assert round_scalar(once, fmt) == once or math.isnan(once)

    @given(
        st.floats(-1e6, 1e6),
        st.floats(-1e6, 1e6),
    )
    @settings(max_examples=300, deadline=None)
    def test_monotonicity(self, x, y):
        lo, hi = min(x, y), max(x, y)
        for fmt in (Format.HALF, Format.SINGLE):
            assert round_scalar(lo, fmt) <= round_scalar(hi, fmt)

    def test_relative_error_bound_normal_range(self):
        rng = np.random.Generator(np.random.Philox(11))
        for fmt in (Format.HALF, Format.SINGLE):
            u = fmt.unit_roundoff
            x = rng.uniform(-1e3, 1e3, 2000)
            r = round_array(x, fmt)
            mask = np.abs(x) > 2.0 ** (fmt.exponent_range[0] + 2)
            err = np.abs(r[mask] - x[mask])
            assert np.all(err <= u * np.abs(x[mask]))

    def test_subnormals_kept_by_default(self):
        tiny = 2.0 ** -20  # subnormal in fp16
        assert round_scalar(tiny, Format.HALF) == tiny

    def test_flush_to_zero_toggle(self):
        tiny = 2.0 ** -20
        old = set_half_flush_subnormals(True)
        try:
            assert round_scalar(tiny, Format.HALF) == 0.0
            assert round_scalar(-tiny, Format.HALF) == 0.0
            out = round_array(np.array([tiny, 1.0, -tiny]), Format.HALF)
            assert list(out) == [0.0, 1.0, 0.0]
        finally:
            set_half_flush_subnormals(old)
        assert round_scalar(tiny, Format.HALF) == tiny


class TestCtxOp:
    def test_add_rounds_away_small_term(self):
        # 1 + 2^-12 sits below half the last-place gap at 1.0 in fp16
        assert fp16_round_oracle(1.0 + 2.0 ** -12) == 1.0
        assert ctx_op("add", 1.0, 2.0 ** -12, CTX_HALF) == 1.0

    def test_exact_product_single(self):
        assert ctx_op("mul", 3.0, 4.0, CTX_SINGLE) == 12.0

    def test_quad_add_keeps_low_part(self):
        r = ctx_op("add", 1.0, 2.0 ** -60, CTX_QUAD)
        assert isinstance(r, DoubleDouble)
        assert r.hi == 1.0 and r.lo == 2.0 ** -60

    def test_division_by_zero_propagates_inf(self):
        assert ctx_op("div", 1.0, 0.0, CTX_SINGLE) == math.inf
        assert ctx_op("div", -1.0, 0.0, CTX_DOUBLE) == -math.inf

    def test_sqrt(self):
        assert ctx_op("sqrt", 2.0, None, CTX_HALF) == round_scalar(
            math.sqrt(2.0), Format.HALF
        )
        r = ctx_op("sqrt", 2.0, None, CTX_QUAD)
        assert abs(float(r * r) - 2.0) < 1e-30

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            ctx_op("fma", 1.0, 2.0, CTX_DOUBLE)


class TestDoubleDouble:
    def test_roundtrip(self):
        d = DoubleDouble.from_float(3.5)
        assert float(d) == 3.5

    def test_mul_exactness(self):
        a = DoubleDouble.from_float(1.0 + 2.0 ** -30)
        b = DoubleDouble.from_float(1.0 - 2.0 ** -30)
        prod = a * b  # exactly 1 - 2^-60
        assert prod.hi == 1.0
        assert prod.lo == -(2.0 ** -60)

    def test_div_accuracy(self):
        q = DoubleDouble.from_float(1.0) / DoubleDouble.from_float(3.0)
        resid = float(q * DoubleDouble.from_float(3.0) - 1.0)
        assert abs(resid) < 1e-30
        assert abs(q.hi - 1.0 / 3.0) <= 2 ** -52

    def test_abs_neg(self):
        d = DoubleDouble(-2.0, 1e-20)
        assert float(abs(d)) == -float(d)


class TestExtendedDot:
    def test_unit_basis(self):
        e1 = np.zeros(4)
        e1[0] = 1.0
        for ctx in (CTX_HALF, CTX_SINGLE, CTX_DOUBLE):
            assert extended_dot(e1, e1, ctx) == 1.0
        assert float(extended_dot(e1, e1, CTX_QUAD)) == 1.0

    def test_small_exact_integers_half(self):
        x = np.ones(3)
        assert extended_dot(x, x, CTX_HALF) == 3.0

    def test_quad_retains_tiny_component(self):
        x = np.array([1.0, 1e-30])
        y = np.array([1.0, 1.0])
        r = extended_dot(x, y, CTX_QUAD)
        assert isinstance(r, DoubleDouble)
        assert r.hi == 1.0 and r.lo == 1e-30

    def test_quad_accuracy_against_exact_rational(self):
        rng = np.random.Generator(np.random.Philox(3))
        for _ in range(5):
            x = rng.uniform(-1.0, 1.0, 50)
            y = rng.uniform(-1.0, 1.0, 50)
            got = extended_dot(x, y, CTX_QUAD)
            exact = exact_dot(x, y)
            err = abs(Fraction(got.hi) + Fraction(got.lo) - exact)
            assert err <= abs(exact) * Fraction(1, 2 ** 100)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            extended_dot(np.ones(3), np.ones(4), CTX_DOUBLE)


def test_context_properties():
    assert CTX_DOUBLE.is_native
    assert not CTX_HALF.is_native
    assert PrecisionContext(Format.HALF).unit_roundoff == 2.0 ** -11
