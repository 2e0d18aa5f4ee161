import math

import numpy as np
import pytest

from irkit.densela import cond_inf, eig_small
from irkit.matgen import (
    ParseError,
    ProlateSpec,
    RandSvdSpec,
    UnsupportedField,
    gen_prolate,
    gen_randsvd,
    read_matrix_market,
    rhs_ones,
    write_matrix_market,
)


class TestRandSvd:
    def test_singular_values_by_construction(self):
        a = gen_randsvd(RandSvdSpec(100, 1e12, seed=1))
        s = np.linalg.svd(a, compute_uv=False)
        assert s[0] == pytest.approx(1.0, rel=1e-10)
        assert s[-1] == pytest.approx(1e-12, rel=1e-6)
        ratios = s[:-1] / s[1:]
        assert np.allclose(ratios, ratios[0], rtol=1e-6)

    def test_prescribed_condition_number(self):
        a = gen_randsvd(RandSvdSpec(100, 1e12, seed=1))
        assert np.linalg.cond(a) == pytest.approx(1e12, rel=1e-6)

    def test_determinism(self):
        s = RandSvdSpec(40, 1e6, seed=7)
        a1 = gen_randsvd(s)
        a2 = gen_randsvd(s)
        assert np.array_equal(a1, a2)
        a3 = gen_randsvd(RandSvdSpec(40, 1e6, seed=8))
        assert not np.array_equal(a1, a3)

    def test_singular_values_via_gram_eigenvalues(self):
        spec = RandSvdSpec(8, 10.0, seed=2)
        a = gen_randsvd(spec)
        grams = eig_small(a.T @ a).values
        sv = np.sort(np.sqrt(np.abs(grams.real)))
        want = np.sort(spec.kappa2 ** (-np.arange(8) / 7.0))
        assert np.allclose(sv, want, rtol=1e3 * 2.0 ** -53 * 100)

    def test_validation(self):
        with pytest.raises(ValueError):
            RandSvdSpec(1, 10.0)
        with pytest.raises(ValueError):
            RandSvdSpec(10, 0.5)


class TestProlate:
    def test_closed_form_entries(self):
        a = gen_prolate(ProlateSpec(6, 0.475))
        assert np.all(np.diag(a) == 0.95)
        first_off = math.sin(2 * math.pi * 0.475) / math.pi
        assert a[0, 1] == pytest.approx(first_off, rel=1e-12)
        assert a[0, 1] == pytest.approx(0.0497871, rel=1e-5)

    def test_symmetry_and_toeplitz(self):
        a = gen_prolate(ProlateSpec(30, 0.44))
        assert np.array_equal(a, a.T)
        for d in range(30):
            band = np.diagonal(a, d)
            assert np.all(band == band[0])

    def test_reference_condition_numbers(self):
        a = gen_prolate(ProlateSpec(100, 0.475))
        assert cond_inf(a) == pytest.approx(1.21e6, rel=0.05)
        assert np.linalg.cond(a) == pytest.approx(3.60e5, rel=0.05)

    def test_eigenvalues_in_unit_interval(self):
        a = gen_prolate(ProlateSpec(100, 0.475))
        vals = eig_small(a).values
        assert np.max(np.abs(vals.imag)) < 1e-8
        assert np.all(vals.real > 0.0)
        assert np.all(vals.real < 1.0)

    def test_positive_definite_small(self):
        for alpha in (0.1, 0.25, 0.49):
            a = gen_prolate(ProlateSpec(40, alpha))
            assert np.min(np.linalg.eigvalsh(a)) > 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            ProlateSpec(10, 0.5)
        with pytest.raises(ValueError):
            ProlateSpec(0, 0.4)


class TestRhsOnes:
    def test_values(self):
        assert np.array_equal(rhs_ones(1), np.array([1.0]))
        assert np.array_equal(rhs_ones(3), np.ones(3))
        assert np.max(np.abs(rhs_ones(17))) == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            rhs_ones(0)


class TestMatrixMarket:
    def test_coordinate_general(self, tmp_path):
        p = tmp_path / "a.mtx"
        p.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "2 2 2\n"
            "1 1 1.5\n"
            "2 2 2.5\n"
        )
        a = read_matrix_market(p)
        assert np.array_equal(a, np.diag([1.5, 2.5]))

    def test_symmetric_expansion(self, tmp_path):
        p = tmp_path / "s.mtx"
        p.write_text(
            "%%MatrixMarket matrix coordinate real symmetric\n"
            "2 2 1\n"
            "2 1 3.0\n"
        )
        a = read_matrix_market(p)
        assert a[0, 1] == 3.0 and a[1, 0] == 3.0

    def test_duplicates_summed(self, tmp_path):
        p = tmp_path / "d.mtx"
        p.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "1 1 2\n"
            "1 1 1.0\n"
            "1 1 2.0\n"
        )
        assert read_matrix_market(p)[0, 0] == 3.0

    def test_array_format(self, tmp_path):
        p = tmp_path / "arr.mtx"
        p.write_text(
            "%%MatrixMarket matrix array real general\n"
            "2 2\n1.0\n2.0\n3.0\n4.0\n"
        )
        a = read_matrix_market(p)
        assert np.array_equal(a, np.array([[1.0, 3.0], [2.0, 4.0]]))

    def test_comments_and_blank_lines(self, tmp_path):
        p = tmp_path / "c.mtx"
        p.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "% a comment\n"
            "\n"
            "1 1 1\n"
            "1 1 4.0\n"
        )
        assert read_matrix_market(p)[0, 0] == 4.0

    def test_round_trip_exact(self, tmp_path):
        rng = np.random.Generator(np.random.Philox(4))
        a = rng.uniform(-1, 1, (7, 5))
        a[rng.uniform(size=(7, 5)) < 0.3] = 0.0
        p = tmp_path / "rt.mtx"
        write_matrix_market(p, a, comment="round trip")
        back = read_matrix_market(p)
        assert np.array_equal(a, back)

    def test_parse_error_carries_line_number(self, tmp_path):
        p = tmp_path / "bad.mtx"
        p.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "2 2 1\n"
            "1 oops 3.0\n"
        )
        with pytest.raises(ParseError) as info:
            read_matrix_market(p)
        assert info.value.line_no == 3

    def test_bad_header(self, tmp_path):
        p = tmp_path / "h.mtx"
        p.write_text("hello\n1 1 0\n")
        with pytest.raises(ParseError) as info:
            read_matrix_market(p)
        assert info.value.line_no == 1

    def test_unsupported_complex(self, tmp_path):
        p = tmp_path / "cx.mtx"
        p.write_text("%%MatrixMarket matrix coordinate complex general\n1 1 0\n")
        with pytest.raises(UnsupportedField):
            read_matrix_market(p)

    def test_unsupported_pattern(self, tmp_path):
        p = tmp_path / "pat.mtx"
        p.write_text("%%MatrixMarket matrix coordinate pattern general\n1 1 0\n")
        with pytest.raises(UnsupportedField):
            read_matrix_market(p)

    def test_out_of_range_index(self, tmp_path):
        p = tmp_path / "rng.mtx"
        p.write_text(
            "%%MatrixMarket matrix coordinate real general\n1 1 1\n2 1 1.0\n"
        )
        with pytest.raises(ParseError):
            read_matrix_market(p)

    def test_nnz_mismatch(self, tmp_path):
        p = tmp_path / "nnz.mtx"
        p.write_text(
            "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1.0\n"
        )
        with pytest.raises(ParseError):
            read_matrix_market(p)

    def test_integer_field_accepted(self, tmp_path):
        p = tmp_path / "int.mtx"
        p.write_text(
            "%%MatrixMarket matrix coordinate integer general\n1 1 1\n1 1 7\n"
        )
        assert read_matrix_market(p)[0, 0] == 7.0
