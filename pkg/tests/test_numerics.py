import math

import numpy as np
import pytest

from momrev.errors import ShapeError, ValidationError
from momrev.numerics import MAX_DIM, as_matrix, eigenvalues, matrix_exp, minimize_scalar


def _char_poly(m):
    # Faddeev-LeVerrier: coefficients from traces of matrix products only
    n = m.shape[0]
    coeffs = [1.0]
    acc = np.zeros_like(m)
    for k in range(1, n + 1):
        acc = m @ acc + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(m @ acc) / k)
    return np.array(coeffs)


def _same_multiset(a, b, tol):
    a, b = list(np.asarray(a, dtype=complex)), list(np.asarray(b, dtype=complex))
    assert len(a) == len(b)
    for value in a:
        j = int(np.argmin([abs(value - other) for other in b]))
        assert abs(value - b[j]) <= tol * max(1.0, abs(value)), (value, b)
        b.pop(j)


class TestAsMatrix:
    def test_rejects_vectors(self):
        with pytest.raises(ShapeError):
            as_matrix(np.ones(3))

    def test_rejects_rectangular(self):
        with pytest.raises(ShapeError):
            as_matrix(np.ones((2, 3)))
        assert as_matrix(np.ones((2, 3)), square=False).shape == (2, 3)

    def test_rejects_large(self):
        with pytest.raises(ShapeError):
            as_matrix(np.eye(MAX_DIM + 1))

    def test_rejects_nan(self):
        with pytest.raises(ValidationError):
            as_matrix([[1.0, np.nan], [0.0, 1.0]])


class TestEigenvalues:
    def test_diagonal(self):
        spec = eigenvalues(np.diag([3.0, -1.0, 2.0]))
        np.testing.assert_allclose(spec.real(), [-1.0, 2.0, 3.0])
        assert len(spec) == 3

    def test_rotation_has_no_real_part(self):
        spec = eigenvalues([[0.0, -1.0], [1.0, 0.0]])
        assert spec.real().size == 0
        np.testing.assert_allclose(spec.sorted(), [-1j, 1j], atol=1e-12)

    def test_groups_count_multiplicity(self):
        groups = eigenvalues(np.diag([-2.0, -2.0, 1.0])).real_groups()
        assert [m for _, m in groups] == [2, 1]
        assert groups[0][0] == pytest.approx(-2.0)

    def test_empty(self):
        assert len(eigenvalues(np.zeros((0, 0)))) == 0

    def test_matches_characteristic_polynomial_roots(self, rng):
        for _ in range(20):
            m = rng.standard_normal((4, 4))
            _same_multiset(eigenvalues(m).sorted(), np.roots(_char_poly(m)), tol=1e-8)

    def test_conjugate_pairs(self, rng):
        for d in (2, 3, 5, 8):
            spec = eigenvalues(rng.standard_normal((d, d))).sorted()
            conj = np.conj(spec)
            np.testing.assert_allclose(conj[np.lexsort((conj.imag, conj.real))], spec, atol=1e-9)

    def test_exponential_maps_spectrum(self, rng):
        for _ in range(20):
            m = rng.standard_normal((4, 4))
            _same_multiset(eigenvalues(matrix_exp(m)).sorted(), np.exp(eigenvalues(m).sorted()), tol=1e-6)



class TestMatrixExp:
    def test_zero_and_diagonal(self):
        np.testing.assert_allclose(matrix_exp(np.zeros((3, 3))), np.eye(3))
        np.testing.assert_allclose(matrix_exp(np.diag([0.0, 1.0])), np.diag([1.0, np.e]), rtol=1e-12)

    def test_nilpotent(self):
        np.testing.assert_allclose(matrix_exp([[0.0, 2.5], [0.0, 0.0]]), [[1.0, 2.5], [0.0, 1.0]], atol=1e-14)

    def test_det_is_exp_trace(self, rng):
        for _ in range(50):
            m = rng.standard_normal((4, 4))
            m *= rng.uniform(0.0, 5.0) / np.linalg.norm(m, 2)
            det = np.linalg.det(matrix_exp(m))
            assert det == pytest.approx(np.exp(np.trace(m)), rel=1e-8)


class TestMinimizeScalar:
    def test_quadratic(self):
        x, fx = minimize_scalar(lambda t: (t - 2.0) ** 2, 0.0, 5.0)
        assert x == pytest.approx(2.0, abs=1e-8)
        assert fx == pytest.approx(0.0, abs=1e-15)

    def test_cosine(self):
        x, fx = minimize_scalar(math.cos, 0.0, 2.0 * math.pi)
        assert x == pytest.approx(math.pi, abs=1e-6)
        assert fx == pytest.approx(-1.0, abs=1e-14)


    def test_minimum_at_edge(self):
        x, _ = minimize_scalar(lambda t: t, 0.0, 1.0)
        assert x == pytest.approx(0.0, abs=1e-2)

    def test_bad_arguments(self):
        with pytest.raises(ValidationError):
            minimize_scalar(lambda t: t, 1.0, 0.0)
        with pytest.raises(ValidationError):
            minimize_scalar(lambda t: t, 0.0, 1.0, grid=10)
