import math

import numpy as np
import pytest

from polylr.polybasis import DegreeError, Polynomial, build_basis, evaluate, index_of, multiply


def test_univariate_order():
    b = build_basis(1, 2)
    assert b.order == ((0,), (1,), (2,))
    assert b.size == 3


def test_bivariate_order_matches_listing():
    b = build_basis(2, 2)
    assert b.order == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


def test_trivariate_size():
    assert build_basis(3, 4).size == 35


@pytest.mark.parametrize("d", range(1, 5))
@pytest.mark.parametrize("n", range(0, 9))
def test_size_is_binomial(d, n):
    b = build_basis(d, n)
    assert b.size == math.comb(n + d, d)
    assert len(set(b.order)) == b.size
    assert all(np.diff(b.degrees()) >= 0)


def test_index_of():
    assert index_of(build_basis(1, 2), (2,)) == 2
    assert index_of(build_basis(2, 2), (1, 1)) == 4
    with pytest.raises((DegreeError, KeyError, ValueError)):
        index_of(build_basis(2, 2), (0, 3))


def test_index_of_inverts_order():
    for d, n in [(1, 6), (2, 4), (3, 3)]:
        b = build_basis(d, n)
        for i, m in enumerate(b.order):
            assert index_of(b, m) == i


def test_multiply_examples():
    b1, b2 = build_basis(1, 1), build_basis(1, 2)
    p = Polynomial(b1, [1, 1])
    q = Polynomial(b1, [1, -1])
    np.testing.assert_array_equal(multiply(p, q, b2).coeffs, [1, 0, -1])
    one = Polynomial.constant(build_basis(1, 0))
    np.testing.assert_array_equal(multiply(p, one, b1).coeffs, p.coeffs)
    s = Polynomial(build_basis(2, 1), [0, 1, 1])
    np.testing.assert_array_equal(multiply(s, s, build_basis(2, 2)).coeffs, [0, 0, 0, 1, 2, 1])


def test_multiply_degree_overflow():
    p = Polynomial(build_basis(1, 2), [0, 0, 1])
    with pytest.raises(DegreeError):
        multiply(p, p, build_basis(1, 3))


def test_evaluate_examples():
    b = build_basis(1, 1)
    assert evaluate(Polynomial(b, [1, 0.6]), 1.0) == pytest.approx(1.6)
    p = Polynomial(build_basis(2, 2), [0.7, 1, 2, 3, 4, 5])
    assert evaluate(p, [0.0, 0.0]) == 0.7
    xi = Polynomial(build_basis(1, 2), [0.9, 0.6, 0.1])
    assert evaluate(xi, -3.0) == pytest.approx(0.0, abs=1e-15)


def test_evaluate_many_points():
    p = Polynomial(build_basis(2, 1), [1, 2, 3])
    v = evaluate(p, np.array([[0, 0], [1, 1], [2, -1]]))
    np.testing.assert_allclose(v, [1, 6, 2])


def test_json_round_trip():
    p = Polynomial(build_basis(2, 3), np.arange(10.0))
    q = Polynomial.from_json(p.to_json())
    assert q.basis == p.basis
    np.testing.assert_array_equal(q.coeffs, p.coeffs)


def test_coefficient_length_checked():
    with pytest.raises(ValueError):
        Polynomial(build_basis(1, 2), [1, 2])


def test_embed_and_degree():
    p = Polynomial(build_basis(1, 1), [1, 2])
    e = p.embed(build_basis(1, 3))
    np.testing.assert_array_equal(e.coeffs, [1, 2, 0, 0])
    assert e.degree == 1
