import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sosmee.polyalg import (
    MonomialBasis,
    Polynomial,
    basis_size,
    degree,
    evaluate,
    grlex_key,
    monomial_basis,
    multiply,
)


def random_poly(rng, n, d, density=0.7):
    terms = {a: rng.normal() for a in monomial_basis(n, d) if rng.random() < density}
    return Polynomial(n, terms)


def term_sum(p, x):
    # independent oracle: plain loop over terms
    total = 0.0
    for alpha, c in p.items():
        m = 1.0
        for xi, a in zip(x, alpha):
            m *= xi ** a
        total += c * m
    return total


def test_basis_n2_d2_order():
    B = monomial_basis(2, 2)
    assert list(B) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def test_basis_degree_zero():
    assert list(monomial_basis(5, 0)) == [(0,) * 5]


def test_basis_n3_d2_matches_enumeration():
    brute = [a for a in product(range(3), repeat=3) if sum(a) <= 2]
    assert len(monomial_basis(3, 2)) == len(brute) == 10


@given(st.integers(1, 5), st.integers(0, 5))
def test_basis_size_is_binomial(n, d):
    B = monomial_basis(n, d)
    assert len(B) == math.comb(n + d, d) == basis_size(n, d)
    assert B[0] == (0,) * n


@given(st.integers(1, 4), st.integers(0, 4))
def test_basis_sorted_grlex_without_duplicates(n, d):
    B = list(monomial_basis(n, d))
    assert len(set(B)) == len(B)
    keys = [grlex_key(a) for a in B]
    assert keys == sorted(keys)
    assert [degree(a) for a in B] == sorted(degree(a) for a in B)


def test_basis_rejects_bad_sizes():
    with pytest.raises(ValueError):
        MonomialBasis(0, 2)
    with pytest.raises(ValueError):
        MonomialBasis(2, -1)


def test_evaluate_hand_example():
    x1, x2 = Polynomial.variables(2)
    assert evaluate(x1 ** 2 + x2, [2.0, 1.0]) == 5.0


def test_evaluate_zero_polynomial():
    z = Polynomial(3, {})
    assert z.is_zero
    assert z.degree == 0
    assert evaluate(z, [1.0, -2.0, 7.0]) == 0.0


def test_evaluate_matches_term_sum(rng):
    p = random_poly(rng, 3, 3)
    for _ in range(20):
        x = rng.uniform(-2, 2, 3)
        assert math.isclose(evaluate(p, x), term_sum(p, x), rel_tol=1e-12, abs_tol=1e-12)
    X = rng.uniform(-2, 2, (20, 3))
    np.testing.assert_allclose(p.evaluate_many(X), [term_sum(p, x) for x in X], rtol=1e-12, atol=1e-12)


def test_evaluate_dimension_mismatch():
    p = Polynomial.variable(2, 0)
    with pytest.raises(ValueError):
        evaluate(p, [1.0, 2.0, 3.0])


def test_multiply_examples():
    x1, x2 = Polynomial.variables(2)
    assert multiply(x1, x1).allclose(Polynomial(2, {(2, 0): 1.0}))
    assert multiply(1 + x1, 1 - x1).allclose(1 - x1 ** 2)


def test_multiply_random_quadratics_at_points(rng):
    p, q = random_poly(rng, 2, 2, 1.0), random_poly(rng, 2, 2, 1.0)
    pq = multiply(p, q)
    assert pq.degree == 4
    for x in rng.uniform(-1.5, 1.5, (25, 2)):
        assert math.isclose(evaluate(pq, x), evaluate(p, x) * evaluate(q, x), rel_tol=1e-10, abs_tol=1e-10)


def test_multiply_dimension_mismatch():
    with pytest.raises(ValueError):
        multiply(Polynomial.variable(2, 0), Polynomial.variable(3, 0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(0, 3), st.integers(0, 3))
def test_product_evaluates_to_product(seed, n, dp, dq):
    rng = np.random.default_rng(seed)
    p, q = random_poly(rng, n, dp, 1.0), random_poly(rng, n, dq, 1.0)
    pq = p * q
    if not p.is_zero and not q.is_zero:
        assert pq.degree == p.degree + q.degree
    X = rng.uniform(-1, 1, (100, n))
    lhs = pq.evaluate_many(X)
    rhs = p.evaluate_many(X) * q.evaluate_many(X)
    assert np.all(np.abs(lhs - rhs) <= 1e-10 * (1 + np.abs(rhs)))


def test_canonical_form_drops_tiny_and_merges():
    p = Polynomial(2, [((1, 0), 1.0), ((1, 0), 2.0), ((0, 1), 1e-16)])
    assert dict(p.items()) == {(1, 0): 3.0}


def test_json_round_trip(rng):
    p = random_poly(rng, 3, 3)
    data = p.to_json()
    assert data["n"] == 3 and {"exp", "coef"} <= set(data["terms"][0])
    assert Polynomial.from_json(data).allclose(p, atol=0.0)


def test_quadratic_constructor_and_hessian():
    A = np.array([[2.0, 1.0], [1.0, -3.0]])
    p = Polynomial.quadratic(A, [1.0, -1.0], 4.0)
    x = np.array([0.3, -0.7])
    assert math.isclose(p(x), x @ A @ x + 2 * np.array([1.0, -1.0]) @ x + 4.0)
    np.testing.assert_allclose(p.hessian_of_quadratic_part(), 2 * A)


def test_substitute_composes(rng):
    p = random_poly(rng, 2, 3)
    y = Polynomial.variables(3)
    images = [y[0] * y[1] + 1, y[2] - 0.5 * y[0]]
    comp = p.substitute(images)
    for v in rng.uniform(-1, 1, (10, 3)):
        inner = [evaluate(f, v) for f in images]
        assert math.isclose(comp(v), p(inner), rel_tol=1e-10, abs_tol=1e-10)


def test_affine_substitute(rng):
    p = random_poly(rng, 2, 2)
    shift, scale = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    q = p.affine_substitute(shift, scale)
    y = rng.normal(size=2)
    assert math.isclose(q(y), p(shift + scale * y), rel_tol=1e-10, abs_tol=1e-10)
