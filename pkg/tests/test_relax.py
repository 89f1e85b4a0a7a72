import math

import numpy as np
import pytest

from conftest import disk_set
from sosmee.polyalg import Polynomial, monomial_basis
from sosmee.relax import (
    EPS_PSD,
    PseudomomentSolution,
    RelaxationError,
    SemialgebraicSet,
    build_structure,
    dirac_moments,
    linear_functional,
    lower_bound,
)
from sosmee.problems import random_linear_system, sysid_sme, uniform_ball


def interval(a=1.0):
    x = Polynomial.variable(1, 0)
    return SemialgebraicSet(1, [a * a - x ** 2])


def test_structure_unconstrained_n1():
    st = build_structure(SemialgebraicSet(1), 1)
    z = np.array([1.0, 2.0, 5.0])
    np.testing.assert_array_equal(st.moment_matrix(z), [[1.0, 2.0], [2.0, 5.0]])
    assert st.moment_entries[0, 0] == 0


def test_structure_sizes_disk_order2():
    st = build_structure(disk_set(), 2)
    assert st.moment_entries.shape == (6, 6)
    assert len(st.localizers) == 1 and st.localizers[0].size == 3


def test_structure_equality_rows():
    x = Polynomial.variables(2)
    st = build_structure(SemialgebraicSet(2, [], [x[0] - x[1]]), 1)
    assert st.equality_rows.shape == (3, len(monomial_basis(2, 2)))
    # the rows encode L(h), L(h x1), L(h x2): check on moments of a point with x1 = x2
    zs = dirac_moments([0.7, 0.7], 2, 1)
    np.testing.assert_allclose(st.equality_rows @ zs, 0.0, atol=1e-15)
    zs = dirac_moments([0.7, 0.1], 2, 1)
    assert np.abs(st.equality_rows @ zs).max() > 0.1


def test_structure_symmetric_by_construction():
    x = Polynomial.variables(3)
    S = SemialgebraicSet(3, [1 - x[0] ** 4 - x[1] ** 2, x[2]], [x[0] * x[1] - x[2]], 2.0)
    st = build_structure(S, 3)
    np.testing.assert_array_equal(st.moment_entries, st.moment_entries.T)
    z = np.random.default_rng(0).normal(size=st.nz)
    for i in range(len(st.localizers)):
        L = st.localizing_matrix(i, z)
        np.testing.assert_array_equal(L, L.T)
    # ball bound appended as the last localizer
    assert len(st.localizers) == 3


def test_structure_rejects_low_order():
    x = Polynomial.variable(1, 0)
    with pytest.raises(RelaxationError):
        build_structure(SemialgebraicSet(1, [1 - x ** 4]), 1)


def test_localizer_matches_dirac():
    # at a Dirac measure the localizer is g(x) [x][x]^T
    x = Polynomial.variables(2)
    g = 1 - x[0] ** 2 - 2 * x[1] ** 2
    st = build_structure(SemialgebraicSet(2, [g]), 2)
    p = np.array([0.3, -0.4])
    z = dirac_moments(p, 2, 2)
    v = monomial_basis(2, 1).evaluate(p)
    np.testing.assert_allclose(st.localizing_matrix(0, z), g(p) * np.outer(v, v), atol=1e-14)


def test_linear_functional_examples():
    p = np.array([0.25, -1.5])
    z = PseudomomentSolution(dirac_moments(p, 2, 1), 1, 2, "optimal")
    x = Polynomial.variables(2)
    assert linear_functional(z, Polynomial.constant(2, 1.0)) == 1.0
    assert linear_functional(z, x[0]) == 0.25
    # uniform measure on [-1, 1]: moments 1, 0, 1/3
    zu = PseudomomentSolution(np.array([1.0, 0.0, 1 / 3]), 1, 1, "optimal")
    assert math.isclose(linear_functional(zu, Polynomial.variable(1, 0) ** 2), 1 / 3)
    with pytest.raises(RelaxationError):
        linear_functional(zu, Polynomial.variable(1, 0) ** 3)


def test_lower_bound_convex_quadratic():
    bound, z = lower_bound(interval(), Polynomial.variable(1, 0) ** 2, 1)
    assert abs(bound) <= 1e-6
    assert abs(z.z[0] - 1) <= 1e-7


def test_lower_bound_linear_on_disk():
    x = Polynomial.variables(2)
    bound, z = lower_bound(disk_set(), x[0] + x[1], 1)
    assert abs(bound + math.sqrt(2)) <= 1e-5
    np.testing.assert_allclose(z.first_moments(), [-1 / math.sqrt(2)] * 2, atol=1e-4)


def test_lower_bound_quartic_vs_grid():
    t = Polynomial.variable(1, 0)
    f = (1 - t ** 2) * (t ** 2 - 4) + 0.3 * t
    S = SemialgebraicSet(1, [4 - t ** 2])
    bound, _ = lower_bound(S, f, 2)
    grid = np.arange(-2, 2 + 1e-4, 1e-4)
    assert bound <= f.evaluate_many(grid[:, None]).min() + 1e-4


def test_lower_bound_monotone_and_sound():
    rng = np.random.default_rng(3)
    x = Polynomial.variables(2)
    S = SemialgebraicSet(2, [1 - x[0] ** 2 - x[1] ** 2, x[0] * x[1] + 0.2])
    f = x[0] ** 3 - x[1] + x[0] * x[1] ** 2
    bounds = []
    for k in (2, 3, 4):
        b, z = lower_bound(S, f, k)
        bounds.append(b)
        assert abs(z.z[0] - 1) <= 1e-7
        assert np.linalg.eigvalsh(z.moment_matrix()).min() >= -EPS_PSD
    assert bounds[0] <= bounds[1] + 1e-6 and bounds[1] <= bounds[2] + 1e-6
    pts = uniform_ball(rng, 2, 1.0, 2000)
    pts = pts[S.violations(pts) <= 0]
    assert len(pts) >= 50
    assert np.all(f.evaluate_many(pts[:50]) >= bounds[-1] - 1e-6)


def test_lower_bound_infeasible_set():
    x = Polynomial.variable(1, 0)
    S = SemialgebraicSet(1, [1 - x ** 2, x - 2])
    with pytest.raises(RelaxationError):
        lower_bound(S, x, 1)


def test_set_json_round_trip(tmp_path):
    x = Polynomial.variables(2)
    S = SemialgebraicSet(2, [1 - x[0] ** 2], [x[0] - x[1] ** 2], 3.0)
    data = S.to_json()
    assert set(data) >= {"n", "ineq", "eq", "ball_bound"}
    T = SemialgebraicSet.from_json(data)
    assert T.n == 2 and T.ball_bound == 3.0
    assert T.inequalities[0].allclose(S.inequalities[0], 0.0)
    assert T.equalities[0].allclose(S.equalities[0], 0.0)


def test_ball_bound_appended():
    S = disk_set(ball_bound=2.0)
    polys = S.all_inequalities()
    assert len(polys) == 2
    assert math.isclose(polys[-1]([1.0, 1.0]), 4.0 - 2.0)


def test_translate_moves_set():
    S = disk_set()
    T = S.translate([3.0, -1.0])
    assert T.contains([3.5, -1.0]) and not T.contains([0.0, 0.0])


def test_sysid_moments_psd_on_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(3):
        data, theta = random_linear_system(2, 20, 0.1, rng)
        S = sysid_sme(data)
        x = Polynomial.variables(S.n)
        b, z = lower_bound(S, x[0], 1)
        assert b <= theta[0] + 1e-6
        assert abs(z.z[0] - 1) <= 1e-7
        assert np.linalg.eigvalsh(z.moment_matrix()).min() >= -EPS_PSD
