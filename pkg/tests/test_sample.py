import math

import numpy as np
import pytest

from conftest import disk_set, rectangle_set
from sosmee.grcc import ChebyshevResult, ShapeMatrix
from sosmee.mee import Ellipsoid
from sosmee.polyalg import Polynomial
from sosmee.problems import sphere_set
from sosmee.relax import SemialgebraicSet
from sosmee.sample import (
    MEMBERSHIP_TOL,
    SampleBatch,
    SamplingError,
    estimate_shape,
    hit_and_run,
    rejection_sample,
    sample_covariance,
    uniform_in_ellipsoid,
)


def unit_ball(d=2, r=1.0):
    return Ellipsoid(np.eye(d) / r ** 2, np.zeros(d))


def normalized(M):
    return M / np.linalg.det(M) ** (1 / M.shape[0])


def test_uniform_in_ellipsoid_moments(rng):
    ell = Ellipsoid(np.diag([1 / 4, 1.0]), [1.0, -1.0])
    X = uniform_in_ellipsoid(ell, 200000, rng)
    assert np.all(ell.quadratic_form(X) <= 1 + 1e-12)
    np.testing.assert_allclose(X.mean(0), [1.0, -1.0], atol=0.01)
    # uniform in an ellipse with semi-axes (a, b): variances a^2/4, b^2/4
    np.testing.assert_allclose(np.diag(sample_covariance(X)), [1.0, 0.25], rtol=0.02)


# -- rejection -----------------------------------------------------------------------

def test_rejection_full_acceptance():
    b = rejection_sample(disk_set(), None, unit_ball(), 1000, seed=0)
    assert b.acceptance_rate == 1.0
    assert b.n == 1000 and b.method == "rejection"


def test_rejection_quarter_acceptance():
    b = rejection_sample(disk_set(), None, unit_ball(r=2.0), 10000, seed=7)
    assert abs(b.acceptance_rate - 0.25) <= 0.02
    assert b.trials == round(10000 / b.acceptance_rate)


def test_rejection_accepts_chebyshev_result():
    ball = ChebyshevResult(np.zeros(2), 4.0, np.eye(2), 1)
    b = rejection_sample(disk_set(), None, ball, 500, seed=1)
    assert abs(b.acceptance_rate - 0.25) <= 0.05


def test_rejection_projection():
    x = Polynomial.variables(3)
    S = SemialgebraicSet(3, [1 - x[0] ** 2 - x[1] ** 2 - x[2] ** 2])
    b = rejection_sample(S, [2, 0], unit_ball(3), 200, seed=2)
    assert b.d == 2
    assert np.all(np.sum(b.points ** 2, axis=1) <= 1 + 1e-12)


def test_rejection_seed_determinism():
    a = rejection_sample(disk_set(), None, unit_ball(r=2.0), 3000, seed=11, chunk=1000)
    b = rejection_sample(disk_set(), None, unit_ball(r=2.0), 3000, seed=11, chunk=1000)
    c = rejection_sample(disk_set(), None, unit_ball(r=2.0), 3000, seed=12, chunk=1000)
    np.testing.assert_array_equal(a.points, b.points)
    assert a.trials == b.trials
    assert not np.array_equal(a.points, c.points)


def test_rejection_aborts_on_thin_set():
    x = Polynomial.variables(2)
    thin = SemialgebraicSet(2, [1e-16 - x[0] ** 2 - x[1] ** 2])
    with pytest.raises(SamplingError) as err:
        rejection_sample(thin, None, unit_ball(), 10, seed=0, max_trials=200000)
    assert err.value.acceptance_rate < 1e-6
    assert err.value.trials == 200000


def test_rejection_needs_chart_for_equalities():
    with pytest.raises(SamplingError):
        rejection_sample(sphere_set(1.0, 2), None, unit_ball(r=2.0), 10)


def test_rejection_with_chart():
    # unit circle parametrised by angle
    def chart(Y):
        return np.c_[np.cos(Y[:, 0]), np.sin(Y[:, 0])]

    x = Polynomial.variables(2)
    arc = SemialgebraicSet(2, [x[1]], [x[0] ** 2 + x[1] ** 2 - 1])
    ell = Ellipsoid(np.eye(1) / math.pi ** 2, np.zeros(1))
    b = rejection_sample(arc, None, ell, 2000, seed=3, chart=chart)
    assert abs(b.acceptance_rate - 0.5) <= 0.05
    assert np.all(np.abs(np.sum(b.points ** 2, axis=1) - 1) <= 1e-12)


def test_rejection_bad_arguments():
    with pytest.raises(ValueError):
        rejection_sample(disk_set(), None, unit_ball(), 0)
    with pytest.raises(SamplingError):
        rejection_sample(disk_set(), None, unit_ball(1), 10)
    with pytest.raises(TypeError):
        rejection_sample(disk_set(), None, np.eye(2), 10)


# -- hit-and-run ------------------------------------------------------------------------

def test_hit_and_run_interval():
    x = Polynomial.variable(1, 0)
    b = hit_and_run(SemialgebraicSet(1, [1 - x ** 2]), 10000, seed=1)
    assert -0.03 <= b.points.mean() <= 0.03
    assert 0.30 <= b.points.var() <= 0.36


def test_hit_and_run_disk_mean_norm():
    b = hit_and_run(disk_set(), 10000, seed=1)
    assert abs(np.linalg.norm(b.points, axis=1).mean() - 2 / 3) <= 0.02


def test_hit_and_run_single_point():
    x = Polynomial.variables(2)
    point = SemialgebraicSet(2, [-(x[0] - 1) ** 2 - x[1] ** 2])
    b = hit_and_run(point, 50, seed=0, start=[1.0, 0.0])
    np.testing.assert_array_equal(b.points, np.tile([1.0, 0.0], (50, 1)))


def test_hit_and_run_rejects_nonconvex_and_bad_start():
    x = Polynomial.variables(2)
    annulus = SemialgebraicSet(2, [1 - x[0] ** 2 - x[1] ** 2, x[0] ** 2 + x[1] ** 2 - 0.25])
    with pytest.raises(ValueError):
        hit_and_run(annulus, 10)
    with pytest.raises(ValueError):
        hit_and_run(disk_set(), 10, start=[2.0, 0.0])
    with pytest.raises(ValueError):
        hit_and_run(SemialgebraicSet(2, [1 - x[0] ** 4]), 10)


def test_hit_and_run_seed_determinism():
    a = hit_and_run(rectangle_set(), 500, seed=5)
    b = hit_and_run(rectangle_set(), 500, seed=5)
    np.testing.assert_array_equal(a.points, b.points)


def test_hit_and_run_membership():
    x = Polynomial.variables(2)
    S = SemialgebraicSet(2, [1 - x[0] ** 2 - 4 * x[1] ** 2, x[0] + x[1], 0.9 - x[0]])
    b = hit_and_run(S, 5000, seed=2)
    assert S.violations(b.points).max() <= MEMBERSHIP_TOL


# -- shape estimate ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def rectangle_samples():
    ell = Ellipsoid(np.diag([1 / 8, 1 / 2]), np.zeros(2))
    return rejection_sample(rectangle_set(), None, ell, 100000, seed=0)


def test_rectangle_covariance(rectangle_samples):
    C = sample_covariance(rectangle_samples.points)
    np.testing.assert_allclose(np.diag(C), [4 / 3, 1 / 3], rtol=0.05)
    assert abs(C[0, 1]) <= 0.02


def test_rectangle_shape_frobenius(rectangle_samples):
    Q = estimate_shape(rectangle_samples)
    assert isinstance(Q, ShapeMatrix)
    assert math.isclose(np.linalg.det(Q.Q), 1.0, rel_tol=1e-10)
    truth = normalized(np.linalg.inv(np.diag([4 / 3, 1 / 3])))
    assert np.linalg.norm(Q.Q - truth) <= 0.05
    # covariance side of the same comparison
    C = Q.covariance
    assert np.linalg.norm(normalized(C) - normalized(np.diag([4 / 3, 1 / 3]))) <= 0.05


def test_hit_and_run_shape_frobenius():
    b = hit_and_run(rectangle_set(), 100000, seed=3, burn_in=1000)
    truth = normalized(np.linalg.inv(np.diag([4 / 3, 1 / 3])))
    assert np.linalg.norm(estimate_shape(b).Q - truth) <= 0.05


def test_shape_errors_and_regularisation(caplog):
    with pytest.raises(ValueError):
        estimate_shape(SampleBatch(np.ones((10, 2)), 0, "rejection"))
    with pytest.raises(ValueError):
        estimate_shape(SampleBatch(np.ones((2, 2)), 0, "rejection"))
    t = np.linspace(-1, 1, 50)
    flat = SampleBatch(np.c_[t, 2 * t], 0, "rejection")
    Q = estimate_shape(flat)
    assert Q.regularized
    assert "rank deficient" in caplog.text
    assert np.all(np.linalg.eigvalsh(Q.Q) > 0)


def test_batch_csv_round_trip(tmp_path, rng):
    b = SampleBatch(rng.normal(size=(20, 3)), 4, "hit_and_run")
    path = tmp_path / "s.csv"
    b.to_csv(path)
    assert path.read_text().splitlines()[0] == "xi0,xi1,xi2"
    back = SampleBatch.from_csv(path, seed=4, method="hit_and_run")
    np.testing.assert_array_equal(back.points, b.points)
    assert back.meta()["n"] == 20
    with pytest.raises(ValueError):
        SampleBatch(b.points, 0, "gibbs")
