import math

import numpy as np
import pytest

from sosmee.polyalg import Polynomial
from sosmee.relax import AssumptionError, SemialgebraicSet
from sosmee.so3 import (
    RotationBallResult,
    align_signs,
    axis_angle,
    cap_radius,
    exp_chart,
    geodesic_ball_set,
    geodesic_distance,
    log_chart,
    quat_inverse,
    quat_ops,
    quat_product,
    quat_to_rot,
    quaternion_distance,
    random_quaternion,
    reference_quaternion,
    rot_to_quat,
    rot_z,
    rotation_ball,
    rotation_polynomials,
    sample_geodesic_ball,
    sphere_distance,
    unit_norm_polynomial,
)


def axis_angle_matrix(axis, angle):
    # Rodrigues formula as an independent oracle
    k = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def finite_z_rotations(angles):
    """Rotations about z at the given angles, as equalities in q on the q0 >= 0 side."""
    x = Polynomial.variables(4)
    h = Polynomial.constant(4, 1.0)
    for a in angles:
        h = h * (x[3] - math.sin(a / 2))
    return SemialgebraicSet(4, [], [x[1], x[2], unit_norm_polynomial(), h])


def test_identity_quaternion():
    np.testing.assert_array_equal(quat_to_rot([1.0, 0, 0, 0]), np.eye(3))


def test_quarter_turn_about_z():
    q = [math.cos(math.pi / 4), 0, 0, math.sin(math.pi / 4)]
    np.testing.assert_allclose(quat_to_rot(q), axis_angle_matrix([0, 0, 1], math.pi / 2), atol=1e-15)


def test_random_rotations_orthogonal(rng):
    for q in random_quaternion(rng, 100):
        R = quat_to_rot(q)
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(R) - 1) <= 1e-12
        np.testing.assert_array_equal(R, quat_to_rot(-q))


def test_non_unit_rejected():
    with pytest.raises(ValueError):
        quat_to_rot([1.0, 1.0, 0, 0])


def test_axis_angle_matches_rodrigues(rng):
    for _ in range(20):
        axis = rng.normal(size=3)
        ang = rng.uniform(0, math.pi)
        np.testing.assert_allclose(quat_to_rot(axis_angle(axis, ang)), axis_angle_matrix(axis, ang), atol=1e-12)


def test_rot_to_quat_round_trip(rng):
    for q in random_quaternion(rng, 100):
        p = rot_to_quat(quat_to_rot(q))
        assert p[0] >= 0
        np.testing.assert_allclose(p, q if q[0] >= 0 else -q, atol=1e-12)


def test_product_and_inverse(rng):
    a = random_quaternion(rng)
    np.testing.assert_allclose(quat_product(a, [1.0, 0, 0, 0]), a)
    c, s = math.cos(0.3), math.sin(0.3)
    np.testing.assert_array_equal(quat_inverse([c, s, 0, 0]), [c, -s, 0, 0])
    ops = quat_ops(a, a)
    np.testing.assert_allclose(quat_product(a, ops["inverse"]), [1.0, 0, 0, 0], atol=1e-15)
    for a, b in zip(random_quaternion(rng, 100), random_quaternion(rng, 100)):
        R = quat_to_rot(quat_product(a, b))
        assert np.linalg.norm(R - quat_to_rot(a) @ quat_to_rot(b)) <= 1e-12


def test_geodesic_distance_examples():
    R = quat_to_rot(random_quaternion(np.random.default_rng(0)))
    assert geodesic_distance(R, R) <= 1e-7
    assert abs(geodesic_distance(np.eye(3), rot_z(0.3)) - 0.3) <= 1e-12
    # clamping guard near pi
    assert abs(geodesic_distance(np.eye(3), rot_z(math.pi)) - math.pi) <= 1e-7


def test_distance_equivalence_random_pairs(rng):
    for a, b in zip(random_quaternion(rng, 100), random_quaternion(rng, 100)):
        dm = geodesic_distance(quat_to_rot(a), quat_to_rot(b))
        dq = quaternion_distance(a, b)
        assert abs(dm - dq) <= 1e-10
        assert abs(dm - geodesic_distance(quat_to_rot(b), quat_to_rot(a))) <= 1e-12


def test_chordal_to_geodesic_conversion(rng):
    mu = random_quaternion(rng)
    for q in align_signs(random_quaternion(rng, 200), mu):
        c = np.linalg.norm(mu - q)
        assert abs(sphere_distance(mu, q) - 2 * math.asin(c / 2)) <= 1e-10
        assert abs(quaternion_distance(mu, q) - 2 * sphere_distance(mu, q)) <= 1e-10


def test_rotation_polynomials_match_matrix(rng):
    Rq = rotation_polynomials()
    for q in random_quaternion(rng, 100):
        R = np.array([[Rq[i, j](q) for j in range(3)] for i in range(3)])
        np.testing.assert_allclose(R, quat_to_rot(q), atol=1e-14)
    assert all(Rq[i, j].degree == 2 for i in range(3) for j in range(3))


def test_reference_single_sample(rng):
    q = random_quaternion(rng)
    ref = reference_quaternion([q])
    np.testing.assert_allclose(ref.q, q, atol=1e-12)
    assert ref.max_distance <= 1e-6


def test_reference_symmetric_pair():
    ref = reference_quaternion([rot_to_quat(rot_z(-0.2)), rot_to_quat(rot_z(0.2))])
    np.testing.assert_allclose(np.abs(ref.q), [1.0, 0, 0, 0], atol=1e-12)
    assert abs(ref.max_distance - 0.2) <= 1e-9 and ref.assumption_ok


def test_reference_sign_invariance(rng):
    base = quat_product(random_quaternion(rng), [1.0, 0, 0, 0])
    qs = np.array([quat_product(base, axis_angle(rng.normal(size=3), 0.3)) for _ in range(10)])
    mixed = qs * np.where(rng.random(10) < 0.5, -1.0, 1.0)[:, None]
    a, b = reference_quaternion(qs), reference_quaternion(mixed)
    assert abs(abs(a.q @ b.q) - 1) <= 1e-12
    with pytest.raises(ValueError):
        reference_quaternion(np.zeros((0, 4)))


def test_exp_log_chart_inverse(rng):
    qbar = random_quaternion(rng)
    V = rng.uniform(-1, 1, (50, 3))
    Q = exp_chart(qbar, V)
    np.testing.assert_allclose(np.linalg.norm(Q, axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(log_chart(qbar, Q), V, atol=1e-12)
    for q, v in zip(Q, V):
        assert abs(quaternion_distance(qbar, q) - np.linalg.norm(v)) <= 1e-10


def test_cap_radius():
    # the set {q : |q - e0|^2 <= 2 - 2 cos(a/2)} on S^3 is a geodesic ball of radius a
    a = 0.7
    eta = 2 - 2 * math.cos(a / 2)
    assert abs(cap_radius(np.array([1.0, 0, 0, 0]), eta) - a) <= 1e-12
    assert cap_radius(np.zeros(4), 0.1) == math.pi


def test_rotation_ball_finite_set():
    angles = [-0.4, 0.1, 0.4]
    qs = [rot_to_quat(rot_z(a)) for a in angles]
    res = rotation_ball(finite_z_rotations(angles), None, 2, samples=qs)
    # brute force: centre angle c minimising max |c - a|
    grid = np.arange(-1, 1, 1e-4)
    worst = np.max(np.abs(grid[:, None] - np.array(angles)[None, :]), axis=1)
    c = grid[np.argmin(worst)]
    assert geodesic_distance(res.center, rot_z(c)) <= 1e-3
    assert abs(res.radius - worst.min()) <= 1e-3
    assert res.assumption_ok is True
    np.testing.assert_allclose(res.center.T @ res.center, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(res.center) - 1) <= 1e-9


def test_rotation_ball_single_rotation(rng):
    q = random_quaternion(rng)
    x = Polynomial.variables(4)
    S = SemialgebraicSet(4, [], [x[i] - q[i] for i in range(4)] + [unit_norm_polynomial()])
    res = rotation_ball(S, q, 1)
    assert geodesic_distance(res.center, quat_to_rot(q)) <= 1e-3
    assert res.radius <= 1e-3


@pytest.mark.parametrize("seed", [0, 1])
def test_geodesic_ball_is_its_own_minimax_ball(seed):
    rng = np.random.default_rng(seed)
    R0 = quat_to_rot(random_quaternion(rng))
    S = geodesic_ball_set(R0, 0.3)
    samples = sample_geodesic_ball(R0, 0.3, 10000, rng)
    assert S.violations(samples).max() <= 1e-9
    res = rotation_ball(S, None, 2, samples=samples)
    assert geodesic_distance(res.center, R0) <= 1e-3
    assert abs(res.radius - 0.3) <= 1e-3
    # every sample lies in the reported ball; branch consistency
    assert res.radius_empirical <= res.radius + 1e-5
    aligned = align_signs(samples, res.reference)
    assert np.all(aligned @ res.reference >= -1e-9)
    assert 0 <= res.radius < math.pi


def test_rotation_ball_json_round_trip():
    res = rotation_ball(finite_z_rotations([-0.2, 0.3]), None, 2)
    data = res.to_json()
    assert {"radius", "chordal_radius", "assumption_ok", "center"} <= set(data)
    back = RotationBallResult.from_json(data)
    np.testing.assert_array_equal(back.center, res.center)
    assert back.radius == res.radius and back.assumption_ok == res.assumption_ok


def test_rotation_ball_centre_at_origin_is_assumption_error():
    # antipodal rotations about z by +-(pi - 0.05): the set straddles the branch
    x = Polynomial.variables(4)
    S = finite_z_rotations([math.pi - 0.05, -(math.pi - 0.05)])
    with pytest.raises(AssumptionError):
        rotation_ball(S, [0.0, 1.0, 0.0, 0.0], 2, check_assumption=False)
