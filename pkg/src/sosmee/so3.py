"""Unit quaternions, rotation distances and minimum enclosing geodesic balls.

Quaternions are ``(q0, q1, q2, q3)`` with scalar part first. ``q`` and ``-q``
give the same rotation; sets of rotations are handled on one branch of S^3
selected by ``qbar^T q >= 0``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .grcc import ChebyshevResult, grcc
from .polyalg import Polynomial
from .relax import AssumptionError, SemialgebraicSet, lower_bound
from .sdpcore import Settings

log = logging.getLogger(__name__)

UNIT_TOL = 1e-12


def _check_unit(q, tol: float = 1e-9) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > tol:
        raise ValueError(f"not a unit quaternion (norm {np.linalg.norm(q):.3g})")
    return q


def quat_to_rot(q) -> np.ndarray:
    q0, q1, q2, q3 = _check_unit(q)
    return np.array([
        [2 * (q0 * q0 + q1 * q1) - 1, 2 * (q1 * q2 - q0 * q3), 2 * (q1 * q3 + q0 * q2)],
        [2 * (q1 * q2 + q0 * q3), 2 * (q0 * q0 + q2 * q2) - 1, 2 * (q2 * q3 - q0 * q1)],
        [2 * (q1 * q3 - q0 * q2), 2 * (q2 * q3 + q0 * q1), 2 * (q0 * q0 + q3 * q3) - 1],
    ])


def rot_to_quat(R) -> np.ndarray:
    """Unit quaternion with non-negative scalar part (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    cand = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
    k = int(np.argmax(cand))
    if k == 0:
        s = math.sqrt(max(1.0 + tr, 0.0)) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif k == 1:
        s = math.sqrt(max(1.0 + R[0, 0] - R[1, 1] - R[2, 2], 0.0)) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif k == 2:
        s = math.sqrt(max(1.0 + R[1, 1] - R[0, 0] - R[2, 2], 0.0)) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = math.sqrt(max(1.0 + R[2, 2] - R[0, 0] - R[1, 1], 0.0)) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def quat_product(a, b) -> np.ndarray:
    a0, a1, a2, a3 = np.asarray(a, dtype=float)
    L = np.array([
        [a0, -a1, -a2, -a3],
        [a1, a0, -a3, a2],
        [a2, a3, a0, -a1],
        [a3, -a2, a1, a0],
    ])
    return L @ np.asarray(b, dtype=float)


def quat_inverse(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_ops(a, b) -> dict:
    return {"product": quat_product(a, b), "inverse": quat_inverse(a)}


def axis_angle(axis, angle: float) -> np.ndarray:
    """Quaternion of the rotation by ``angle`` about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.r_[math.cos(angle / 2), math.sin(angle / 2) * axis]


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_quaternion(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    q = rng.standard_normal((4,) if size is None else (size, 4))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def geodesic_distance(R1, R2) -> float:
    """Rotation angle of ``R1^T R2`` in radians."""
    c = (np.trace(np.asarray(R1).T @ np.asarray(R2)) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, c))))


def quaternion_distance(q1, q2) -> float:
    """``2 arccos |<q1, q2>|``, the same angle computed from quaternions."""
    c = abs(float(np.dot(q1, q2)))
    return 2.0 * math.acos(min(1.0, c))


def sphere_distance(q1, q2) -> float:
    """Great-circle angle between two unit vectors of S^3."""
    c = float(np.dot(q1, q2))
    return math.acos(min(1.0, max(-1.0, c)))


def rotation_polynomials(n: int = 4, offset: int = 0) -> np.ndarray:
    """3x3 array of degree-2 polynomials ``R(q)`` with ``q = theta[offset:offset+4]``."""
    x = Polynomial.variables(n)
    q0, q1, q2, q3 = x[offset:offset + 4]
    R = [
        [2 * (q0 * q0 + q1 * q1) - 1, 2 * (q1 * q2 - q0 * q3), 2 * (q1 * q3 + q0 * q2)],
        [2 * (q1 * q2 + q0 * q3), 2 * (q0 * q0 + q2 * q2) - 1, 2 * (q2 * q3 - q0 * q1)],
        [2 * (q1 * q3 - q0 * q2), 2 * (q2 * q3 + q0 * q1), 2 * (q0 * q0 + q3 * q3) - 1],
    ]
    out = np.empty((3, 3), dtype=object)
    for i in range(3):
        for j in range(3):
            out[i, j] = R[i][j]
    return out


def unit_norm_polynomial(n: int = 4, offset: int = 0) -> Polynomial:
    x = Polynomial.variables(n)
    return sum((x[offset + i] * x[offset + i] for i in range(4)), Polynomial.constant(n, 0.0)) - 1.0


def geodesic_ball_set(R0, radius: float) -> SemialgebraicSet:
    """Rotations within ``radius`` of ``R0`` as a set in ``q``, with ``q0^T q >= 0``.

    ``tr(R0^T R(q)) >= 1 + 2 cos(radius)`` is equivalent to
    ``<q0, q>^2 >= cos^2(radius / 2)`` on S^3; with the branch inequality
    this is a spherical cap.
    """
    q0 = rot_to_quat(R0)
    x = Polynomial.variables(4)
    lin = sum((q0[i] * x[i] for i in range(4)), Polynomial.constant(4, 0.0))
    Rq = rotation_polynomials()
    tr = sum((R0[i, j] * Rq[i, j] for i in range(3) for j in range(3)), Polynomial.constant(4, 0.0))
    return SemialgebraicSet(4, [tr - (1 + 2 * math.cos(radius)), lin], [unit_norm_polynomial()], None)


def sample_geodesic_ball(R0, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Rotations (as quaternions) spread over the ball, including its boundary."""
    q0 = rot_to_quat(R0)
    axes = rng.standard_normal((n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = radius * rng.uniform(0, 1, n) ** (1 / 3)
    angles[: n // 10] = radius
    out = np.empty((n, 4))
    for k in range(n):
        out[k] = quat_product(q0, axis_angle(axes[k], angles[k]))
    return out


# ---------------------------------------------------------------------------
# reference quaternion and exponential chart
# ---------------------------------------------------------------------------

@dataclass
class ReferenceQuaternion:
    q: np.ndarray
    max_distance: float

    @property
    def assumption_ok(self) -> bool:
        return self.max_distance <= math.pi / 2


def align_signs(qs, ref) -> np.ndarray:
    qs = np.atleast_2d(np.asarray(qs, dtype=float)).copy()
    flip = qs @ np.asarray(ref, dtype=float) < 0
    qs[flip] *= -1
    return qs


def reference_quaternion(samples) -> ReferenceQuaternion:
    """Chordal mean of quaternion samples after sign alignment to the first."""
    qs = np.atleast_2d(np.asarray(samples, dtype=float))
    if qs.shape[0] == 0:
        raise ValueError("need at least one sample")
    qs = qs / np.linalg.norm(qs, axis=1, keepdims=True)
    qs = align_signs(qs, qs[0])
    w, V = np.linalg.eigh(qs.T @ qs)
    q = V[:, -1]
    if q @ qs[0] < 0:
        q = -q
    dmax = max(quaternion_distance(q, p) for p in qs)
    return ReferenceQuaternion(q, dmax)


def exp_chart(qbar, v) -> np.ndarray:
    """Points ``qbar * exp(v / 2)`` for tangent vectors ``v`` (rotation vectors)."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    out = np.empty((v.shape[0], 4))
    for k, vk in enumerate(v):
        ang = np.linalg.norm(vk)
        dq = np.r_[1.0, 0, 0, 0] if ang < 1e-15 else axis_angle(vk / ang, ang)
        out[k] = quat_product(qbar, dq)
    return out


def log_chart(qbar, q) -> np.ndarray:
    """Inverse of :func:`exp_chart` on the branch ``qbar^T q >= 0``."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    out = np.empty((q.shape[0], 3))
    inv = quat_inverse(qbar)
    for k, qk in enumerate(q):
        dq = quat_product(inv, qk)
        if dq[0] < 0:
            dq = -dq
        s = np.linalg.norm(dq[1:])
        ang = 2 * math.atan2(s, dq[0])
        out[k] = np.zeros(3) if s < 1e-15 else ang * dq[1:] / s
    return out


# ---------------------------------------------------------------------------
# rotation ball
# ---------------------------------------------------------------------------

@dataclass
class RotationBallResult:
    center: np.ndarray  # rotation matrix
    center_quaternion: np.ndarray
    radius: float  # certified geodesic radius (radians)
    chordal_radius: float  # sqrt(eta) in R^4
    reference: np.ndarray
    assumption_ok: bool | None
    radius_empirical: float | None = None
    chebyshev: ChebyshevResult | None = None
    info: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "center": self.center.tolist(),
            "center_quaternion": self.center_quaternion.tolist(),
            "radius": self.radius,
            "chordal_radius": self.chordal_radius,
            "radius_empirical": self.radius_empirical,
            "reference": self.reference.tolist(),
            "assumption_ok": self.assumption_ok,
            "kappa": self.chebyshev.kappa if self.chebyshev is not None else None,
        }

    @classmethod
    def from_json(cls, data) -> RotationBallResult:
        emp = data.get("radius_empirical")
        return cls(
            center=np.array(data["center"], dtype=float),
            center_quaternion=np.array(data["center_quaternion"], dtype=float),
            radius=float(data["radius"]),
            chordal_radius=float(data["chordal_radius"]),
            reference=np.array(data["reference"], dtype=float),
            assumption_ok=data.get("assumption_ok"),
            radius_empirical=None if emp is None else float(emp),
        )


def cap_radius(mu, eta: float) -> float:
    """Geodesic radius on SO(3) of ``{q in S^3 : ||q - mu||^2 <= eta}``.

    A unit ``q`` in the ball satisfies ``<q, mu/|mu|> >= (1 + |mu|^2 - eta) / (2 |mu|)``;
    the rotation angle is twice the great-circle angle on S^3.
    """
    m = float(np.linalg.norm(mu))
    if m <= 0:
        return math.pi
    c = (1.0 + m * m - eta) / (2.0 * m)
    return 2.0 * math.acos(min(1.0, max(0.0, c)))


def branch_inequality(qbar, n: int = 4, offset: int = 0) -> Polynomial:
    x = Polynomial.variables(n)
    return sum((float(qbar[i]) * x[offset + i] for i in range(4)), Polynomial.constant(n, 0.0))


def reference_from_relaxation(sset: SemialgebraicSet, q_index, kappa: int, settings: Settings | None = None):
    """Principal eigenvector of the relaxed second moments of ``q``.

    Minimising ``L_z(sum_i q_i^2)`` is constant on S^3, so any optimal
    pseudomoment vector is feasible; its ``q q^T`` block averages the
    branch-symmetric set and its leading eigenvector is a chordal mean. The
    sign follows the relaxed first moments when those are not zero.
    """
    q_index = list(q_index)
    x = Polynomial.variables(sset.n)
    obj = sum((x[i] * x[i] for i in q_index), Polynomial.constant(sset.n, 0.0))
    _, pm = lower_bound(sset, obj, kappa, settings)
    S = pm.second_moments()[np.ix_(q_index, q_index)]
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    q = V[:, -1]
    # orient toward the relaxed mean when the set already sits on one side
    m = pm.first_moments()[q_index]
    side = float(m @ q)
    if abs(side) > 1e-6:
        if side < 0:
            q = -q
    elif q[np.argmax(np.abs(q))] < 0:
        q = -q
    return q / np.linalg.norm(q), w


def verify_branch_assumption(sset: SemialgebraicSet, qbar, q_index, kappa: int, settings: Settings | None = None):
    """Lower bound of ``(qbar^T q)^2`` over the set; >= 1/2 certifies distance <= pi/2."""
    q_index = list(q_index)
    x = Polynomial.variables(sset.n)
    lin = sum((float(qbar[k]) * x[i] for k, i in enumerate(q_index)), Polynomial.constant(sset.n, 0.0))
    lb, _ = lower_bound(sset, lin * lin, max(kappa, 2), settings)
    return lb


def rotation_ball(
    set_q: SemialgebraicSet,
    qbar=None,
    kappa: int = 2,
    q_index=(0, 1, 2, 3),
    settings: Settings | None = None,
    samples=None,
    check_assumption: bool = True,
) -> RotationBallResult:
    """Minimum enclosing geodesic ball of the rotations ``R(q)`` in ``set_q``.

    ``set_q`` must contain the unit-norm equality for ``q``. The branch
    ``qbar^T q >= 0`` is appended; ``qbar`` defaults to the relaxation's
    chordal mean. ``samples`` (quaternions) give an empirical radius.
    """
    t0 = time.perf_counter()
    q_index = list(q_index)
    if qbar is None:
        qbar, _ = reference_from_relaxation(set_q, q_index, kappa, settings)
    qbar = _check_unit(np.asarray(qbar, dtype=float) / np.linalg.norm(qbar))
    assumption_ok = None
    if check_assumption:
        try:
            lb = verify_branch_assumption(set_q, qbar, q_index, kappa, settings)
            # d <= pi/2  <=>  |<qbar, q>| >= cos(pi/4)
            assumption_ok = bool(lb >= 0.5 - 1e-7)
        except Exception as exc:  # inconclusive
            log.warning("branch assumption check failed: %s", exc)
    branch = branch_inequality(qbar, set_q.n, q_index[0]) if q_index == list(range(q_index[0], q_index[0] + 4)) \
        else sum((float(qbar[k]) * Polynomial.variable(set_q.n, i) for k, i in enumerate(q_index)),
                 Polynomial.constant(set_q.n, 0.0))
    work = set_q.replace(inequalities=set_q.inequalities + [branch])
    res = grcc(work, q_index, None, kappa, settings)
    mu = res.mu
    norm = float(np.linalg.norm(mu))
    if norm < 1e-6:
        raise AssumptionError("relaxed centre is at the origin: the branch constraint did not isolate one side")
    qc = mu / norm
    radius = cap_radius(mu, res.enclosing_eta)
    emp = None
    if samples is not None:
        S = np.atleast_2d(np.asarray(samples, dtype=float))
        emp = max(quaternion_distance(qc, s) for s in S)
    return RotationBallResult(
        center=quat_to_rot(qc), center_quaternion=qc, radius=radius, chordal_radius=res.radius,
        reference=qbar, assumption_ok=assumption_ok, radius_empirical=emp, chebyshev=res,
        info={"wall_time": time.perf_counter() - t0, "residuals": res.residuals},
    )
