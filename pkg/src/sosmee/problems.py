"""Builders for system-identification and camera-pose uncertainty sets.

System identification: ``x_{k+1} = Phi_k [1; theta] + eps_k`` with
``||eps_k|| <= beta_k`` gives one concave quadratic constraint per step.

Pose: with ``v_i = R(q) Y_i + t`` and normalised image points ``y_i``, the
bound ``||y_i - (v_i1, v_i2) / v_i3|| <= beta_i`` is cleared of the depth to
``beta_i^2 v_i3^2 - ||y_i v_i3 - (v_i1, v_i2)||^2 >= 0`` together with the
cheirality condition ``v_i3 >= 0``; the unknowns are ``(q, t) in R^7``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .polyalg import Polynomial
from .relax import SemialgebraicSet
from .so3 import quat_to_rot, random_quaternion, rotation_polynomials, unit_norm_polynomial

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# system identification
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryData:
    states: np.ndarray  # (N + 1, n_x)
    Phi: np.ndarray  # (N, n_x, n + 1): x_{k+1} = Phi[k] @ [1; theta] + eps_k
    beta: np.ndarray  # (N,)
    controls: np.ndarray | None = None  # (N, n_u), informational

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.Phi = np.asarray(self.Phi, dtype=float)
        self.beta = np.broadcast_to(np.asarray(self.beta, dtype=float), (self.Phi.shape[0],)).copy()
        if self.controls is not None:
            self.controls = np.asarray(self.controls, dtype=float).reshape(self.Phi.shape[0], -1)
        N = self.Phi.shape[0]
        if self.Phi.ndim != 3:
            raise ValueError("Phi must have shape (N, n_x, n + 1)")
        if self.states.shape != (N + 1, self.Phi.shape[1]):
            raise ValueError(f"states have shape {self.states.shape}, expected {(N + 1, self.Phi.shape[1])}")
        if np.any(self.beta <= 0):
            raise ValueError("noise bounds must be positive")

    @property
    def N(self) -> int:
        return self.Phi.shape[0]

    @property
    def n_x(self) -> int:
        return self.Phi.shape[1]

    @property
    def n(self) -> int:
        return self.Phi.shape[2] - 1

    def residual(self, theta) -> np.ndarray:
        """``x_{k+1} - Phi_k [1; theta]`` for every step."""
        th = np.r_[1.0, np.asarray(theta, dtype=float)]
        return self.states[1:] - self.Phi @ th

    # -- csv ------------------------------------------------------------------
    def to_csv(self, path) -> None:
        n_u = 0 if self.controls is None else self.controls.shape[1]
        header = ["step"] + [f"x{i + 1}" for i in range(self.n_x)] + [f"u{i + 1}" for i in range(n_u)]
        header += [f"phi_{i}_{j}" for i in range(self.n_x) for j in range(self.n + 1)] + ["beta"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.N + 1):
                row = [k] + [repr(float(v)) for v in self.states[k]]
                if k < self.N:
                    row += [repr(float(v)) for v in (self.controls[k] if n_u else [])]
                    row += [repr(float(v)) for v in self.Phi[k].ravel()]
                    row += [repr(float(self.beta[k]))]
                else:
                    row += [""] * (n_u + self.n_x * (self.n + 1) + 1)
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> TrajectoryData:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        xs = [i for i, h in enumerate(header) if h.startswith("x")]
        us = [i for i, h in enumerate(header) if h.startswith("u")]
        ph = [i for i, h in enumerate(header) if h.startswith("phi_")]
        bi = header.index("beta")
        n_x = len(xs)
        ncol = len(ph) // n_x
        body.sort(key=lambda r: int(r[0]))
        states = np.array([[float(r[i]) for i in xs] for r in body])
        steps = [r for r in body if r[bi] != ""]
        Phi = np.array([[float(r[i]) for i in ph] for r in steps]).reshape(len(steps), n_x, ncol)
        beta = np.array([float(r[bi]) for r in steps])
        controls = np.array([[float(r[i]) for i in us] for r in steps]) if us else None
        return cls(states, Phi, beta, controls)


def sysid_sme(data: TrajectoryData) -> SemialgebraicSet:
    """One constraint ``beta_k^2 - ||x_{k+1} - Phi_k [1; theta]||^2 >= 0`` per step."""
    n = data.n
    ineq = []
    for k in range(data.N):
        a = data.states[k + 1] - data.Phi[k, :, 0]
        B = data.Phi[k, :, 1:]
        ineq.append(Polynomial.quadratic(-B.T @ B, B.T @ a, data.beta[k] ** 2 - a @ a))
    return SemialgebraicSet(n, ineq, [], None)


def uniform_ball(rng: np.random.Generator, d: int, radius: float, size: int | None = None) -> np.ndarray:
    m = 1 if size is None else size
    v = rng.standard_normal((m, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v *= radius * rng.uniform(0, 1, (m, 1)) ** (1.0 / d)
    return v[0] if size is None else v


def random_linear_system(n_x: int, N: int, beta: float, rng: np.random.Generator, n_u: int | None = None):
    """Random stable-ish linear system with known ``B``; ``theta`` is ``A`` row-major.

    Entries of ``A`` and ``B`` are standard normal and the singular values of
    ``A`` above one are clipped to one. Inputs are standard normal and the
    disturbance is uniform in the ball of radius ``beta``.
    """
    n_u = n_x if n_u is None else n_u
    A = rng.standard_normal((n_x, n_x))
    U, s, Vt = np.linalg.svd(A)
    A = U @ np.diag(np.minimum(s, 1.0)) @ Vt
    B = rng.standard_normal((n_x, n_u))
    x = np.zeros((N + 1, n_x))
    u = rng.standard_normal((N, n_u))
    Phi = np.zeros((N, n_x, n_x * n_x + 1))
    for k in range(N):
        x[k + 1] = A @ x[k] + B @ u[k] + uniform_ball(rng, n_x, beta)
        Phi[k, :, 0] = B @ u[k]
        Phi[k, :, 1:] = np.kron(np.eye(n_x), x[k])
    return TrajectoryData(x, Phi, np.full(N, beta), u), A.ravel()


def hard_to_learn_system(theta2: float, N: int, rng: np.random.Generator, theta1: float = 1.0,
                         noise: float = 0.1):
    """``x_{k+1} = A x_k + H w_k`` with ``A = [[0, t1, 0], [0, 0, t2], [0, 0, 0]]``, ``H = [e1, e3]``."""
    A = np.array([[0, theta1, 0], [0, 0, theta2], [0, 0, 0]], dtype=float)
    H = np.array([[1, 0], [0, 0], [0, 1]], dtype=float)
    x = np.zeros((N + 1, 3))
    Phi = np.zeros((N, 3, 3))
    for k in range(N):
        x[k + 1] = A @ x[k] + H @ uniform_ball(rng, 2, noise)
        Phi[k, 0, 1] = x[k, 1]
        Phi[k, 1, 2] = x[k, 2]
    return TrajectoryData(x, Phi, np.full(N, noise)), np.array([theta1, theta2])


@dataclass
class PendulumParams:
    damping: float = 0.5
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81

    @property
    def theta(self) -> np.ndarray:
        ml2 = self.mass * self.length**2
        return np.array([self.damping / ml2, 1.0 / ml2, self.gravity / self.length])


def pendulum_trajectory(
    N: int = 1000,
    rng: np.random.Generator | None = None,
    dt: float = 0.01,
    noise: float = 0.1,
    params: PendulumParams | None = None,
    u_scale: float = 10.0,
    x0=(0.5, 0.0),
    disturbance: str = "continuous",
):
    """Euler-discretised pendulum with ``theta = (b/(m l^2), 1/(m l^2), g/l)``.

    Features are ``[x1; x2; u; sin x1]`` and the step reads
    ``x_{k+1} = x_k + dt [x2; -theta1 x2 + theta2 u - theta3 sin x1] + e_k``
    where ``w_k`` is uniform in the disk of radius ``noise``. With
    ``disturbance="continuous"`` the disturbance acts on the vector field,
    ``e_k = dt w_k``, so each step is known up to ``dt * noise``; with
    ``"discrete"`` it is added to the step itself, ``e_k = w_k``. Inputs are
    uniform on ``[-u_scale, u_scale]``.
    """
    if disturbance not in ("continuous", "discrete"):
        raise ValueError(f"unknown disturbance model {disturbance!r}")
    bound = noise * dt if disturbance == "continuous" else noise
    rng = rng or np.random.default_rng(0)
    params = params or PendulumParams()
    th = params.theta
    x = np.zeros((N + 1, 2))
    x[0] = x0
    u = rng.uniform(-u_scale, u_scale, N)
    Phi = np.zeros((N, 2, 4))
    for k in range(N):
        x1, x2 = x[k]
        Phi[k, 0, 0] = x1 + dt * x2
        Phi[k, 1, 0] = x2
        Phi[k, 1, 1:] = dt * np.array([-x2, u[k], -math.sin(x1)])
        x[k + 1] = Phi[k] @ np.r_[1.0, th] + uniform_ball(rng, 2, bound)
    return TrajectoryData(x, Phi, np.full(N, bound), u[:, None]), th


# ---------------------------------------------------------------------------
# simple shapes in R^3
# ---------------------------------------------------------------------------

def sphere_set(r: float = 3.0, n: int = 3) -> SemialgebraicSet:
    """``||x|| = r``; Chebyshev radius ``r``."""
    return SemialgebraicSet(n, [], [Polynomial.quadratic(-np.eye(n), None, r * r)], 1.5 * r)


def ball_set(r: float = 3.0, n: int = 3) -> SemialgebraicSet:
    """``||x|| <= r``; Chebyshev radius ``r``."""
    return SemialgebraicSet(n, [Polynomial.quadratic(-np.eye(n), None, r * r)], [], None)


def cube_set(r: float = 3.0, n: int = 3) -> SemialgebraicSet:
    """``||x||_inf <= r`` as ``r^2 - x_i^2 >= 0``; Chebyshev radius ``sqrt(n) r``."""
    x = Polynomial.variables(n)
    return SemialgebraicSet(n, [r * r - xi * xi for xi in x], [], None)


def ellipsoid_boundary_set(P) -> SemialgebraicSet:
    """``x^T P^{-1} x = 1``; Chebyshev radius ``sqrt(lambda_max(P))``."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    Pinv = np.linalg.inv(P)
    bound = 1.5 * math.sqrt(np.linalg.eigvalsh(P)[-1])
    return SemialgebraicSet(n, [], [Polynomial.quadratic(-Pinv, None, 1.0)], bound)


def tv_screen_set() -> SemialgebraicSet:
    """``x1^4 + x2^4 + x3^4 <= 1``; Chebyshev and MEE radius ``3^(1/4)``."""
    x = Polynomial.variables(3)
    return SemialgebraicSet(3, [1.0 - x[0] ** 4 - x[1] ** 4 - x[2] ** 4], [], None)


def random_spd(rng: np.random.Generator, n: int = 3, low: float = 0.5, high: float = 4.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues uniform in ``[low, high]``."""
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Qm @ np.diag(rng.uniform(low, high, n)) @ Qm.T


# ---------------------------------------------------------------------------
# pose
# ---------------------------------------------------------------------------

@dataclass
class Correspondence:
    Y: np.ndarray
    y: np.ndarray
    beta: float


@dataclass
class PoseData:
    points: list[Correspondence]
    t_bound: float | None = None

    def __post_init__(self):
        for p in self.points:
            p.Y = np.asarray(p.Y, dtype=float).reshape(3)
            p.y = np.asarray(p.y, dtype=float).reshape(2)
            if not p.beta > 0:
                raise ValueError("noise bounds must be positive")
        if len(self.points) < 3:
            log.warning("fewer than three correspondences: the pose set is typically unbounded")

    def to_json(self) -> dict:
        return {
            "points": [{"Y": p.Y.tolist(), "y": p.y.tolist(), "beta": p.beta} for p in self.points],
            "t_bound": self.t_bound,
        }

    @classmethod
    def from_json(cls, data) -> PoseData:
        pts = [Correspondence(np.array(p["Y"]), np.array(p["y"]), float(p["beta"])) for p in data["points"]]
        return cls(pts, data.get("t_bound"))

    @classmethod
    def load(cls, path) -> PoseData:
        return cls.from_json(json.loads(Path(path).read_text()))


def project(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v[..., :2] / v[..., 2:3]


def pose_sme(data: PoseData) -> SemialgebraicSet:
    """Set over ``(q0, q1, q2, q3, t1, t2, t3)``."""
    if data.t_bound is None:
        raise ValueError("pose sets need t_bound to be bounded")
    n = 7
    x = Polynomial.variables(n)
    R = rotation_polynomials(n, 0)
    t = x[4:7]
    ineq = []
    for p in data.points:
        v = [sum((R[i, j] * p.Y[j] for j in range(3)), t[i]) for i in range(3)]
        r1 = p.y[0] * v[2] - v[0]
        r2 = p.y[1] * v[2] - v[1]
        ineq.append(p.beta**2 * v[2] * v[2] - r1 * r1 - r2 * r2)
        ineq.append(v[2])
    tb = float(data.t_bound)
    ineq.append(tb * tb - t[0] * t[0] - t[1] * t[1] - t[2] * t[2])
    eq = [unit_norm_polynomial(n, 0)]
    return SemialgebraicSet(n, ineq, eq, math.sqrt(1.0 + tb * tb))


def synthetic_pose(
    rng: np.random.Generator,
    n_points: int = 6,
    beta: float = 0.02,
    noise: float | None = None,
    depth: float = 2.0,
    spread: float = 0.5,
    t_bound: float = 3.0,
):
    """Random pose and correspondences with image noise bounded by ``noise``.

    ``noise`` defaults to ``beta / 2``. Model points are uniform in a cube of
    half-width ``spread``; the translation puts the object ``depth`` in front
    of the camera. Returns ``(data, q_true, t_true)``.
    """
    noise = beta / 2 if noise is None else noise
    q = random_quaternion(rng)
    if q[0] < 0:
        q = -q
    R = quat_to_rot(q)
    t = np.r_[rng.uniform(-0.2, 0.2, 2), depth]
    pts = []
    for _ in range(n_points):
        Y = rng.uniform(-spread, spread, 3)
        v = R @ Y + t
        y = project(v) + _disk(rng, noise)
        pts.append(Correspondence(Y, y, beta))
    return PoseData(pts, t_bound), q, t


def _disk(rng, r):
    return uniform_ball(rng, 2, r) if r > 0 else np.zeros(2)


def with_beta(data: PoseData, beta: float) -> PoseData:
    return PoseData([Correspondence(p.Y, p.y, beta) for p in data.points], data.t_bound)
