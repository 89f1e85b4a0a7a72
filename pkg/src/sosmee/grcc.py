"""Generalised relaxed Chebyshev centres.

The order-``kappa`` relaxation of ``min_mu max_{theta in S} ||mu - P theta||_Q^2``
swaps min and max, eliminates ``mu = P L_z(theta)`` in closed form and leaves

    eta_kappa = max_z  L_z(theta^T P^T Q P theta) - L_z(theta)^T P^T Q P L_z(theta)

over the moment relaxation of ``S``. The concave quadratic objective is handled
either directly (``form="quadratic"``) or through the Schur lifting
``[[Q^-1, P L_z(theta)], [., t]] >= 0`` (``form="lifted"``, the default).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from . import sdpcore
from .mee import Ellipsoid, ProjectionSpec
from .polyalg import Polynomial
from .relax import (
    MomentStructure,
    PseudomomentSolution,
    RelaxationError,
    SemialgebraicSet,
    add_moment_constraints,
    build_structure,
    check_status,
)
from .sdpcore import PSD, ProgramBuilder, Settings, svec, svec_len, svec_position

log = logging.getLogger(__name__)

#: Q matrices with a larger condition number are rejected.
MAX_Q_CONDITION = 1e10


@dataclass
class ShapeMatrix:
    """Positive-definite ``Q`` of the weighted norm ``||xi - mu||_Q``.

    Behaves as an array, so it can be passed wherever ``Q`` is expected.
    """

    Q: np.ndarray
    covariance: np.ndarray | None = None
    n_samples: int = 0
    regularized: bool = False

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if self.Q.shape[0] != self.Q.shape[1] or not np.allclose(self.Q, self.Q.T, atol=1e-12 * np.abs(self.Q).max()):
            raise ValueError("Q must be a symmetric square matrix")
        if np.linalg.eigvalsh(self.Q)[0] <= 0:
            raise ValueError("Q must be positive definite")

    def __array__(self, dtype=None, copy=None):
        return self.Q if dtype is None else self.Q.astype(dtype)

    @property
    def d(self) -> int:
        return self.Q.shape[0]

    def to_json(self) -> dict:
        return {
            "Q": self.Q.tolist(),
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "n_samples": self.n_samples,
            "regularized": self.regularized,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> ShapeMatrix:
        cov = data.get("covariance")
        return cls(np.array(data["Q"], dtype=float), None if cov is None else np.array(cov, dtype=float),
                   int(data.get("n_samples", 0)), bool(data.get("regularized", False)))


@dataclass
class ChebyshevResult:
    """Ellipsoid ``{xi : (xi - mu)^T Q (xi - mu) <= eta}``."""

    mu: np.ndarray
    eta: float
    Q: np.ndarray
    kappa: int
    eta_normalized: float = float("nan")
    residuals: dict = field(default_factory=dict)
    pseudomoments: PseudomomentSolution | None = None
    wall_time: float = 0.0
    eta_center: float = float("nan")  # relaxed bound at mu itself

    @property
    def d(self) -> int:
        return self.mu.size

    @property
    def radius(self) -> float:
        """``sqrt(eta)``: the Euclidean radius when ``Q = I``."""
        return math.sqrt(max(self.eta, 0.0))

    @property
    def enclosing_eta(self) -> float:
        """``eta`` raised to the bound at the returned centre when that is known."""
        if math.isnan(self.eta_center):
            return self.eta
        return max(self.eta, self.eta_center)

    def ellipsoid(self) -> Ellipsoid:
        eta = max(self.enclosing_eta, 1e-300)
        return Ellipsoid(self.Q / eta, self.mu, self.kappa)

    def volume(self) -> float:
        if self.enclosing_eta <= 0:
            return 0.0
        return self.ellipsoid().volume()

    def to_json(self) -> dict:
        out = self.ellipsoid().to_json() if self.enclosing_eta > 0 else {
            "d": self.d, "E": None, "mu": self.mu.tolist(), "logdet": None, "kappa": self.kappa,
        }
        out.update({
            "eta": self.eta, "Q": self.Q.tolist(), "eta_normalized": self.eta_normalized,
            "eta_center": None if math.isnan(self.eta_center) else self.eta_center,
        })
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> ChebyshevResult:
        return cls(
            mu=np.array(data["mu"], dtype=float),
            eta=float(data["eta"]),
            Q=np.array(data["Q"], dtype=float),
            kappa=int(data.get("kappa") or 1),
            eta_normalized=float(data.get("eta_normalized", float("nan"))),
            eta_center=float("nan") if data.get("eta_center") is None else float(data["eta_center"]),
        )


def normalize_shape(Q) -> tuple[np.ndarray, float]:
    """``(Q / det(Q)^(1/d), det(Q)^(1/d))`` after validating ``Q``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[0] != Q.shape[1]:
        raise ValueError("Q must be square")
    Q = 0.5 * (Q + Q.T)
    w = np.linalg.eigvalsh(Q)
    if w[0] <= 0:
        raise ValueError("Q must be positive definite")
    if w[-1] / w[0] > MAX_Q_CONDITION:
        raise ValueError(f"Q is too ill-conditioned (condition {w[-1] / w[0]:.2e}); regularise it first")
    scale = float(np.exp(np.mean(np.log(w))))
    return Q / scale, scale


def c_matrix(st: MomentStructure, proj: ProjectionSpec, Q) -> np.ndarray:
    """Matrix ``C`` with ``<C, M_kappa(z)> = L_z(theta^T P^T Q P theta)``.

    ``P^T Q P`` sits in the block of the moment matrix indexed by the
    degree-one monomials; a monomial ``theta_i theta_j`` with ``i != j``
    appears at two symmetric positions, each carrying half of its
    coefficient ``2 (P^T Q P)_ij``.
    """
    n = st.n
    P = proj.matrix(n)
    W = P.T @ np.asarray(Q, dtype=float) @ P
    s = len(st.basis)
    C = np.zeros((s, s))
    C[1:n + 1, 1:n + 1] = W  # graded-lex: positions 1..n hold x_1..x_n
    return C


def _solve_in_frame(
    work: SemialgebraicSet,
    proj: ProjectionSpec,
    Qn: np.ndarray,
    kappa: int,
    form: str,
    settings: Settings | None,
):
    st = build_structure(work, kappa)
    d = proj.d
    b = ProgramBuilder()
    z = add_moment_constraints(b, st)
    C = c_matrix(st, proj, Qn)
    cz = st.moment_F.T @ svec(C)  # <C, M(z)> = cz . z
    first = st.first_moment_indices()[list(proj.selection)]
    if form == "lifted":
        t = int(b.add_variables(1)[0])
        Qinv = np.linalg.inv(Qn)
        k = d + 1
        rows, cols, vals = [], [], []
        for i in range(d):
            rows.append(svec_position(i, d))
            cols.append(z[first[i]])
            vals.append(math.sqrt(2.0))
        rows.append(svec_position(d, d))
        cols.append(t)
        vals.append(1.0)
        const = np.zeros(svec_len(k))
        const[: svec_len(d)] = svec(Qinv)
        b.add_constraint(PSD, k, rows, cols, vals, const)
        b.add_linear_objective(z, -cz)
        b.add_linear_objective([t], [1.0])
    elif form == "quadratic":
        b.add_linear_objective(z, -cz)
        rr, cc, vv = [], [], []
        for i in range(d):
            for j in range(d):
                rr.append(z[first[i]])
                cc.append(z[first[j]])
                vv.append(2.0 * Qn[i, j])
        b.add_quadratic_objective(rr, cc, vv)
    else:
        raise ValueError(f"unknown form {form!r}")
    prog = b.build()
    sol = sdpcore.solve(prog, settings)
    check_status(sol, "GRCC relaxation")
    zs = sol.x[z]
    m = zs[first]
    eta = float(cz @ zs - m @ Qn @ m)
    pm = PseudomomentSolution(zs, kappa, work.n, sol.status, st, sol.residuals())
    return m, max(eta, 0.0), pm, sol


def _bound_at_center(
    st: MomentStructure,
    proj: ProjectionSpec,
    Qn: np.ndarray,
    nu: np.ndarray,
    settings: Settings | None,
) -> float:
    """Relaxed upper bound of ``max ||xi - nu||_Qn^2`` over the set for a fixed centre.

    The objective is linear in the pseudomoments, so its optimal value is
    accurate to the solver tolerance even where the min-max centre is not.
    """
    b = ProgramBuilder()
    z = add_moment_constraints(b, st)
    cz = st.moment_F.T @ svec(c_matrix(st, proj, Qn))
    first = st.first_moment_indices()[list(proj.selection)]
    c = -cz.copy()
    c[first] += 2.0 * (Qn @ nu)
    b.add_linear_objective(z, c)
    sol = sdpcore.solve(b.build(), settings)
    check_status(sol, "GRCC radius at the centre")
    return float(-(c @ sol.x[z]) + nu @ Qn @ nu)


def grcc(
    sset: SemialgebraicSet,
    proj=None,
    Q=None,
    kappa: int = 1,
    settings: Settings | None = None,
    form: str = "lifted",
    frame="auto",
    recheck: bool = True,
) -> ChebyshevResult:
    """Order-``kappa`` generalised relaxed Chebyshev centre of the projection of ``sset``.

    ``frame`` may be ``None`` (solve as given), ``"auto"`` (the default:
    recentre and rescale with a lowest-order ball first, skipped when
    ``kappa`` already is the lowest order) or ``(shift, scale[, ball_bound])``
    meaning ``theta = shift + scale * y``.

    The centre comes from the min-max relaxation, where it is pinned down
    only to about the square root of the solver tolerance. ``eta`` is the
    min-max value; with ``recheck`` the result also carries ``eta_center``,
    the relaxed bound of ``max ||xi - mu||_Q^2`` for the returned centre,
    and the ellipsoid uses the larger of the two so that it encloses the set
    up to the solver tolerance.
    """
    t0 = time.perf_counter()
    proj = ProjectionSpec.coerce(proj, sset.n)
    d = proj.d
    Q = np.eye(d) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape != (d, d):
        raise ValueError(f"Q has shape {Q.shape}, projection has d={d}")
    if isinstance(frame, str) and frame == "auto":
        frame = auto_frame(sset, settings, None if kappa <= sset.min_order() else 1.5)
    if frame is None:
        work, sel_shift, sel_scale = sset, np.zeros(d), np.ones(d)
    else:
        shift = np.broadcast_to(np.asarray(frame[0], dtype=float), (sset.n,))
        scale = np.broadcast_to(np.asarray(frame[1], dtype=float), (sset.n,))
        bb = frame[2] if len(frame) > 2 else None
        work = sset.affine_preimage(shift, scale, bb)
        sel_shift = shift[list(proj.selection)]
        sel_scale = scale[list(proj.selection)]
    # in the work frame ||xi - mu||_Q^2 = ||y - nu||_{D Q D}^2
    Qw = sel_scale[:, None] * Q * sel_scale[None, :]
    Qn, qscale = normalize_shape(Qw)
    nu, eta_n, pm, sol = _solve_in_frame(work, proj, Qn, kappa, form, settings)
    res = sol.residuals()
    res["backend"] = sol.backend
    eta_center = float("nan")
    if recheck:
        try:
            eta_center = _bound_at_center(pm.structure, proj, Qn, nu, settings) * qscale
        except RelaxationError as err:
            log.warning("could not re-evaluate the radius at the centre: %s", err)
    mu = sel_shift + sel_scale * nu
    eta = eta_n * qscale
    _, qs_orig = normalize_shape(Q)
    return ChebyshevResult(
        mu=mu, eta=eta, Q=Q, kappa=kappa, eta_normalized=eta / qs_orig, residuals=res,
        pseudomoments=pm, wall_time=time.perf_counter() - t0, eta_center=eta_center,
    )


def lift_to_standard_sdp(sset: SemialgebraicSet, proj=None, Q=None, kappa: int = 1) -> sdpcore.ConicProgram:
    """The lifted Schur-complement program whose optimal value is ``-eta``."""
    proj = ProjectionSpec.coerce(proj, sset.n)
    Q = np.eye(proj.d) if Q is None else np.asarray(Q, dtype=float)
    st = build_structure(sset, kappa)
    b = ProgramBuilder()
    z = add_moment_constraints(b, st)
    cz = st.moment_F.T @ svec(c_matrix(st, proj, Q))
    first = st.first_moment_indices()[list(proj.selection)]
    d = proj.d
    t = int(b.add_variables(1)[0])
    rows = [svec_position(i, d) for i in range(d)] + [svec_position(d, d)]
    cols = [z[first[i]] for i in range(d)] + [t]
    vals = [math.sqrt(2.0)] * d + [1.0]
    const = np.zeros(svec_len(d + 1))
    const[: svec_len(d)] = svec(np.linalg.inv(Q))
    b.add_constraint(PSD, d + 1, rows, cols, vals, const)
    b.add_linear_objective(z, -cz)
    b.add_linear_objective([t], [1.0])
    return b.build()


def auto_frame(sset: SemialgebraicSet, settings: Settings | None = None, ball: float | None = 1.5):
    """``(shift, scale, ball)`` from a lowest-order Chebyshev ball of the set.

    The ball itself is computed in the frame of :func:`quadratic_frame` when
    one exists. With ``ball`` set, the returned frame adds the redundant
    constraint ``||y|| <= ball`` (the set lies in the unit ball of the frame).
    """
    kappa = sset.min_order()
    r = grcc(sset, None, None, kappa, settings, frame=quadratic_frame(sset), recheck=False)
    scale = max(r.radius, 1e-12)
    return (r.mu, scale, ball)


def quadratic_frame(sset: SemialgebraicSet, max_condition: float = 1e12):
    """``(shift, scale)`` from the ellipsoid implied by summing the quadratic inequalities.

    Every point of the set satisfies the sum of its (normalised) inequalities,
    so when that sum is strictly concave it describes an enclosing ellipsoid.
    Its centre and largest semi-axis give an isotropic frame in which the set
    has size of order one. Returns ``None`` when the sum is not strictly
    concave or the set has equalities or higher-degree constraints.
    """
    ineq = sset.all_inequalities()
    if not ineq or sset.equalities or sset.max_degree > 2:
        return None
    n = sset.n
    A, b, c = np.zeros((n, n)), np.zeros(n), 0.0
    for g in ineq:
        m = g.max_abs_coef()
        if m == 0:
            continue
        Ai, bi, ci = _quadratic_parts(-g / m)
        A += Ai
        b += bi
        c += ci
    w = np.linalg.eigvalsh(A)
    if w[0] <= 0 or w[-1] > max_condition * w[0]:
        return None
    Ainv_b = np.linalg.solve(A, b)
    rho = float(b @ Ainv_b - c)
    if not rho > 0:
        return None
    return (-Ainv_b, math.sqrt(rho / w[0]))


def default_ball_bound(sset: SemialgebraicSet, settings: Settings | None = None) -> float:
    """1.5 times the distance bound from the lowest-order Chebyshev ball."""
    r = grcc(sset.with_ball(None), None, None, sset.replace(ball_bound=None).min_order(), settings, frame=None,
             recheck=False)
    return 1.5 * (float(np.linalg.norm(r.mu)) + r.radius)


# ---------------------------------------------------------------------------
# relaxed Chebyshev centre
# ---------------------------------------------------------------------------

def rcc(
    sset: SemialgebraicSet,
    proj=None,
    settings: Settings | None = None,
    method: str = "moment",
    frame="auto",
) -> ChebyshevResult:
    """Relaxed Chebyshev centre of a set of quadratic constraints.

    ``method="moment"`` is the order-one GRCC with ``Q = I``.
    ``method="dual"`` solves the multiplier form instead: minimise
    ``b(a)^T A(a)^-1 b(a) - c(a)`` over ``a >= 0`` with ``A(a) >= P^T P``,
    where ``A(a), b(a), c(a)`` combine the constraints
    ``theta^T A_i theta + 2 b_i^T theta + c_i <= 0``; the centre is
    ``-P A(a)^-1 b(a)``.
    """
    if sset.max_degree > 2:
        raise RelaxationError("the relaxed Chebyshev centre needs constraints of degree <= 2")
    if method == "moment":
        return grcc(sset, proj, None, 1, settings, frame=frame)
    if method != "dual":
        raise ValueError(f"unknown method {method!r}")
    if isinstance(frame, str) and frame == "auto":
        # two stages: a rough frame from the summed constraints, then the
        # frame of the multiplier-form ball itself
        rough = rcc(sset, proj, settings, "dual", quadratic_frame(sset))
        if proj is None or list(ProjectionSpec.coerce(proj, sset.n).selection) == list(range(sset.n)):
            frame = (rough.mu, max(rough.radius, 1e-12))
        else:
            frame = None
    if frame is not None:
        shift = np.broadcast_to(np.asarray(frame[0], dtype=float), (sset.n,))
        scale = float(np.asarray(frame[1], dtype=float).reshape(-1)[0])
        if not np.allclose(frame[1], scale):
            raise ValueError("the multiplier form needs an isotropic frame")
        r = rcc(sset.affine_preimage(shift, scale), proj, settings, "dual", None)
        sel = list(ProjectionSpec.coerce(proj, sset.n).selection)
        r.mu = shift[sel] + scale * r.mu
        r.eta *= scale ** 2
        r.eta_normalized = r.eta
        return r
    t0 = time.perf_counter()
    proj = ProjectionSpec.coerce(proj, sset.n)
    n, d = sset.n, proj.d
    P = proj.matrix(n)
    quads = []  # (A, b, c, free)
    for g in sset.all_inequalities():
        quads.append((*_quadratic_parts(-g), False))
    for h in sset.equalities:
        quads.append((*_quadratic_parts(h), True))
    b = ProgramBuilder()
    alpha = b.add_variables(len(quads))
    t = int(b.add_variables(1)[0])
    k = n + 1
    rows, cols, vals = [], [], []
    for a_idx, (A, bb, c, free) in zip(alpha, quads):
        M = np.zeros((k, k))
        M[:n, :n] = A
        M[:n, n] = M[n, :n] = bb
        v = svec(M)
        nzr = np.nonzero(v)[0]
        rows.extend(nzr)
        cols.extend([a_idx] * nzr.size)
        vals.extend(v[nzr])
        if not free:
            b.add_constraint(sdpcore.NONNEG, 1, [0], [a_idx], [1.0], [0.0])
        b.add_linear_objective([a_idx], [-c])
    # [[A(a), b(a)], [b(a)^T, t]] >= 0
    b.add_constraint(PSD, k, rows + [svec_position(n, n)], cols + [t], vals + [1.0], np.zeros(svec_len(k)))
    # A(a) - P^T P >= 0
    rows2, cols2, vals2 = [], [], []
    for a_idx, (A, *_rest) in zip(alpha, quads):
        v = svec(A)
        nzr = np.nonzero(v)[0]
        rows2.extend(nzr)
        cols2.extend([a_idx] * nzr.size)
        vals2.extend(v[nzr])
    b.add_constraint(PSD, n, rows2, cols2, vals2, -svec(P.T @ P))
    b.add_linear_objective([t], [1.0])
    sol = sdpcore.solve(b.build(), settings)
    check_status(sol, "RCC multiplier program")
    a = sol.x[alpha]
    A = sum(ai * q[0] for ai, q in zip(a, quads))
    bv = sum(ai * q[1] for ai, q in zip(a, quads))
    c = sum(ai * q[2] for ai, q in zip(a, quads))
    theta = -np.linalg.lstsq(A, bv, rcond=None)[0]
    eta = float(bv @ np.linalg.lstsq(A, bv, rcond=None)[0] - c)
    # eta = min over multipliers equals the relaxed max of ||P theta||^2 - ||P E theta||^2
    return ChebyshevResult(
        mu=P @ theta, eta=max(eta, 0.0), Q=np.eye(d), kappa=1, eta_normalized=max(eta, 0.0),
        residuals=sol.residuals(), wall_time=time.perf_counter() - t0,
    )


def _quadratic_parts(f: Polynomial):
    """``(A, b, c)`` with ``f(theta) = theta^T A theta + 2 b^T theta + c``."""
    n = f.n
    A = 0.5 * f.hessian_of_quadratic_part()
    b = np.zeros(n)
    for i in range(n):
        b[i] = 0.5 * f.coef(tuple(int(j == i) for j in range(n)))
    return A, b, f.coef((0,) * n)
