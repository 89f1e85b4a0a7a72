"""Certificates that an enclosing ellipsoid is the minimum-volume one.

For a convex set ``S`` and an ellipsoid ``E`` found by the SOS program, the
polynomial problem ``min_{xi in S} 1 - q(xi)`` (``q`` the ellipsoid's
quadratic form) has value zero exactly when ``E`` touches ``S``. Its
minimisers are contact points; if positive weights make the weighted contact
points centred at the ellipsoid centre with second moment ``E^{-1}``, John's
theorem says ``E`` is the unique minimum-volume enclosing ellipsoid.

Minimisers are extracted from the moment matrix with the rank-gap and
column-echelon method. Every outcome is one of ``certified``,
``not_certified`` or ``inconclusive``; failing to find contact points or
weights never refutes optimality.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import linprog, minimize

from .mee import Ellipsoid, ProjectionSpec
from .polyalg import Polynomial
from .relax import (
    AssumptionError,
    PseudomomentSolution,
    RelaxationError,
    SemialgebraicSet,
    lower_bound,
)
from .sdpcore import Settings

log = logging.getLogger(__name__)

CERTIFIED = "certified"
NOT_CERTIFIED = "not_certified"
INCONCLUSIVE = "inconclusive"

RANK_GAP = 1e-3
EPS_TOUCH = 1e-6
BOUNDARY_TOL = 1e-5
MIN_WEIGHT = 1e-8


class Minimizers(list):
    """Extracted points; ``conclusive`` is False when no rank gap was found."""

    def __init__(self, points=(), rank: int = 0, conclusive: bool = True, singular_values=None):
        super().__init__(points)
        self.rank = rank
        self.conclusive = conclusive
        self.singular_values = singular_values


def numerical_rank(M, gap: float = RANK_GAP) -> tuple[int, np.ndarray]:
    """Rank at the first singular-value ratio below ``gap``; 0 when there is none."""
    sv = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if sv[0] <= 0:
        return 0, sv
    for r in range(1, sv.size):
        if sv[r] < gap * sv[r - 1]:
            return r, sv
    return 0, sv


def _echelon(W: np.ndarray, tol: float):
    """Reduced row echelon form of ``W`` (``r x s``) with pivots taken left to right."""
    R = W.copy()
    r, s = R.shape
    pivots = []
    row = 0
    scale = np.abs(W).max()
    for col in range(s):
        if row == r:
            break
        p = row + int(np.argmax(np.abs(R[row:, col])))
        if abs(R[p, col]) <= tol * scale:
            continue
        R[[row, p]] = R[[p, row]]
        R[row] /= R[row, col]
        others = np.arange(r) != row
        R[others] -= np.outer(R[others, col], R[row])
        pivots.append(col)
        row += 1
    if row < r:
        return None, pivots
    return R, pivots


def extract_minimizers(z: PseudomomentSolution, gap: float = RANK_GAP, seed: int = 0) -> Minimizers:
    """Atoms of the measure behind an (approximately) flat moment matrix.

    The rank ``r`` is read off a singular-value gap. For ``r = 1`` the point
    is the vector of first moments. Otherwise the moment matrix is factored
    as ``V V^T``, ``V^T`` is put in column-echelon form to express every
    monomial through ``r`` pivot monomials, and the points are the joint
    eigenvalues of the multiplication matrices, read from the Schur vectors
    of a random combination.
    """
    st = z.structure
    M = z.moment_matrix()
    r, sv = numerical_rank(M, gap)
    if r == 0:
        return Minimizers([], 0, False, sv)
    if r == 1:
        return Minimizers([z.first_moments().copy()], 1, True, sv)
    U, S, _ = np.linalg.svd(M)
    V = U[:, :r] * np.sqrt(S[:r])
    R, pivots = _echelon(V.T, 1e-6)
    if R is None:
        return Minimizers([], r, False, sv)
    basis = st.basis
    n = st.n
    N = []
    for l in range(n):
        Nl = np.empty((r, r))
        for i, p in enumerate(pivots):
            alpha = list(basis.entries[p])
            alpha[l] += 1
            alpha = tuple(alpha)
            if alpha not in basis:
                # pivot of top degree: the moment matrix is not flat at this order
                return Minimizers([], r, False, sv)
            Nl[i] = R[:, basis.index(alpha)]
        N.append(Nl)
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.1, 1.0, n)
    lam /= lam.sum()
    T, Qs = sla.schur(sum(c * Nl for c, Nl in zip(lam, N)), output="real")
    pts = [np.array([Qs[:, k] @ Nl @ Qs[:, k] for Nl in N]) for k in range(r)]
    return Minimizers(pts, r, True, sv)


def ellipsoid_gap_polynomial(ell: Ellipsoid, proj: ProjectionSpec, n: int) -> Polynomial:
    """``1 - (P theta - mu)^T E (P theta - mu)`` as a polynomial in ``theta``."""
    P = proj.matrix(n)
    A = P.T @ ell.E @ P
    b = -P.T @ ell.E @ ell.mu
    return Polynomial.quadratic(-A, -b, 1.0 - float(ell.mu @ ell.E @ ell.mu))


def _polish(sset: SemialgebraicSet, f: Polynomial, x0: np.ndarray) -> np.ndarray:
    """Local minimiser of ``f`` over the set near ``x0`` (kept only if no worse)."""
    cons = [{"type": "ineq", "fun": (lambda x, g=g: g(x))} for g in sset.all_inequalities()]
    cons += [{"type": "eq", "fun": (lambda x, h=h: h(x))} for h in sset.equalities]
    try:
        res = minimize(lambda x: f(x), x0, method="SLSQP", constraints=cons,
                       options={"maxiter": 200, "ftol": 1e-15})
    except (ValueError, np.linalg.LinAlgError):
        return x0
    x = res.x
    if sset.violation(x) <= max(1e-10, sset.violation(x0)) and f(x) <= f(x0) + 1e-12:
        return x
    return x0


def contact_points(
    sset: SemialgebraicSet,
    ell: Ellipsoid,
    order: int,
    proj=None,
    settings: Settings | None = None,
    eps: float = EPS_TOUCH,
) -> tuple[float, Minimizers]:
    """Order-``order`` bound ``rho`` of ``min 1 - q(xi)`` and the touching points.

    Points are returned in ``xi`` coordinates and only when ``|rho| <= eps``.
    Each extracted point is polished locally and kept when it lies on the
    ellipsoid boundary within ``BOUNDARY_TOL`` and in the set.
    """
    proj = ProjectionSpec.coerce(proj, sset.n)
    if ell.d != proj.d:
        raise ValueError(f"ellipsoid has dimension {ell.d}, projection has d={proj.d}")
    f = ellipsoid_gap_polynomial(ell, proj, sset.n)
    rho, pm = lower_bound(sset, f, order, settings)
    if abs(rho) > eps:
        return rho, Minimizers([], 0, True)
    raw = extract_minimizers(pm)
    candidates = list(raw)
    if not raw.conclusive:
        # a continuum of minimisers has no rank gap; start from the ends of
        # the principal axes of the relaxed distribution instead
        candidates = _axis_candidates(pm) + _ellipsoid_candidates(ell, proj, pm.first_moments())
    pts = []
    for x in candidates:
        x = _polish(sset, f, np.asarray(x, dtype=float))
        xi = proj.apply(x)
        on_boundary = abs(float(ell.quadratic_form(xi)[0]) - 1.0) <= BOUNDARY_TOL
        if on_boundary and sset.violation(x) <= BOUNDARY_TOL:
            if all(np.linalg.norm(xi - q) > 1e-6 for q in pts):
                pts.append(xi)
        else:
            log.info("candidate point %s rejected (form %.3e, violation %.1e)",
                     xi, float(ell.quadratic_form(xi)[0]), sset.violation(x))
    conclusive = raw.conclusive and len(pts) == len(raw)
    return rho, Minimizers(pts, raw.rank, conclusive, raw.singular_values)


def _ellipsoid_candidates(ell: Ellipsoid, proj: ProjectionSpec, theta0: np.ndarray) -> list:
    """Ends of the ellipsoid axes and, for small ``d``, its sign corners, lifted to ``theta``."""
    lam, V = np.linalg.eigh(ell.E)
    axes = V / np.sqrt(lam)
    dirs = [s * a for a in axes.T for s in (1.0, -1.0)]
    if ell.d <= 4:
        for signs in np.ndindex(*(2,) * ell.d):
            sgn = np.where(np.array(signs) == 1, 1.0, -1.0)
            dirs.append(axes @ sgn / np.sqrt(ell.d))
    sel = list(proj.selection)
    out = []
    for d in dirs:
        x = np.array(theta0, dtype=float)
        x[sel] = ell.mu + d
        out.append(x)
    return out


def _axis_candidates(pm: PseudomomentSolution) -> list:
    """``m +- sqrt(lambda_i) v_i`` from the relaxed mean and covariance."""
    n = pm.structure.n
    M = pm.moment_matrix()[: n + 1, : n + 1]
    m = M[0, 1:] / M[0, 0]
    cov = M[1:, 1:] / M[0, 0] - np.outer(m, m)
    lam, V = np.linalg.eigh(0.5 * (cov + cov.T))
    out = []
    for l, v in zip(lam, V.T):
        step = np.sqrt(max(l, 0.0)) * v
        out.extend([m + step, m - step])
    return out


@dataclass
class JohnCertificate:
    contact_points: list
    alpha: np.ndarray
    residual_center: float
    residual_shape: float
    delta: float
    outcome: str
    rho: float | None = None
    order: int | None = None
    info: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.outcome == CERTIFIED

    @property
    def residual(self) -> float:
        return max(self.residual_center, self.residual_shape)

    def used(self) -> np.ndarray:
        return np.flatnonzero(self.alpha >= MIN_WEIGHT)

    def to_json(self) -> dict:
        return {
            "outcome": self.outcome,
            "certified": self.certified,
            "contact_points": [np.asarray(p).tolist() for p in self.contact_points],
            "alpha": np.asarray(self.alpha).tolist(),
            "residual_center": self.residual_center,
            "residual_shape": self.residual_shape,
            "delta": self.delta,
            "rho": self.rho,
            "order": self.order,
            "info": self.info,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> JohnCertificate:
        return cls(
            contact_points=[np.array(p, dtype=float) for p in data["contact_points"]],
            alpha=np.array(data["alpha"], dtype=float),
            residual_center=float(data["residual_center"]),
            residual_shape=float(data["residual_shape"]),
            delta=float(data["delta"]),
            outcome=data["outcome"],
            rho=data.get("rho"),
            order=data.get("order"),
            info=dict(data.get("info", {})),
        )


def john_system(points, ell: Ellipsoid) -> tuple[np.ndarray, np.ndarray, int]:
    """``(A, b, d)``: ``A alpha = b`` stacks the centring and second-moment equations.

    Off-diagonal second-moment rows carry a ``sqrt 2`` weight so that the
    residual of those rows is the Frobenius norm of the matrix residual.
    """
    U = np.atleast_2d(np.asarray(points, dtype=float)) - ell.mu
    d = ell.d
    Einv = np.linalg.inv(ell.E)
    iu, ju = np.triu_indices(d)
    w = np.where(iu == ju, 1.0, np.sqrt(2.0))
    A = np.vstack([U.T, w[:, None] * (U[:, iu] * U[:, ju]).T])
    b = np.r_[np.zeros(d), w * Einv[iu, ju]]
    return A, b, d


def john_feasibility(points, ell: Ellipsoid, delta: float | None = None) -> JohnCertificate:
    """Nonnegative weights for John's conditions, by an L1-residual linear program.

    The LP minimises the absolute residual over ``alpha >= 0``; the simplex
    solution is a vertex, so few weights are nonzero. Certified when both
    residuals are at most ``delta`` (default ``1e-6 (1 + ||E^{-1}||_F)``).
    """
    pts = [np.asarray(p, dtype=float) for p in points]
    Einv = np.linalg.inv(ell.E)
    if delta is None:
        delta = 1e-6 * (1.0 + np.linalg.norm(Einv))
    K = len(pts)
    if K == 0:
        return JohnCertificate([], np.zeros(0), np.inf, float(np.linalg.norm(Einv)), delta, NOT_CERTIFIED)
    A, b, d = john_system(pts, ell)
    m = A.shape[0]
    # variables: alpha (K), s+ (m), s- (m)
    c = np.r_[np.zeros(K), np.ones(2 * m)]
    Aeq = sp.hstack([sp.csr_matrix(A), sp.identity(m), -sp.identity(m)]).tocsr()
    res = linprog(c, A_eq=Aeq, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        log.warning("John LP failed: %s", res.message)
        return JohnCertificate(pts, np.zeros(K), np.inf, np.inf, delta, INCONCLUSIVE, info={"lp": res.message})
    alpha = res.x[:K]
    alpha[alpha < MIN_WEIGHT] = 0.0
    r = A @ alpha - b
    rc = float(np.linalg.norm(r[:d]))
    rs = float(np.linalg.norm(r[d:]))
    ok = rc <= delta and rs <= delta and np.any(alpha > 0)
    return JohnCertificate(pts, alpha, rc, rs, delta, CERTIFIED if ok else NOT_CERTIFIED)


def looks_convex(sset: SemialgebraicSet) -> bool:
    """Heuristic: no equalities and every inequality has a concave quadratic part."""
    if sset.equalities:
        return False
    for g in sset.inequalities:
        H = g.hessian_of_quadratic_part()
        if np.linalg.eigvalsh(H)[-1] > 1e-10 * max(1.0, np.abs(H).max()):
            return False
    return True


def certify(
    sset: SemialgebraicSet,
    ell: Ellipsoid,
    proj=None,
    order: int | None = None,
    settings: Settings | None = None,
    max_order: int | None = None,
    assume_convex: bool = False,
) -> JohnCertificate:
    """Full certificate check for an ellipsoid enclosing the projection of ``sset``.

    With ``order=None`` the relaxation order rises from the lowest admissible
    one until the extraction is conclusive (at most ``max_order``, default
    lowest + 3).
    """
    t0 = time.perf_counter()
    if not (assume_convex or looks_convex(sset)):
        raise AssumptionError("the set does not look convex; pass assume_convex=True to certify anyway")
    low = max(sset.min_order(), 1)
    orders = [order] if order is not None else list(range(low, (max_order or low + 3) + 1))
    last = None
    for nu in orders:
        try:
            rho, pts = contact_points(sset, ell, nu, proj, settings)
        except RelaxationError as err:
            log.info("certificate relaxation at order %d failed: %s", nu, err)
            last = JohnCertificate([], np.zeros(0), np.inf, np.inf, np.inf, INCONCLUSIVE, None, nu,
                                   {"error": str(err)})
            continue
        info = {"rank": pts.rank, "wall_time": time.perf_counter() - t0}
        if rho > EPS_TOUCH:
            return JohnCertificate([], np.zeros(0), np.inf, np.inf, np.inf, NOT_CERTIFIED, rho, nu,
                                   {**info, "reason": "ellipsoid does not touch the set"})
        if rho < -EPS_TOUCH:
            last = JohnCertificate([], np.zeros(0), np.inf, np.inf, np.inf, INCONCLUSIVE, rho, nu,
                                   {**info, "reason": "negative relaxation bound"})
            continue
        if not pts:
            last = JohnCertificate([], np.zeros(0), np.inf, np.inf, np.inf, INCONCLUSIVE, rho, nu,
                                   {**info, "reason": "no contact points found"})
            continue
        cert = john_feasibility(pts, ell)
        cert.rho, cert.order = rho, nu
        cert.info.update(info)
        cert.info["wall_time"] = time.perf_counter() - t0
        if cert.certified or pts.conclusive:
            return cert
        # points found by local search may miss some contacts: a failed
        # weight search then says nothing
        cert.outcome = INCONCLUSIVE
        cert.info["reason"] = "contact points incomplete"
        last = cert
    return last
