"""Minimum enclosing ellipsoids of projected semialgebraic sets via SOS programs.

For a set ``S`` in ``theta`` and a coordinate selection ``xi = P theta`` the
order-``kappa`` program finds ``L = [[E, b], [b^T, c]] >= 0`` maximising
``log det E`` subject to the polynomial identity

    1 - (xi^T E xi + 2 b^T xi + c) = sigma_0 + sum_i sigma_i g_i + sum_j lambda_j h_j

with SOS multipliers ``sigma_i`` (PSD Gram matrices) and free polynomial
multipliers ``lambda_j``. Any feasible point certifies that ``S_xi`` lies in
``{xi : xi^T E xi + 2 b^T xi + c <= 1}``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

from . import sdpcore
from .polyalg import Polynomial, monomial_basis
from .relax import (
    MomentStructure,
    InfeasibleError,
    RelaxationError,
    SemialgebraicSet,
    add_moment_constraints,
    build_structure,
)
from .sdpcore import NONNEG, PSD, SOC, ZERO, ProgramBuilder, Settings, SymmetricVariable, svec, svec_len

log = logging.getLogger(__name__)


class DegenerateSetError(RelaxationError):
    """The projected set has empty interior, so its MEE has zero volume."""


@dataclass(frozen=True)
class ProjectionSpec:
    """Coordinates ``theta[selection]`` (zero-based) forming ``xi``."""

    selection: tuple[int, ...]

    def __post_init__(self):
        sel = tuple(int(i) for i in self.selection)
        if len(set(sel)) != len(sel):
            raise ValueError("projection indices must be distinct")
        if any(i < 0 for i in sel):
            raise ValueError("projection indices must be non-negative")
        object.__setattr__(self, "selection", sel)

    @classmethod
    def identity(cls, n: int) -> ProjectionSpec:
        return cls(tuple(range(n)))

    @classmethod
    def coerce(cls, proj, n: int) -> ProjectionSpec:
        if proj is None:
            return cls.identity(n)
        if isinstance(proj, ProjectionSpec):
            out = proj
        else:
            out = cls(tuple(proj))
        if max(out.selection) >= n:
            raise ValueError(f"projection index {max(out.selection)} out of range for n={n}")
        return out

    @property
    def d(self) -> int:
        return len(self.selection)

    def matrix(self, n: int) -> np.ndarray:
        P = np.zeros((self.d, n))
        P[np.arange(self.d), self.selection] = 1.0
        return P

    def apply(self, theta) -> np.ndarray:
        return np.asarray(theta, dtype=float)[..., list(self.selection)]


@dataclass
class Ellipsoid:
    """``{xi : (xi - mu)^T E (xi - mu) <= 1}``."""

    E: np.ndarray
    mu: np.ndarray
    kappa: int | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.E = np.atleast_2d(np.asarray(self.E, dtype=float))
        self.E = 0.5 * (self.E + self.E.T)
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if self.E.shape != (self.d, self.d):
            raise ValueError("E and mu dimensions disagree")

    @property
    def d(self) -> int:
        return self.mu.size

    @property
    def logdet(self) -> float:
        sign, ld = np.linalg.slogdet(self.E)
        return ld if sign > 0 else -math.inf

    @property
    def b(self) -> np.ndarray:
        return -self.E @ self.mu

    @property
    def c(self) -> float:
        return float(self.mu @ self.E @ self.mu)

    def volume(self) -> float:
        d = self.d
        unit = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
        return unit * math.exp(-0.5 * self.logdet)

    def semi_axes(self) -> np.ndarray:
        return 1.0 / np.sqrt(np.linalg.eigvalsh(self.E))

    def quadratic_form(self, points) -> np.ndarray:
        X = np.atleast_2d(np.asarray(points, dtype=float)) - self.mu
        return np.einsum("ij,jk,ik->i", X, self.E, X)

    def contains(self, point, tol: float = 1e-6) -> bool:
        return bool(self.quadratic_form(point)[0] <= 1 + tol)

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "E": self.E.tolist(),
            "mu": self.mu.tolist(),
            "logdet": self.logdet,
            "kappa": self.kappa,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> Ellipsoid:
        return cls(np.array(data["E"], dtype=float), np.array(data["mu"], dtype=float), data.get("kappa"))

    @classmethod
    def from_quadratic(cls, E, b, c, kappa=None) -> Ellipsoid:
        """Ellipsoid ``xi^T E xi + 2 b^T xi + c <= 1``."""
        E = np.asarray(E, dtype=float)
        b = np.asarray(b, dtype=float)
        mu = -np.linalg.solve(E, b)
        rho = 1.0 - c + float(b @ np.linalg.solve(E, b))
        if rho <= 0:
            raise ValueError("quadratic triple describes an empty set")
        return cls(E / rho, mu, kappa)


def enclosure_check(ell: Ellipsoid, samples, tol: float = 1e-6) -> tuple[bool, float]:
    """Whether all samples lie in ``ell``; also the largest ``form - 1``."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[1] != ell.d:
        raise ValueError(f"samples have dimension {X.shape[1]}, ellipsoid has d={ell.d}")
    viol = float(np.max(ell.quadratic_form(X)) - 1.0)
    return viol <= tol, viol


# ---------------------------------------------------------------------------
# log-det maximisation
# ---------------------------------------------------------------------------

@dataclass
class LogdetResult:
    E: np.ndarray
    x: np.ndarray
    logdet: float
    iterations: int
    status: str
    history: list = field(default_factory=list)
    solution: sdpcore.ConicSolution | None = None


def _geomean_constraints(b: ProgramBuilder, leaves: Sequence[int], t: int) -> None:
    """Add ``t <= (prod leaves)^(1/len(leaves))`` with rotated second-order cones."""
    k = len(leaves)
    if k == 1:
        b.add_constraint(NONNEG, 1, [0, 0], [leaves[0], t], [1.0, -1.0], [0.0])
        return
    L = 1 << (k - 1).bit_length()
    level = list(leaves) + [t] * (L - k)
    while len(level) > 1:
        nxt = []
        for a, c in zip(level[::2], level[1::2]):
            u = int(b.add_variables(1)[0])
            # (a + c, 2u, a - c) in SOC  <=>  u^2 <= a c, a, c >= 0
            b.add_constraint(SOC, 3, [0, 0, 1, 2, 2], [a, c, u, a, c], [1.0, 1.0, 2.0, 1.0, -1.0], np.zeros(3))
            nxt.append(u)
        level = nxt
    b.add_constraint(NONNEG, 1, [0, 0], [level[0], t], [1.0, -1.0], [0.0])


def add_logdet_epigraph(b: ProgramBuilder, E: SymmetricVariable) -> int:
    """Return a variable ``t`` with ``t <= det(E)^(1/k)`` enforced conically."""
    k = E.k
    # [[E, D], [D^T, diag(D)]] >= 0 with D lower triangular
    dvars = {}
    for i in range(k):
        for j in range(i + 1):
            dvars[(i, j)] = int(b.add_variables(1)[0])
    size = 2 * k
    rows, cols, vals = [], [], []
    for j in range(k):
        for i in range(j + 1):
            rows.append(sdpcore.svec_position(i, j))
            cols.append(E.index(i, j))
            vals.append(1.0)  # E stored in svec already carries the sqrt(2) factor
    for (i, j), v in dvars.items():
        # block entry (i, k + j)
        rows.append(sdpcore.svec_position(i, k + j))
        cols.append(v)
        vals.append(math.sqrt(2.0))
    for j in range(k):
        rows.append(sdpcore.svec_position(k + j, k + j))
        cols.append(dvars[(j, j)])
        vals.append(1.0)
    b.add_constraint(PSD, size, rows, cols, vals, np.zeros(svec_len(size)))
    t = int(b.add_variables(1)[0])
    _geomean_constraints(b, [dvars[(j, j)] for j in range(k)], t)
    return t


def maximize_logdet(
    builder: ProgramBuilder,
    E: SymmetricVariable,
    method: str = "conic",
    settings: Settings | None = None,
    max_outer: int = 50,
    tol: float = 1e-6,
) -> LogdetResult:
    """Maximise ``log det E`` over the feasible set described by ``builder``.

    ``builder`` must carry the constraints only (its objective is replaced).
    ``method="conic"`` maximises ``det(E)^(1/k)`` exactly with a PSD block and a
    second-order-cone geometric-mean tree. ``method="linearized"`` starts from
    a max-trace solution and repeatedly maximises ``tr(W_k E)`` with
    ``W_k = E_k^{-1}``, taking an exact line search toward each linear-SDP
    solution so that ``log det E_k`` never decreases.

    The log-det optimum is flat, so a solve to tolerance ``eps`` pins ``E``
    down only to about ``sqrt(eps)``; certificates need ``eps`` near 1e-12.
    """
    if method == "conic":
        b = _copy_builder(builder)
        b._c = {}
        t = add_logdet_epigraph(b, E)
        b.add_linear_objective([t], [-1.0])
        sol = sdpcore.solve(b.build(), settings)
        if sol.status == sdpcore.DUAL_INFEASIBLE:
            raise DegenerateSetError("log det is unbounded above: the set is flat in some direction",
                                     sol.status)
        _check(sol, "log-det program")
        Ev = E.value(sol.x)
        ld = _logdet(Ev)
        return LogdetResult(Ev, sol.x, ld, 1, sol.status, [ld], sol)
    if method != "linearized":
        raise ValueError(f"unknown log-det method {method!r}")

    prog = builder.build()
    idx = E.indices
    k = E.k

    def solve_linear(W):
        c = np.zeros(prog.n)
        c[idx] = -svec(W)
        p = sdpcore.ConicProgram(c=c, A=prog.A, b=prog.b, cones=prog.cones, P=None)
        s = sdpcore.solve(p, settings)
        if s.status == sdpcore.DUAL_INFEASIBLE:
            raise DegenerateSetError("trace objective unbounded: the set is flat", s.status)
        _check(s, "linearised log-det step")
        return s

    sol = solve_linear(np.eye(k))
    x = sol.x
    Ecur = E.value(x)
    ld = _logdet(Ecur)
    history = [ld]
    status = sdpcore.MAX_ITERS
    it = 0
    for it in range(1, max_outer + 1):
        W = np.linalg.inv(Ecur + 1e-8 * np.eye(k))
        s = solve_linear(W)
        Ehat = E.value(s.x)

        def neg(tau):
            return -_logdet(Ecur + tau * (Ehat - Ecur))

        r = minimize_scalar(neg, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-10})
        tau = float(r.x) if -r.fun >= ld else 0.0
        x = x + tau * (s.x - x)
        Ecur = E.value(x)
        new = _logdet(Ecur)
        history.append(new)
        if abs(new - ld) < tol:
            ld = new
            status = sdpcore.OPTIMAL
            break
        ld = new
    return LogdetResult(Ecur, x, ld, it, status, history, sol)


def _logdet(E) -> float:
    sign, ld = np.linalg.slogdet(0.5 * (E + E.T))
    return ld if sign > 0 else -math.inf


def _check(sol: sdpcore.ConicSolution, what: str) -> None:
    from .relax import check_status

    check_status(sol, what)


def _copy_builder(b: ProgramBuilder) -> ProgramBuilder:
    out = ProgramBuilder()
    out.nvar = b.nvar
    out._blocks = list(b._blocks)
    out._c = dict(b._c)
    out._P = list(b._P)
    out.offset = b.offset
    return out


# ---------------------------------------------------------------------------
# the SOS program
# ---------------------------------------------------------------------------

@dataclass
class SOSCertificate:
    grams: list[np.ndarray]  # sigma_0 first, then one per inequality (ball last if present)
    lambdas: list[np.ndarray]  # coefficient vectors over the graded-lex basis of each multiplier
    kappa: int
    L: np.ndarray  # [[E, b], [b^T, c]] as solved

    def residual(self, sset: SemialgebraicSet, proj: ProjectionSpec) -> float:
        """Max coefficient of ``1 - q(xi) - sum sigma_i g_i - sum lambda_j h_j``."""
        return certificate_residual(self, sset, proj)


def gram_polynomial(G, n: int, order: int) -> Polynomial:
    B = monomial_basis(n, order)
    G = np.asarray(G)
    terms = {}
    for a, alpha in enumerate(B.entries):
        for b, beta in enumerate(B.entries):
            g = tuple(x + y for x, y in zip(alpha, beta))
            terms[g] = terms.get(g, 0.0) + G[a, b]
    return Polynomial(n, terms)


def certificate_residual(cert: SOSCertificate, sset: SemialgebraicSet, proj: ProjectionSpec) -> float:
    n = sset.n
    d = proj.d
    E, bvec, c = cert.L[:d, :d], cert.L[:d, d], cert.L[d, d]
    xs = Polynomial.variables(n)
    xi = [xs[i] for i in proj.selection]
    q = Polynomial.constant(n, c)
    for i in range(d):
        q = q + 2.0 * bvec[i] * xi[i]
        for j in range(d):
            q = q + E[i, j] * xi[i] * xi[j]
    lhs = 1.0 - q
    rhs = gram_polynomial(cert.grams[0], n, cert.kappa)
    for G, g in zip(cert.grams[1:], sset.all_inequalities()):
        order = cert.kappa - math.ceil(g.degree / 2)
        rhs = rhs + gram_polynomial(G, n, order) * g
    for lam, h in zip(cert.lambdas, sset.equalities):
        B = monomial_basis(n, 2 * cert.kappa - h.degree)
        rhs = rhs + Polynomial.from_coefficients(B, lam) * h
    return (lhs - rhs).max_abs_coef()


@dataclass
class MEEResult:
    ellipsoid: Ellipsoid
    certificate: SOSCertificate
    logdet: float
    normalization_gap: float  # c - b^T E^{-1} b of the solved triple
    residuals: dict
    wall_time: float


def build_mee_program(st: MomentStructure, proj: ProjectionSpec):
    """Constraints of the SOS program; returns (builder, L variable, grams, lambda indices)."""
    n, nz = st.n, st.nz
    d = proj.d
    b = ProgramBuilder()
    L = b.add_psd_variable(d + 1)
    grams = [b.add_psd_variable(len(st.basis))]
    for loc in st.localizers:
        grams.append(b.add_psd_variable(loc.size))
    lam = b.add_variables(st.equality_rows.shape[0])

    # identity rows: coef_alpha[q(xi)] + sum grams + lambdas = coef_alpha[1]
    rows, cols, vals = [], [], []

    def add_map(F: sp.spmatrix, var_indices):
        Ft = sp.coo_matrix(F.T)  # (nz, len(var))
        rows.extend(Ft.row)
        cols.extend(np.asarray(var_indices)[Ft.col])
        vals.extend(Ft.data)

    add_map(st.moment_F, grams[0].indices)
    for loc, G in zip(st.localizers, grams[1:]):
        add_map(loc.F, G.indices)
    if lam.size:
        add_map(st.equality_rows, lam)
    # quadratic form coefficients
    sel = proj.selection
    e = [tuple(int(k == i) for k in range(n)) for i in range(n)]
    zero = (0,) * n
    rows.append(st.index_map[zero]); cols.append(L.index(d, d)); vals.append(1.0)
    for i in range(d):
        rows.append(st.index_map[e[sel[i]]]); cols.append(L.index(i, d)); vals.append(2.0 / math.sqrt(2.0))
        for j in range(i, d):
            mono = tuple(a + bb for a, bb in zip(e[sel[i]], e[sel[j]]))
            rows.append(st.index_map[mono]); cols.append(L.index(i, j))
            vals.append(1.0 if i == j else 2.0 / math.sqrt(2.0))
    F = sp.coo_matrix((vals, (rows, cols)), shape=(nz, b.nvar))
    rhs = np.zeros(nz)
    rhs[st.index_map[zero]] = 1.0
    b.add_affine(ZERO, F, -rhs)
    return b, L, grams, lam


#: relative spread below which the projected set counts as flat
FLAT_RATIO = 1e-8


def covariance_floor(st: MomentStructure, proj: ProjectionSpec, settings: Settings | None = None) -> float:
    """Largest ``lambda_min`` of the pseudomoment covariance of ``xi``, relative to its mean eigenvalue.

    Every measure on the set has covariance no larger than what the
    relaxation allows, so a value near zero means the projected set lies in
    an affine subspace. Returns ``inf`` when the relaxation is unbounded.
    """
    d = proj.d
    b = ProgramBuilder()
    z = add_moment_constraints(b, st)
    t = int(b.add_variables(1)[0])
    first = st.first_moment_indices()[list(proj.selection)]
    second = st.second_moment_indices()[np.ix_(proj.selection, proj.selection)]
    rows, cols, vals = [], [], []
    for j in range(d):
        for i in range(j + 1):
            w = 1.0 if i == j else math.sqrt(2.0)
            rows.append(sdpcore.svec_position(i, j)); cols.append(z[second[i, j]]); vals.append(w)
        rows.append(sdpcore.svec_position(j, j)); cols.append(t); vals.append(-1.0)
        rows.append(sdpcore.svec_position(j, d)); cols.append(z[first[j]]); vals.append(math.sqrt(2.0))
    const = np.zeros(svec_len(d + 1))
    const[sdpcore.svec_position(d, d)] = 1.0
    b.add_constraint(PSD, d + 1, rows, cols, vals, const)
    b.add_linear_objective([t], [-1.0])
    sol = sdpcore.solve(b.build(), settings)
    if sol.status == sdpcore.DUAL_INFEASIBLE:
        return math.inf
    _check(sol, "covariance bound")
    m = sol.x[z[first]]
    cov = sol.x[z[second]] - np.outer(m, m)
    scale = max(float(np.trace(cov)) / d, 1e-300)
    return float(sol.x[t]) / scale


def mee_sos(
    sset: SemialgebraicSet,
    proj=None,
    kappa: int | None = None,
    settings: Settings | None = None,
    method: str = "conic",
    frame="auto",
    check_flat: bool = True,
) -> MEEResult:
    """Order-``kappa`` SOS minimum enclosing ellipsoid of the projection of ``sset``.

    ``frame=(shift, scale)`` solves in coordinates ``y`` with
    ``theta = shift + scale * y`` and maps the ellipsoid back, which helps when
    the set is tiny or far from the origin. ``"auto"`` takes the frame from a
    lowest-order Chebyshev ball, but only when the set is badly scaled; the
    SOS certificate then refers to the framed set. ``check_flat`` first bounds
    the covariance of any measure on the set and raises
    :class:`DegenerateSetError` when the projected set is flat.
    """
    t0 = time.perf_counter()
    proj = ProjectionSpec.coerce(proj, sset.n)
    kappa = kappa or sset.min_order()
    if isinstance(frame, str):
        frame = _auto_frame(sset, settings) if frame == "auto" else None
    work = sset
    if frame is not None:
        shift, scale = frame[0], frame[1]
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (sset.n,))
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (sset.n,))
        bb = frame[2] if len(frame) > 2 else None
        work = sset.affine_preimage(shift, scale, bb)
    st = build_structure(work, kappa)
    if check_flat:
        ratio = covariance_floor(st, proj, settings)
        if ratio < FLAT_RATIO:
            raise DegenerateSetError(
                f"projected set is flat (relative covariance floor {ratio:.1e}); its MEE has zero volume"
            )
    b, L, grams, lam = build_mee_program(st, proj)
    Lsub = SymmetricVariable(proj.d, L.offset)  # leading block of L shares svec positions
    try:
        res = maximize_logdet(b, Lsub, method=method, settings=settings)
    except (InfeasibleError, DegenerateSetError):
        raise
    except RelaxationError as err:
        # the optimum is approached only as E becomes singular
        raise DegenerateSetError(f"no enclosing ellipsoid of positive volume at order {kappa}: {err}") from err
    x = res.x
    Lval = L.value(x)
    d = proj.d
    E, bv, c = Lval[:d, :d], Lval[:d, d], Lval[d, d]
    lam_E = np.linalg.eigvalsh(E)
    if lam_E[0] <= 1e-10 * max(lam_E[-1], 1.0):
        raise DegenerateSetError(
            f"order-{kappa} ellipsoid is singular (smallest eigenvalue {lam_E[0]:.1e}); "
            "the set is flat or the order is too low to bound it"
        )
    gap = float(c - bv @ np.linalg.solve(E, bv))
    ell = Ellipsoid.from_quadratic(E, bv, c, kappa)
    cert = SOSCertificate(
        grams=[G.value(x) for G in grams],
        lambdas=_split_lambdas(x[lam], work, kappa),
        kappa=kappa,
        L=Lval,
    )
    if frame is not None:
        sh = shift[list(proj.selection)]
        sc = scale[list(proj.selection)]
        Dinv = np.diag(1.0 / sc)
        ell = Ellipsoid(Dinv @ ell.E @ Dinv, sh + sc * ell.mu, kappa)
    residuals = res.solution.residuals() if res.solution is not None else {}
    residuals["certificate"] = certificate_residual(cert, work, proj)
    ell.info = {"normalization_gap": gap, "frame": frame is not None}
    return MEEResult(ell, cert, ell.logdet, gap, residuals, time.perf_counter() - t0)


def _auto_frame(sset: SemialgebraicSet, settings: Settings | None):
    """Chebyshev-ball frame when the set is far from unit size, else ``None``."""
    from .grcc import auto_frame

    try:
        shift, scale, _ = auto_frame(sset, settings, None)
    except RelaxationError as err:
        log.info("no automatic frame (%s); solving in the original coordinates", err)
        return None
    if 0.1 <= scale <= 10 and np.linalg.norm(shift) <= scale:
        return None
    return (shift, scale)


def _split_lambdas(vec, sset: SemialgebraicSet, kappa: int) -> list[np.ndarray]:
    out, pos = [], 0
    for h in sset.equalities:
        k = len(monomial_basis(sset.n, 2 * kappa - h.degree))
        out.append(np.asarray(vec[pos:pos + k]))
        pos += k
    return out
