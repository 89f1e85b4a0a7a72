"""Moment relaxations of polynomial optimisation over basic semialgebraic sets.

A pseudomoment vector ``z`` holds one entry per monomial of degree at most
``2 kappa`` (graded-lex order, see :mod:`sosmee.polyalg`). The order-``kappa``
relaxation imposes

* ``M_kappa(z) >= 0`` (moment matrix),
* ``M_{kappa - ceil(deg g / 2)}(g z) >= 0`` for every inequality ``g >= 0``,
* ``L_z(h * m) = 0`` for every equality ``h = 0`` and monomial ``m`` of degree
  at most ``2 kappa - deg h``,
* ``z_0 = 1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import sdpcore
from .polyalg import MonomialBasis, Polynomial, monomial_basis
from .sdpcore import NONNEG, PSD, ZERO, ProgramBuilder, Settings, svec_len, svec_position

log = logging.getLogger(__name__)

#: PSD feasibility tolerance on returned moment matrices (relative to their scale).
EPS_PSD = 1e-6


class RelaxationError(RuntimeError):
    """Raised when a relaxation cannot be built or solved."""

    def __init__(self, message: str, status: str | None = None):
        super().__init__(message)
        self.status = status


class InfeasibleError(RelaxationError):
    pass


class AssumptionError(RuntimeError):
    """A modelling assumption (branch, convexity) does not hold or cannot be checked."""


@dataclass
class SemialgebraicSet:
    """``{theta in R^n : g_i(theta) >= 0, h_j(theta) = 0}`` with an optional ball."""

    n: int
    inequalities: list[Polynomial] = field(default_factory=list)
    equalities: list[Polynomial] = field(default_factory=list)
    ball_bound: float | None = None

    def __post_init__(self):
        self.inequalities = list(self.inequalities)
        self.equalities = list(self.equalities)
        for p in self.inequalities + self.equalities:
            if p.n != self.n:
                raise ValueError(f"polynomial in {p.n} variables, set has n={self.n}")
        if self.ball_bound is not None:
            self.ball_bound = float(self.ball_bound)
            if not self.ball_bound > 0:
                raise ValueError("ball_bound must be positive")

    def ball_polynomial(self) -> Polynomial | None:
        if self.ball_bound is None:
            return None
        return Polynomial.quadratic(-np.eye(self.n), None, self.ball_bound**2)

    def all_inequalities(self) -> list[Polynomial]:
        """Inequalities including the Archimedean ball when it is set."""
        ball = self.ball_polynomial()
        return self.inequalities + ([ball] if ball is not None else [])

    @property
    def max_degree(self) -> int:
        return max([p.degree for p in self.all_inequalities() + self.equalities] + [0])

    def min_order(self) -> int:
        return max(1, math.ceil(self.max_degree / 2))

    def contains(self, point, tol: float = 1e-9) -> bool:
        return self.violation(point) <= tol

    def violation(self, point) -> float:
        x = np.asarray(point, dtype=float)
        worst = 0.0
        for g in self.all_inequalities():
            worst = max(worst, -g(x))
        for h in self.equalities:
            worst = max(worst, abs(h(x)))
        return worst

    def violations(self, points) -> np.ndarray:
        X = np.atleast_2d(np.asarray(points, dtype=float))
        worst = np.zeros(X.shape[0])
        for g in self.all_inequalities():
            worst = np.maximum(worst, -g.evaluate_many(X))
        for h in self.equalities:
            worst = np.maximum(worst, np.abs(h.evaluate_many(X)))
        return worst

    def replace(self, inequalities=None, equalities=None, ball_bound="keep") -> SemialgebraicSet:
        return SemialgebraicSet(
            self.n,
            self.inequalities if inequalities is None else inequalities,
            self.equalities if equalities is None else equalities,
            self.ball_bound if ball_bound == "keep" else ball_bound,
        )

    def with_ball(self, radius: float | None) -> SemialgebraicSet:
        return self.replace(ball_bound=radius)

    def translate(self, v) -> SemialgebraicSet:
        """The set shifted by ``v`` (requires no ball, or keeps it explicit)."""
        v = np.asarray(v, dtype=float)
        return self.affine_image(shift=v, scale=1.0)

    def affine_preimage(self, shift, scale, ball_bound: float | None = None) -> SemialgebraicSet:
        """Set in ``y`` of points with ``shift + scale * y`` in this set.

        The Archimedean ball of the original set, if any, becomes an explicit
        inequality; ``ball_bound`` sets a new ball in ``y`` coordinates.
        """
        ineq = [g.affine_substitute(shift, scale) for g in self.all_inequalities()]
        eq = [h.affine_substitute(shift, scale) for h in self.equalities]
        ineq = [_normalise(g) for g in ineq]
        eq = [_normalise(h) for h in eq]
        return SemialgebraicSet(self.n, ineq, eq, ball_bound)

    def affine_image(self, shift, scale) -> SemialgebraicSet:
        """Set of ``shift + scale * theta`` for theta in this set."""
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.n,))
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (self.n,))
        ineq = [g.affine_substitute(-shift / scale, 1.0 / scale) for g in self.all_inequalities()]
        eq = [h.affine_substitute(-shift / scale, 1.0 / scale) for h in self.equalities]
        return SemialgebraicSet(self.n, ineq, eq, None)

    # -- io -----------------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "n": self.n,
            "ineq": [p.to_json() for p in self.inequalities],
            "eq": [p.to_json() for p in self.equalities],
            "ball_bound": self.ball_bound,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> SemialgebraicSet:
        n = int(data["n"])
        polys = []
        for key in ("ineq", "eq"):
            lst = []
            for p in data.get(key, []) or []:
                p = dict(p)
                p.setdefault("n", n)
                lst.append(Polynomial.from_json(p))
            polys.append(lst)
        return cls(n, polys[0], polys[1], data.get("ball_bound"))


def _normalise(p: Polynomial) -> Polynomial:
    """Scale a constraint polynomial to unit max coefficient (same zero set and sign)."""
    m = p.max_abs_coef()
    return p / m if m > 0 else p


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------

@dataclass
class Localizer:
    poly: Polynomial
    order: int  # basis degree of the localizing matrix
    size: int
    F: sp.csr_matrix  # svec(M(g z)) = F z


class MomentStructure:
    """Index bookkeeping for the order-``kappa`` relaxation of a set."""

    def __init__(self, sset: SemialgebraicSet, kappa: int):
        need = max(2, sset.max_degree)
        if 2 * kappa < need:
            raise RelaxationError(
                f"relaxation order {kappa} too small for constraint degree {sset.max_degree}"
            )
        self.set = sset
        self.n = sset.n
        self.kappa = kappa
        self.basis = monomial_basis(self.n, kappa)
        self.zbasis = monomial_basis(self.n, 2 * kappa)
        self.nz = len(self.zbasis)
        self.index_map = self.zbasis._index
        s = len(self.basis)
        idx = np.empty((s, s), dtype=int)
        for a, alpha in enumerate(self.basis.entries):
            for b in range(a, s):
                beta = self.basis.entries[b]
                k = self.index_map[tuple(x + y for x, y in zip(alpha, beta))]
                idx[a, b] = idx[b, a] = k
        self.moment_entries = idx
        self.moment_F = _psd_map(idx, self.nz)
        self.localizers = [self._localizer(g) for g in sset.all_inequalities()]
        self.equality_rows = self._equalities(sset.equalities)

    def _localizer(self, g: Polynomial) -> Localizer:
        order = self.kappa - math.ceil(g.degree / 2)
        B = monomial_basis(self.n, order)
        s = len(B)
        rows, cols, vals = [], [], []
        terms = list(g.items())
        for a in range(s):
            alpha = B.entries[a]
            for b in range(a, s):
                beta = B.entries[b]
                pos = svec_position(a, b)
                scale = 1.0 if a == b else math.sqrt(2.0)
                for gam, c in terms:
                    k = self.index_map[tuple(x + y + w for x, y, w in zip(alpha, beta, gam))]
                    rows.append(pos)
                    cols.append(k)
                    vals.append(c * scale)
        F = sp.csr_matrix((vals, (rows, cols)), shape=(svec_len(s), self.nz))
        return Localizer(g, order, s, F)

    def _equalities(self, eqs: Sequence[Polynomial]) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        r = 0
        for h in eqs:
            B = monomial_basis(self.n, 2 * self.kappa - h.degree)
            for beta in B.entries:
                for gam, c in h.items():
                    rows.append(r)
                    cols.append(self.index_map[tuple(x + y for x, y in zip(beta, gam))])
                    vals.append(c)
                r += 1
        return sp.csr_matrix((vals, (rows, cols)), shape=(r, self.nz))

    def moment_matrix(self, z) -> np.ndarray:
        return np.asarray(z)[self.moment_entries]

    def localizing_matrix(self, i: int, z) -> np.ndarray:
        return sdpcore.smat(self.localizers[i].F @ np.asarray(z))

    def coefficient_vector(self, p: Polynomial) -> np.ndarray:
        if p.degree > 2 * self.kappa:
            raise RelaxationError(f"degree {p.degree} exceeds 2*kappa = {2 * self.kappa}")
        return p.coefficient_vector(self.zbasis)

    def first_moment_indices(self) -> np.ndarray:
        return np.array([self.index_map[tuple(int(i == j) for j in range(self.n))] for i in range(self.n)])

    def second_moment_indices(self) -> np.ndarray:
        """``(n, n)`` array of z positions of ``theta_i theta_j``."""
        out = np.empty((self.n, self.n), dtype=int)
        for i in range(self.n):
            for j in range(self.n):
                alpha = [0] * self.n
                alpha[i] += 1
                alpha[j] += 1
                out[i, j] = self.index_map[tuple(alpha)]
        return out


def _psd_map(idx: np.ndarray, nz: int) -> sp.csr_matrix:
    s = idx.shape[0]
    rows, cols, vals = [], [], []
    for b in range(s):
        for a in range(b + 1):
            rows.append(svec_position(a, b))
            cols.append(idx[a, b])
            vals.append(1.0 if a == b else math.sqrt(2.0))
    return sp.csr_matrix((vals, (rows, cols)), shape=(svec_len(s), nz))


def build_structure(sset: SemialgebraicSet, kappa: int) -> MomentStructure:
    return MomentStructure(sset, kappa)


# ---------------------------------------------------------------------------
# program assembly
# ---------------------------------------------------------------------------

def add_moment_constraints(builder: ProgramBuilder, st: MomentStructure, active=None) -> np.ndarray:
    """Declare ``z`` and all relaxation constraints; returns the z indices.

    ``active`` optionally restricts the localizing constraints to the given
    positions of ``st.set.all_inequalities()``.
    """
    z = builder.add_variables(st.nz)

    def shifted(F):
        F = sp.coo_matrix(F)
        return sp.coo_matrix((F.data, (F.row, F.col + z[0])), shape=(F.shape[0], builder.nvar))

    builder.add_constraint(ZERO, 1, [0], [z[0]], [1.0], [-1.0])
    if st.equality_rows.shape[0]:
        F = st.equality_rows
        builder.add_affine(ZERO, shifted(F), np.zeros(F.shape[0]))
    builder.add_affine(PSD, shifted(st.moment_F), np.zeros(st.moment_F.shape[0]), len(st.basis))
    locs = st.localizers if active is None else [st.localizers[i] for i in active]
    scalar = [loc.F for loc in locs if loc.size == 1]
    if scalar:
        F = sp.vstack(scalar)
        builder.add_affine(NONNEG, shifted(F), np.zeros(F.shape[0]))
    for loc in locs:
        if loc.size > 1:
            builder.add_affine(PSD, shifted(loc.F), np.zeros(loc.F.shape[0]), loc.size)
    return z


@dataclass
class PseudomomentSolution:
    z: np.ndarray
    kappa: int
    n: int
    status: str
    structure: MomentStructure | None = None
    residuals: dict = field(default_factory=dict)

    def linear_functional(self, p: Polynomial) -> float:
        return linear_functional(self, p)

    def moment_matrix(self) -> np.ndarray:
        return self.structure.moment_matrix(self.z)

    def first_moments(self) -> np.ndarray:
        return self.z[self.structure.first_moment_indices()]

    def second_moments(self) -> np.ndarray:
        return self.z[self.structure.second_moment_indices()]


def linear_functional(z: PseudomomentSolution, p: Polynomial) -> float:
    if p.degree > 2 * z.kappa:
        raise RelaxationError(f"degree {p.degree} exceeds 2*kappa = {2 * z.kappa}")
    basis = z.structure.zbasis if z.structure is not None else monomial_basis(z.n, 2 * z.kappa)
    return float(sum(c * z.z[basis.index(a)] for a, c in p.items()))


def dirac_moments(point, n: int, kappa: int) -> np.ndarray:
    """Pseudomoments of the point mass at ``point`` up to degree ``2 kappa``."""
    return monomial_basis(n, 2 * kappa).evaluate(np.asarray(point, dtype=float))


def check_status(sol: sdpcore.ConicSolution, what: str = "relaxation") -> None:
    if sol.status == sdpcore.OPTIMAL:
        return
    if sol.status == sdpcore.PRIMAL_INFEASIBLE:
        raise InfeasibleError(f"{what} is infeasible (set empty or order too low)", sol.status)
    if sol.status == sdpcore.MAX_ITERS and max(sol.primal_residual, sol.dual_residual, sol.gap) < 1e-5:
        log.warning("%s: solver stopped at max_iters with residuals %.1e/%.1e/%.1e; accepting",
                    what, sol.primal_residual, sol.dual_residual, sol.gap)
        return
    raise RelaxationError(f"{what}: solver returned {sol.status}", sol.status)


def lower_bound(
    sset: SemialgebraicSet,
    objective: Polynomial,
    kappa: int,
    settings: Settings | None = None,
) -> tuple[float, PseudomomentSolution]:
    """Order-``kappa`` moment lower bound of ``objective`` over ``sset``."""
    st = build_structure(sset, kappa)
    b = ProgramBuilder()
    z = add_moment_constraints(b, st)
    c = st.coefficient_vector(objective)
    b.add_linear_objective(z, c)
    prog = b.build()
    sol = sdpcore.solve(prog, settings)
    check_status(sol, "lower bound")
    zs = sol.x[z]
    pm = PseudomomentSolution(zs, kappa, sset.n, sol.status, st, sol.residuals())
    return float(c @ zs), pm
