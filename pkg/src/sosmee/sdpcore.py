"""Operator-splitting solver for small and medium conic programs.

Problems are held in the standard form::

    minimize    1/2 x^T P x + c^T x + offset
    subject to  A x + s = b,   s in K

where ``K`` is a product of zero cones, non-negative orthants, second-order
cones and PSD cones. PSD blocks are vectorised with :func:`svec` (upper
triangle, column-major, off-diagonals scaled by sqrt(2)) so that the trace
inner product of two symmetric matrices equals the dot product of their
vectorisations. The dual vector ``y`` returned by :func:`solve` lies in the
dual cone ``K*`` and satisfies ``P x + c + A^T y = 0`` at optimality.

The embedded method is an ADMM on the splitting of (x, s) with Ruiz
equilibration, per-row step sizes, adaptive step-size restarts, infeasibility
detection from successive iterate differences and an optional facial polish.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)

ZERO, NONNEG, SOC, PSD = "zero", "nonneg", "soc", "psd"
_KINDS = (ZERO, NONNEG, SOC, PSD)

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITERS = "max_iters"
NUMERICAL_ERROR = "numerical_error"


# ---------------------------------------------------------------------------
# symmetric-matrix vectorisation
# ---------------------------------------------------------------------------

def svec_len(k: int) -> int:
    return k * (k + 1) // 2


def svec_dim(length: int) -> int:
    k = int(round((math.sqrt(8 * length + 1) - 1) / 2))
    if svec_len(k) != length:
        raise ValueError(f"{length} is not a triangular number")
    return k


_SVEC_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def svec_indices(k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row indices, column indices and scale factors of the svec entries."""
    if k not in _SVEC_CACHE:
        rows, cols = [], []
        for j in range(k):
            for i in range(j + 1):
                rows.append(i)
                cols.append(j)
        rows = np.array(rows, dtype=int)
        cols = np.array(cols, dtype=int)
        scale = np.where(rows == cols, 1.0, SQRT2)
        _SVEC_CACHE[k] = (rows, cols, scale)
    return _SVEC_CACHE[k]


def svec_position(i: int, j: int) -> int:
    """Position of entry (i, j) of a symmetric matrix in its svec."""
    if i > j:
        i, j = j, i
    return j * (j + 1) // 2 + i


def svec(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    r, c, s = svec_indices(M.shape[-1])
    return M[..., r, c] * s


def smat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    k = svec_dim(v.shape[-1])
    r, c, s = svec_indices(k)
    M = np.zeros(v.shape[:-1] + (k, k))
    vals = v / s
    M[..., r, c] = vals
    M[..., c, r] = vals
    return M


# ---------------------------------------------------------------------------
# program / solution containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cone:
    kind: str
    dim: int  # matrix order for PSD, vector length otherwise

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.dim < 0:
            raise ValueError("negative cone dimension")

    @property
    def size(self) -> int:
        return svec_len(self.dim) if self.kind == PSD else self.dim


@dataclass
class ConicProgram:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list[Cone]
    P: sp.csc_matrix | None = None
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.A = sp.csc_matrix(self.A)
        if self.P is not None:
            self.P = sp.csc_matrix(self.P)
        m = sum(cone.size for cone in self.cones)
        if self.A.shape != (m, self.c.size) or self.b.size != m:
            raise ValueError(
                f"shape mismatch: A {self.A.shape}, b {self.b.size}, cones {m}, c {self.c.size}"
            )

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    def objective(self, x) -> float:
        val = float(self.c @ x) + self.offset
        if self.P is not None:
            val += 0.5 * float(x @ (self.P @ x))
        return val


@dataclass
class Settings:
    eps: float = 1e-7
    max_iters: int = 200_000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iters: int = 10
    adaptive_rho: bool = True
    adapt_interval: int = 40
    check_interval: int = 10
    eps_infeasible: float = 1e-9
    polish: bool = True
    time_limit: float | None = None
    backend: str = "auto"
    verbose: bool = False
    anderson_memory: int = 10
    anderson_safeguard: float = 2.0
    polish_trigger: float = 1e-4

    @classmethod
    def from_env(cls, **overrides) -> Settings:
        s = cls(**overrides)
        if "eps" not in overrides and os.environ.get("SOSMEE_EPS"):
            s.eps = float(os.environ["SOSMEE_EPS"])
        if "backend" not in overrides and os.environ.get("SOSMEE_BACKEND"):
            s.backend = os.environ["SOSMEE_BACKEND"]
        return s


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    gap: float
    primal_objective: float
    dual_objective: float
    iterations: int = 0
    solve_time: float = 0.0
    polished: bool = False
    backend: str = "admm"

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def residuals(self) -> dict:
        return {
            "primal": self.primal_residual,
            "dual": self.dual_residual,
            "gap": self.gap,
            "iterations": self.iterations,
            "status": self.status,
        }


class SolverError(RuntimeError):
    def __init__(self, message: str, solution: ConicSolution | None = None):
        super().__init__(message)
        self.solution = solution


# ---------------------------------------------------------------------------
# program builder
# ---------------------------------------------------------------------------

class SymmetricVariable:
    """Handle to a symmetric matrix variable stored as an svec in ``x``."""

    def __init__(self, k: int, offset: int):
        self.k = k
        self.offset = offset

    def index(self, i: int, j: int) -> int:
        return self.offset + svec_position(i, j)

    def coef(self, i: int, j: int) -> float:
        # M_ij = x[index] * coef
        return 1.0 if i == j else 1.0 / SQRT2

    @property
    def indices(self) -> np.ndarray:
        return self.offset + np.arange(svec_len(self.k))

    def value(self, x) -> np.ndarray:
        return smat(np.asarray(x)[self.indices])


class ProgramBuilder:
    """Incrementally assemble a :class:`ConicProgram`.

    Constraints are affine expressions ``F x + f`` required to lie in a cone;
    ``F`` is given as COO triplets relative to the current variable layout.
    """

    def __init__(self):
        self.nvar = 0
        self._blocks: list[tuple[Cone, list, list, list, np.ndarray]] = []
        self._c: dict[int, float] = {}
        self._P: list[tuple[int, int, float]] = []
        self.offset = 0.0

    def add_variables(self, k: int) -> np.ndarray:
        idx = np.arange(self.nvar, self.nvar + k)
        self.nvar += k
        return idx

    def add_psd_variable(self, k: int) -> SymmetricVariable:
        var = SymmetricVariable(k, self.nvar)
        idx = self.add_variables(svec_len(k))
        # s = x_block in PSD:  A = -I, b = 0
        self.add_constraint(PSD, k, range(idx.size), idx, np.ones(idx.size), np.zeros(idx.size))
        return var

    def add_constraint(self, kind: str, dim: int, rows: Sequence[int], cols: Sequence[int],
                       vals: Sequence[float], const) -> None:
        cone = Cone(kind, dim)
        const = np.asarray(const, dtype=float).ravel()
        if const.size != cone.size:
            raise ValueError(f"constant has length {const.size}, cone needs {cone.size}")
        rows = np.asarray(rows if not isinstance(rows, range) else np.arange(rows.start, rows.stop, rows.step), dtype=int)
        self._blocks.append((cone, rows, np.asarray(cols, dtype=int), np.asarray(vals, dtype=float), const))

    def add_affine(self, kind: str, F: sp.spmatrix | np.ndarray, f, dim: int | None = None) -> None:
        F = sp.coo_matrix(F)
        if dim is None:
            dim = svec_dim(F.shape[0]) if kind == PSD else F.shape[0]
        self.add_constraint(kind, dim, F.row, F.col, F.data, f)

    def add_linear_objective(self, cols: Iterable[int], vals: Iterable[float]) -> None:
        for j, v in zip(cols, vals):
            self._c[int(j)] = self._c.get(int(j), 0.0) + float(v)

    def add_quadratic_objective(self, rows, cols, vals) -> None:
        """Add ``1/2 x^T P x`` terms (caller supplies a symmetric P)."""
        self._P.extend(zip(map(int, rows), map(int, cols), map(float, vals)))

    def build(self) -> ConicProgram:
        n = self.nvar
        rows, cols, vals, bs, cones = [], [], [], [], []
        r0 = 0
        for cone, r, cc, v, f in self._blocks:
            rows.append(r + r0)
            cols.append(cc)
            vals.append(-v)
            bs.append(f)
            cones.append(cone)
            r0 += cone.size
        cat = lambda parts, dt: np.concatenate(parts) if parts else np.zeros(0, dtype=dt)
        A = sp.coo_matrix((cat(vals, float), (cat(rows, int), cat(cols, int))), shape=(r0, n)).tocsc()
        c = np.zeros(n)
        for j, v in self._c.items():
            c[j] += v
        P = None
        if self._P:
            pr, pc, pv = zip(*self._P)
            P = sp.coo_matrix((pv, (pr, pc)), shape=(n, n)).tocsc()
        b = np.concatenate(bs) if bs else np.zeros(0)
        return ConicProgram(c=c, A=A, b=b, cones=cones, P=P, offset=self.offset)


# ---------------------------------------------------------------------------
# cone projections
# ---------------------------------------------------------------------------

class _ConeLayout:
    """Precomputed slicing of the stacked slack vector by cone kind."""

    def __init__(self, cones: Sequence[Cone]):
        self.cones = list(cones)
        zero, nonneg = [], []
        self.soc: list[slice] = []
        psd_by_k: dict[int, list[int]] = {}
        self.block_of_row = np.zeros(sum(c.size for c in cones), dtype=int)
        self.block_slices: list[slice] = []
        r = 0
        for bi, cone in enumerate(cones):
            sl = slice(r, r + cone.size)
            self.block_slices.append(sl)
            self.block_of_row[sl] = bi
            if cone.kind == ZERO:
                zero.extend(range(sl.start, sl.stop))
            elif cone.kind == NONNEG:
                nonneg.extend(range(sl.start, sl.stop))
            elif cone.kind == SOC:
                if cone.size > 0:
                    self.soc.append(sl)
            elif cone.kind == PSD:
                if cone.dim == 1:
                    nonneg.append(sl.start)
                elif cone.dim > 0:
                    psd_by_k.setdefault(cone.dim, []).append(sl.start)
            r += cone.size
        self.m = r
        self.zero = np.array(zero, dtype=int)
        self.nonneg = np.array(nonneg, dtype=int)
        # for each PSD order, a (count, svec_len) index array into the slack vector
        self.psd: dict[int, np.ndarray] = {
            k: np.array(starts)[:, None] + np.arange(svec_len(k))[None, :]
            for k, starts in psd_by_k.items()
        }

    def project(self, v: np.ndarray) -> np.ndarray:
        out = v.copy()
        if self.zero.size:
            out[self.zero] = 0.0
        if self.nonneg.size:
            out[self.nonneg] = np.maximum(v[self.nonneg], 0.0)
        for sl in self.soc:
            out[sl] = _project_soc(v[sl])
        for k, idx in self.psd.items():
            out[idx] = _project_psd_batch(v[idx], k)
        return out

    def project_dual(self, v: np.ndarray) -> np.ndarray:
        """Projection onto the dual cone (zero cone dual is the whole space)."""
        out = self.project(v)
        if self.zero.size:
            out[self.zero] = v[self.zero]
        return out

    def distance_dual(self, v: np.ndarray) -> float:
        return float(np.max(np.abs(v - self.project_dual(v)), initial=0.0))


def _project_soc(v: np.ndarray) -> np.ndarray:
    t, x = v[0], v[1:]
    nx = np.linalg.norm(x)
    if nx <= t:
        return v.copy()
    if nx <= -t:
        return np.zeros_like(v)
    a = 0.5 * (t + nx)
    out = np.empty_like(v)
    out[0] = a
    out[1:] = a * x / nx
    return out


def _project_psd_batch(V: np.ndarray, k: int) -> np.ndarray:
    M = smat(V)
    w, U = np.linalg.eigh(M)
    w = np.maximum(w, 0.0)
    Mp = (U * w[..., None, :]) @ np.swapaxes(U, -1, -2)
    return svec(Mp)


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------

def _ruiz(P: sp.csc_matrix, A: sp.csc_matrix, c: np.ndarray, layout: _ConeLayout, iters: int):
    n, m = A.shape[1], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Pw, Aw = P.copy(), A.copy()
    for _ in range(iters):
        colA = sp.linalg.norm(Aw, np.inf, axis=0) if m else np.zeros(n)
        colP = sp.linalg.norm(Pw, np.inf, axis=0) if Pw.nnz else np.zeros(n)
        dcol = np.maximum(colA, colP)
        dcol = np.where(dcol < 1e-8, 1.0, dcol)
        d = 1.0 / np.sqrt(dcol)
        row = sp.linalg.norm(Aw, np.inf, axis=1) if m else np.zeros(0)
        row = np.where(row < 1e-8, 1.0, row)
        e = 1.0 / np.sqrt(row)
        # cones other than orthants need a uniform scale within the block
        for bi, cone in enumerate(layout.cones):
            if cone.kind in (SOC, PSD) and cone.size > 1:
                sl = layout.block_slices[bi]
                e[sl] = np.exp(np.mean(np.log(e[sl])))
        e = np.clip(e, 1e-4, 1e4)
        d = np.clip(d, 1e-4, 1e4)
        Dm, Em = sp.diags(d), sp.diags(e)
        Aw = (Em @ Aw @ Dm).tocsc()
        Pw = (Dm @ Pw @ Dm).tocsc()
        D *= d
        E *= e
    cw = D * c
    scale = max(np.max(np.abs(cw), initial=0.0), np.mean(sp.linalg.norm(Pw, np.inf, axis=0)) if Pw.nnz else 0.0)
    cost = 1.0 / scale if scale > 1e-8 else 1.0
    cost = min(max(cost, 1e-4), 1e4)
    return D, E, cost, Pw, Aw


# ---------------------------------------------------------------------------
# ADMM
# ---------------------------------------------------------------------------

class _KKT:
    """Factorisation of P + sigma I + A^T R A."""

    def __init__(self, P: sp.csc_matrix, A: sp.csc_matrix, sigma: float, rho: np.ndarray):
        n = A.shape[1]
        K = P + sigma * sp.identity(n, format="csc") + (A.T @ sp.diags(rho) @ A)
        if n <= 3000:
            self.dense = True
            self.factor = sla.cho_factor(K.toarray(), lower=True, check_finite=False)
        else:
            self.dense = False
            self.factor = spla.splu(K.tocsc())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.dense:
            return sla.cho_solve(self.factor, rhs, check_finite=False)
        return self.factor.solve(rhs)


def _norm_inf(v) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def _residuals(prog: ConicProgram, x, s, y):
    """Relative primal / dual / gap residuals in the original scaling."""
    Ax = prog.A @ x
    Aty = prog.A.T @ y
    Px = prog.P @ x if prog.P is not None else np.zeros_like(x)
    rp = Ax + s - prog.b
    rd = Px + prog.c + Aty
    xPx = float(x @ Px)
    pobj = 0.5 * xPx + float(prog.c @ x)
    dobj = -0.5 * xPx - float(prog.b @ y)
    pres = _norm_inf(rp) / (1.0 + max(_norm_inf(Ax), _norm_inf(s), _norm_inf(prog.b)))
    dres = _norm_inf(rd) / (1.0 + max(_norm_inf(Px), _norm_inf(Aty), _norm_inf(prog.c)))
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return pres, dres, gap, pobj + prog.offset, dobj + prog.offset


def solve(program: ConicProgram, settings: Settings | None = None) -> ConicSolution:
    """Solve ``program``; never raises on non-convergence (see ``status``)."""
    settings = settings or Settings.from_env()
    if settings.backend not in ("auto", "admm", "clarabel"):
        raise ValueError(f"unknown backend {settings.backend!r}")
    t0 = time.perf_counter()
    warm = None
    if settings.backend in ("auto", "clarabel") and (settings.backend == "clarabel" or have_clarabel()):
        for reg in _CLARABEL_REGULARIZATION:
            sol = _solve_clarabel(program, settings, reg)
            if sol.status in (OPTIMAL, PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
                return sol
            if settings.polish and np.all(np.isfinite(sol.x)) and np.all(np.isfinite(sol.y)):
                polished = polish(program, sol, settings)
                if polished is not None and polished.status == OPTIMAL:
                    polished.backend = "clarabel+polish"
                    polished.solve_time = time.perf_counter() - t0
                    return polished
        if settings.backend == "clarabel":
            return sol
        log.info("interior-point solve ended with %s; continuing with ADMM", sol.status)
        if np.all(np.isfinite(sol.x)) and np.all(np.isfinite(sol.y)):
            warm = sol
    sol = _admm(program, settings, warm)
    if settings.polish and sol.status in (OPTIMAL, MAX_ITERS):
        polished = polish(program, sol, settings)
        if polished is not None:
            sol = polished
    sol.solve_time = time.perf_counter() - t0
    return sol


#: static regularisation tried in turn by the interior-point backend
_CLARABEL_REGULARIZATION = (None, 1e-7)


def have_clarabel() -> bool:
    try:
        import clarabel  # noqa: F401
    except ImportError:
        return False
    return True


def _admm(prog: ConicProgram, st: Settings, warm: ConicSolution | None = None) -> ConicSolution:
    n, m = prog.n, prog.m
    layout = _ConeLayout(prog.cones)
    P0 = prog.P if prog.P is not None else sp.csc_matrix((n, n))
    D, E, cs, P, A = _ruiz(P0, prog.A, prog.c, layout, st.scaling_iters)
    q = cs * D * prog.c
    P = cs * P
    b = E * prog.b

    is_zero_row = np.zeros(m, dtype=bool)
    is_zero_row[layout.zero] = True
    rho = st.rho

    def rho_vector(r):
        return np.where(is_zero_row, 1e3 * r, r)

    rv = rho_vector(rho)
    kkt = _KKT(P, A, st.sigma, rv)
    alpha, sigma = st.alpha, st.sigma

    def T(w):
        x, s, y = w[:n], w[n:n + m], w[n + m:]
        rhs = sigma * x - q + A.T @ (rv * (b - s) + y)
        xt = kkt.solve(rhs)
        x_new = alpha * xt + (1.0 - alpha) * x
        srel = alpha * (b - A @ xt) + (1.0 - alpha) * s
        v = srel + y / rv
        s_new = layout.project(v)
        return np.concatenate([x_new, s_new, rv * (v - s_new)])

    def unscale(w):
        x, s, y = w[:n], w[n:n + m], w[n + m:]
        return D * x, s / E, -E * y / cs

    if warm is None:
        w = np.concatenate([np.zeros(n), layout.project(np.zeros(m)), np.zeros(m)])
    else:
        w = np.concatenate([warm.x / D, layout.project(E * warm.s), -cs * warm.y / E])
    Tw = T(w)
    g = Tw - w
    aa = _Anderson(st.anderson_memory) if st.anderson_memory > 0 else None
    t_start = time.perf_counter()
    status = MAX_ITERS
    it = 0
    next_polish = st.check_interval
    best = None
    for it in range(1, st.max_iters + 1):
        # Tw is the current iterate: s in K and y in the polar cone
        cand = aa.update(w, g) if aa is not None else None
        if cand is not None and np.all(np.isfinite(cand)):
            Tc = T(cand)
            gc = Tc - cand
            if np.linalg.norm(gc) <= st.anderson_safeguard * np.linalg.norm(g):
                w, Tw, g = cand, Tc, gc
            else:
                aa.reset()
                w = Tw
                Tw = T(w)
                g = Tw - w
        else:
            w = Tw
            Tw = T(w)
            g = Tw - w

        if it % st.check_interval == 0 or it == st.max_iters:
            xo, so, yo = unscale(Tw)
            pres, dres, gap, _, _ = _residuals(prog, xo, so, yo)
            if st.verbose and it % (st.check_interval * 100) == 0:
                log.info("iter %d  pres %.2e  dres %.2e  gap %.2e  rho %.2e", it, pres, dres, gap, rho)
            score = max(pres, dres, gap)
            if score <= st.eps:
                status = OPTIMAL
                break
            if st.polish and score <= st.polish_trigger and it >= next_polish:
                trial = ConicSolution(xo, yo, so, MAX_ITERS, pres, dres, gap, 0.0, 0.0, it)
                pol = polish(prog, trial, st)
                next_polish = 2 * it
                if pol is not None and pol.status == OPTIMAL:
                    pol.iterations = it
                    pol.backend = "admm"
                    return pol
            inf = _check_infeasible(prog, layout, D, E, g[:n], g[n + m:], st)
            if inf is not None:
                status = inf
                break
            if st.time_limit is not None and time.perf_counter() - t_start > st.time_limit:
                break
            if not np.all(np.isfinite(Tw)):
                status = NUMERICAL_ERROR
                break
        if st.adaptive_rho and it % st.adapt_interval == 0:
            x, s, y = Tw[:n], Tw[n:n + m], Tw[n + m:]
            Ax = A @ x
            rp = _norm_inf(Ax + s - b) / max(_norm_inf(Ax), _norm_inf(s), _norm_inf(b), 1e-10)
            Aty = A.T @ y
            Px = P @ x
            rd = _norm_inf(Px + q - Aty) / max(_norm_inf(Px), _norm_inf(Aty), _norm_inf(q), 1e-10)
            ratio = math.sqrt(max(rp, 1e-16) / max(rd, 1e-16))
            new_rho = min(max(rho * ratio, 1e-6), 1e6)
            if new_rho > 5 * rho or new_rho < 0.2 * rho:
                rho = new_rho
                rv = rho_vector(rho)
                kkt = _KKT(P, A, sigma, rv)
                if aa is not None:
                    aa.reset()
                w = Tw
                Tw = T(w)
                g = Tw - w

    xo, so, yo = unscale(Tw)
    if status in (PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
        dx, dy = D * g[:n], -E * g[n + m:] / cs
        nrm_x, nrm_y = max(_norm_inf(dx), 1e-300), max(_norm_inf(dy), 1e-300)
        xo = dx / nrm_x if status == DUAL_INFEASIBLE else xo
        yo = dy / nrm_y if status == PRIMAL_INFEASIBLE else yo
    pres, dres, gap, pobj, dobj = _residuals(prog, xo, so, yo)
    return ConicSolution(
        x=xo, y=yo, s=so, status=status, primal_residual=pres, dual_residual=dres, gap=gap,
        primal_objective=pobj, dual_objective=dobj, iterations=it, backend="admm",
    )


class _Anderson:
    """Type-II Anderson acceleration of a fixed-point map with bounded memory."""

    def __init__(self, memory: int, reg: float = 1e-10):
        self.memory = memory
        self.reg = reg
        self.reset()

    def reset(self):
        self.prev = None
        self.dW: list[np.ndarray] = []
        self.dG: list[np.ndarray] = []

    def update(self, w: np.ndarray, g: np.ndarray) -> np.ndarray | None:
        if self.prev is not None:
            pw, pg = self.prev
            self.dW.append(w - pw)
            self.dG.append(g - pg)
            if len(self.dW) > self.memory:
                self.dW.pop(0)
                self.dG.pop(0)
        self.prev = (w, g)
        if not self.dG:
            return None
        G = np.column_stack(self.dG)
        W = np.column_stack(self.dW)
        H = G.T @ G
        H += self.reg * (np.trace(H) / H.shape[0] + 1e-300) * np.eye(H.shape[0])
        try:
            gamma = np.linalg.solve(H, G.T @ g)
        except np.linalg.LinAlgError:
            self.reset()
            return None
        return w + g - (W + G) @ gamma


def _check_infeasible(prog, layout, D, E, dx_s, dy_s, st: Settings):
    eps = st.eps_infeasible
    # dual variable of the original problem is -y (scaled by E); certificate lam = -dy
    lam = -E * dy_s
    nl = _norm_inf(lam)
    if nl > eps:
        lam_n = lam / nl
        if (_norm_inf(prog.A.T @ lam_n) < 1e2 * eps * 1e3 and prog.b @ lam_n < -1e3 * eps
                and layout.distance_dual(lam_n) < 1e-6):
            # require a decisive certificate to avoid false alarms on slow problems
            if _norm_inf(prog.A.T @ lam_n) < 1e-7 and prog.b @ lam_n < -1e-6:
                return PRIMAL_INFEASIBLE
    dx = D * dx_s
    nx = _norm_inf(dx)
    if nx > eps:
        dx_n = dx / nx
        Px = prog.P @ dx_n if prog.P is not None else np.zeros_like(dx_n)
        if prog.c @ dx_n < -1e-6 and _norm_inf(Px) < 1e-7:
            Ax = prog.A @ dx_n
            # need -A dx in K
            if _norm_inf(-Ax - layout.project(-Ax)) < 1e-7:
                return DUAL_INFEASIBLE
    return None


# ---------------------------------------------------------------------------
# polish
# ---------------------------------------------------------------------------

def polish(prog: ConicProgram, sol: ConicSolution, settings: Settings | None = None) -> ConicSolution | None:
    """Refine a near-optimal point by solving the KKT system on the active faces.

    Each cone block is split into the part where the primal slack is active
    and the part where the dual is active; the slack and dual are
    reparametrised on those faces and the resulting linear system (primal
    feasibility plus stationarity) is solved in least squares. The refined
    point is accepted only if it stays in the cones and lowers the largest
    residual.
    """
    best = None
    base = max(sol.primal_residual, sol.dual_residual, sol.gap)
    eps = settings.eps if settings is not None else 1e-7
    for tau in (1e-6, 1e-4, 1e-3):
        cand = _polish_once(prog, sol, tau)
        if cand is None:
            continue
        score = max(cand.primal_residual, cand.dual_residual, cand.gap)
        if score < base and (best is None or score < best[0]):
            best = (score, cand)
            if score <= 0.1 * eps:
                break
    if best is None:
        return None
    out = best[1]
    if max(out.primal_residual, out.dual_residual, out.gap) <= eps:
        out.status = OPTIMAL
    return out


def _face_basis(U: np.ndarray) -> np.ndarray:
    """Matrix of ``svec(U G U^T)`` as a linear map of ``svec(G)``; columns are orthonormal."""
    k, r = U.shape
    ra, rb, sk = svec_indices(k)
    ci, cj, _ = svec_indices(r)
    Ua, Ub = U[ra], U[rb]
    fac = np.where(ci == cj, 0.5, 1.0 / SQRT2)
    return (Ua[:, ci] * Ub[:, cj] + Ua[:, cj] * Ub[:, ci]) * fac * sk[:, None]


def _sparse_lstsq(K: sp.spmatrix, r: np.ndarray, refine: int = 3) -> np.ndarray:
    """Least-squares solution of ``K dz = r`` via regularised normal equations."""
    K = sp.csc_matrix(K)
    N = (K.T @ K).tocsc()
    diag = N.diagonal()
    reg = 1e-13 * max(float(diag.max(initial=0.0)), 1.0)
    N = N + reg * sp.identity(N.shape[0], format="csc")
    try:
        lu = spla.splu(N)
    except RuntimeError:
        return spla.lsmr(K, r, atol=1e-14, btol=1e-14, maxiter=5000)[0]
    dz = lu.solve(K.T @ r)
    for _ in range(refine):
        res = r - K @ dz
        dz = dz + lu.solve(K.T @ res)
    return dz


def _polish_once(prog: ConicProgram, sol: ConicSolution, tau: float) -> ConicSolution | None:
    n, m = prog.n, prog.m
    layout = _ConeLayout(prog.cones)
    s, y = sol.s, sol.y
    scale = max(_norm_inf(s), _norm_inf(y), 1e-12)
    thr = tau * scale
    # unknowns: x (n), then per-block parameters for s and y
    # s = Bs @ ps, y = By @ py  (both linear maps onto R^m)
    Bs_r, Bs_c, Bs_v = [], [], []
    By_r, By_c, By_v = [], [], []
    ns = ny = 0
    cone_checks = []
    for bi, cone in enumerate(layout.cones):
        sl = layout.block_slices[bi]
        rows = np.arange(sl.start, sl.stop)
        if cone.kind == ZERO:
            By_r.append(rows); By_c.append(ny + np.arange(rows.size)); By_v.append(np.ones(rows.size))
            ny += rows.size
        elif cone.kind == NONNEG or (cone.kind == PSD and cone.dim == 1):
            on_s = s[sl] > y[sl]
            rs, ry = rows[on_s], rows[~on_s]
            Bs_r.append(rs); Bs_c.append(ns + np.arange(rs.size)); Bs_v.append(np.ones(rs.size))
            By_r.append(ry); By_c.append(ny + np.arange(ry.size)); By_v.append(np.ones(ry.size))
            cone_checks.append(("nn_s", ns, rs.size)); cone_checks.append(("nn_y", ny, ry.size))
            ns += rs.size; ny += ry.size
        elif cone.kind == SOC:
            sb, yb = s[sl], y[sl]
            ns_t = np.linalg.norm(sb[1:])
            ny_t = np.linalg.norm(yb[1:])
            s_int = sb[0] - ns_t > thr
            y_int = yb[0] - ny_t > thr
            s_zero = sb[0] <= thr
            y_zero = yb[0] <= thr
            if s_int and y_zero:
                Bs_r.append(rows); Bs_c.append(ns + np.arange(rows.size)); Bs_v.append(np.ones(rows.size))
                cone_checks.append(("soc_s", ns, rows.size)); ns += rows.size
            elif y_int and s_zero:
                By_r.append(rows); By_c.append(ny + np.arange(rows.size)); By_v.append(np.ones(rows.size))
                cone_checks.append(("soc_y", ny, rows.size)); ny += rows.size
            elif s_zero and y_zero:
                return None
            else:
                # both on the boundary: s = a (1, -w), y = c (1, w)
                w = yb[1:] / ny_t if ny_t > 0 else -sb[1:] / max(ns_t, 1e-300)
                Bs_r.append(rows); Bs_c.append(np.full(rows.size, ns)); Bs_v.append(np.r_[1.0, -w] / SQRT2)
                By_r.append(rows); By_c.append(np.full(rows.size, ny)); By_v.append(np.r_[1.0, w] / SQRT2)
                cone_checks.append(("nn_s", ns, 1)); cone_checks.append(("nn_y", ny, 1))
                ns += 1; ny += 1
        elif cone.kind == PSD:
            k = cone.dim
            S, Y = smat(s[sl]), smat(y[sl])
            w, U = np.linalg.eigh(S - Y)
            sc = max(np.max(np.abs(w)), 1e-12)
            for Ub, target in ((U[:, w > tau * sc], "s"), (U[:, w < -tau * sc], "y")):
                r_ = Ub.shape[1]
                if r_ == 0:
                    continue
                Bblk = _face_basis(Ub)
                nz = np.nonzero(np.abs(Bblk) > 1e-15)
                if target == "s":
                    Bs_r.append(rows[nz[0]]); Bs_c.append(ns + nz[1]); Bs_v.append(Bblk[nz])
                    cone_checks.append(("psd_s", ns, r_)); ns += svec_len(r_)
                else:
                    By_r.append(rows[nz[0]]); By_c.append(ny + nz[1]); By_v.append(Bblk[nz])
                    cone_checks.append(("psd_y", ny, r_)); ny += svec_len(r_)
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0)
    Bs_r, Bs_c, Bs_v = cat(Bs_r), cat(Bs_c), cat(Bs_v)
    By_r, By_c, By_v = cat(By_r), cat(By_c), cat(By_v)
    Bs = sp.csc_matrix((Bs_v, (Bs_r, Bs_c)), shape=(m, ns))
    By = sp.csc_matrix((By_v, (By_r, By_c)), shape=(m, ny))
    P = prog.P if prog.P is not None else sp.csc_matrix((n, n))
    # [A  Bs  0 ] [x ]   [b ]
    # [P  0   A^T By] [ps] = [-c]
    # warm start from current point (least-squares correction)
    ps0 = spla.lsqr(Bs, s, atol=1e-14, btol=1e-14)[0] if ns else np.zeros(0)
    py0 = spla.lsqr(By, y, atol=1e-14, btol=1e-14)[0] if ny else np.zeros(0)
    z0 = np.concatenate([sol.x, ps0, py0])
    AtBy = (prog.A.T @ By).tocsc()
    if P.nnz == 0 and n <= 3000:
        # linear objective: primal and dual blocks decouple. The columns of
        # Bs and By are orthonormal, so the face parameters can be eliminated.
        Ad = prog.A.toarray()
        r = prog.b - Ad @ sol.x
        if ns:
            BsT = Bs.T.tocsr()
            Aperp = Ad - Bs @ (BsT @ Ad)
            rperp = r - Bs @ (BsT @ r)
        else:
            Aperp, rperp = Ad, r
        x = sol.x + sla.lstsq(Aperp, rperp, lapack_driver="gelsy")[0]
        ps = Bs.T @ (prog.b - Ad @ x) if ns else np.zeros(0)
        if ny:
            G = AtBy.toarray()
            py = py0 + sla.lstsq(G, -prog.c - G @ py0, lapack_driver="gelsy")[0]
        else:
            py = np.zeros(0)
        z = np.concatenate([x, ps, py])
    else:
        top = sp.hstack([prog.A, Bs, sp.csc_matrix((m, ny))])
        bot = sp.hstack([P, sp.csc_matrix((n, ns)), AtBy])
        K = sp.vstack([top, bot]).tocsc()
        rhs = np.concatenate([prog.b, -prog.c])
        z = z0 + _sparse_lstsq(K, rhs - K @ z0)
    x = z[:n]
    ps = z[n:n + ns]
    py = z[n + ns:]
    for chk in cone_checks:
        kind = chk[0]
        if kind in ("nn_s", "nn_y"):
            vec = ps if kind == "nn_s" else py
            if chk[2] and vec[chk[1]:chk[1] + chk[2]].min() < -1e-12:
                return None
        if kind in ("psd_s", "psd_y"):
            vec = ps if kind == "psd_s" else py
            G = smat(vec[chk[1]:chk[1] + svec_len(chk[2])])
            if np.linalg.eigvalsh(G)[0] < -1e-12 * max(1.0, np.abs(G).max()):
                return None
        if kind in ("soc_s", "soc_y"):
            vec = ps if kind == "soc_s" else py
            blk = vec[chk[1]:chk[1] + chk[2]]
            if blk[0] < np.linalg.norm(blk[1:]) - 1e-12:
                return None
    s_new = Bs @ ps
    y_new = By @ py
    pres, dres, gap, pobj, dobj = _residuals(prog, x, s_new, y_new)
    return ConicSolution(
        x=x, y=y_new, s=s_new, status=sol.status, primal_residual=pres, dual_residual=dres,
        gap=gap, primal_objective=pobj, dual_objective=dobj, iterations=sol.iterations,
        polished=True, backend=sol.backend,
    )


# ---------------------------------------------------------------------------
# external interior-point backend (optional)
# ---------------------------------------------------------------------------

def _solve_clarabel(prog: ConicProgram, st: Settings, regularization: float | None = None) -> ConicSolution:
    import clarabel

    t0 = time.perf_counter()
    cones = []
    for cone in prog.cones:
        if cone.size == 0:
            continue
        if cone.kind == ZERO:
            cones.append(clarabel.ZeroConeT(cone.dim))
        elif cone.kind == NONNEG:
            cones.append(clarabel.NonnegativeConeT(cone.dim))
        elif cone.kind == SOC:
            cones.append(clarabel.SecondOrderConeT(cone.dim))
        else:
            cones.append(clarabel.PSDTriangleConeT(cone.dim))
    P = prog.P if prog.P is not None else sp.csc_matrix((prog.n, prog.n))
    P = sp.triu(P, format="csc")
    opts = clarabel.DefaultSettings()
    opts.verbose = False
    opts.tol_gap_abs = opts.tol_gap_rel = min(st.eps, 1e-8)
    opts.tol_feas = min(st.eps, 1e-8)
    opts.max_iter = 500
    if regularization is not None:
        opts.static_regularization_constant = regularization
    solver = clarabel.DefaultSolver(P, prog.c, prog.A, prog.b, cones, opts)
    res = solver.solve()
    name = str(res.status)
    x, y, s = np.array(res.x), np.array(res.z), np.array(res.s)
    if "PrimalInfeasible" in name:
        status = PRIMAL_INFEASIBLE
    elif "DualInfeasible" in name:
        status = DUAL_INFEASIBLE
    elif "Solved" in name:
        status = OPTIMAL
    elif "MaxIterations" in name or "MaxTime" in name:
        status = MAX_ITERS
    else:
        status = NUMERICAL_ERROR
    pres, dres, gap, pobj, dobj = _residuals(prog, x, s, y)
    if status == OPTIMAL and max(pres, dres, gap) > 10 * st.eps and "Almost" in name:
        status = NUMERICAL_ERROR
    return ConicSolution(
        x=x, y=y, s=s, status=status, primal_residual=pres, dual_residual=dres, gap=gap,
        primal_objective=pobj, dual_objective=dobj, iterations=int(res.iterations),
        solve_time=time.perf_counter() - t0, backend="clarabel",
    )


# ---------------------------------------------------------------------------
# text dump
# ---------------------------------------------------------------------------

def dump_program(prog: ConicProgram, path) -> None:
    """Write ``prog`` in the plain-text sparse format described in the README."""
    with open(path, "w") as fh:
        fh.write(f"CONIC {prog.n} {prog.m} {len(prog.cones)}\n")
        fh.write(f"OFFSET {float(prog.offset)!r}\n")
        for cone in prog.cones:
            fh.write(f"CONE {cone.kind} {cone.dim}\n")
        c = prog.c
        for j in np.nonzero(c)[0]:
            fh.write(f"C {j} {float(c[j])!r}\n")
        for i in np.nonzero(prog.b)[0]:
            fh.write(f"B {i} {float(prog.b[i])!r}\n")
        A = prog.A.tocoo()
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"A {i} {j} {float(v)!r}\n")
        if prog.P is not None:
            P = prog.P.tocoo()
            for i, j, v in zip(P.row, P.col, P.data):
                fh.write(f"P {i} {j} {float(v)!r}\n")


def load_program(path) -> ConicProgram:
    cones, c_ent, b_ent, a_ent, p_ent = [], [], [], [], []
    n = m = 0
    offset = 0.0
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "CONIC":
                n, m = int(tok[1]), int(tok[2])
            elif tok[0] == "OFFSET":
                offset = float(tok[1])
            elif tok[0] == "CONE":
                cones.append(Cone(tok[1], int(tok[2])))
            elif tok[0] == "C":
                c_ent.append((int(tok[1]), float(tok[2])))
            elif tok[0] == "B":
                b_ent.append((int(tok[1]), float(tok[2])))
            elif tok[0] == "A":
                a_ent.append((int(tok[1]), int(tok[2]), float(tok[3])))
            elif tok[0] == "P":
                p_ent.append((int(tok[1]), int(tok[2]), float(tok[3])))
    c = np.zeros(n)
    for j, v in c_ent:
        c[j] = v
    b = np.zeros(m)
    for i, v in b_ent:
        b[i] = v
    A = sp.coo_matrix(
        ([v for *_, v in a_ent], ([i for i, *_ in a_ent], [j for _, j, _ in a_ent])), shape=(m, n)
    )
    P = None
    if p_ent:
        P = sp.coo_matrix(
            ([v for *_, v in p_ent], ([i for i, *_ in p_ent], [j for _, j, _ in p_ent])), shape=(n, n)
        )
    return ConicProgram(c=c, A=A, b=b, cones=cones, P=P, offset=offset)
