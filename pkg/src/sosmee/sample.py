"""Approximately uniform samples of an uncertainty set and shape estimation.

Two samplers are provided:

* rejection sampling inside an enclosing ellipsoid (any set, but the
  acceptance rate drops with the volume ratio),
* hit-and-run for convex sets cut out by concave quadratics, where every
  chord is found by solving one scalar quadratic per constraint.

The inverse sample covariance, normalised to unit determinant, is the metric
under which the set looks round and is used as ``Q`` for the generalised
Chebyshev centre.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .grcc import ChebyshevResult, ShapeMatrix, _quadratic_parts
from .mee import Ellipsoid, ProjectionSpec
from .relax import SemialgebraicSet

log = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-9
MIN_ACCEPTANCE = 1e-6
MAX_TRIALS = 10_000_000
DEFAULT_SAMPLES = 5000


class SamplingError(RuntimeError):
    """Sampling gave up; ``acceptance_rate`` and ``trials`` say how far it got."""

    def __init__(self, message: str, acceptance_rate: float | None = None, trials: int | None = None):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate
        self.trials = trials


@dataclass
class SampleBatch:
    points: np.ndarray  # (N_s, d)
    seed: int
    method: str
    acceptance_rate: float | None = None
    trials: int | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.method not in ("hit_and_run", "rejection"):
            raise ValueError(f"unknown sampling method {self.method!r}")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"xi{i}" for i in range(self.d)])
            for row in self.points:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, seed: int = 0, method: str = "rejection", acceptance_rate=None) -> SampleBatch:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        pts = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
        return cls(pts.reshape(len(rows) - 1, len(rows[0])), seed, method, acceptance_rate)

    def meta(self) -> dict:
        return {"seed": self.seed, "method": self.method, "n": self.n,
                "acceptance_rate": self.acceptance_rate, "trials": self.trials}


# ---------------------------------------------------------------------------
# rejection sampling
# ---------------------------------------------------------------------------

def uniform_in_ellipsoid(ell: Ellipsoid, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` uniform points of ``{x : (x - mu)^T E (x - mu) <= 1}``."""
    d = ell.d
    u = rng.standard_normal((m, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u *= rng.uniform(0.0, 1.0, (m, 1)) ** (1.0 / d)
    # E = L L^T, x = mu + L^{-T} u
    L = np.linalg.cholesky(ell.E)
    return ell.mu + np.linalg.solve(L.T, u.T).T


def _as_ellipsoid(ball) -> Ellipsoid:
    if isinstance(ball, Ellipsoid):
        return ball
    if isinstance(ball, ChebyshevResult):
        if not ball.enclosing_eta > 0:
            raise SamplingError("enclosing ball has zero radius; the set is a single point")
        return ball.ellipsoid()
    raise TypeError("ball must be a ChebyshevResult or an Ellipsoid")


def rejection_sample(
    sset: SemialgebraicSet,
    proj,
    ball,
    n: int,
    seed: int = 0,
    chunk: int = 100_000,
    max_trials: int = MAX_TRIALS,
    chart: Callable[[np.ndarray], np.ndarray] | None = None,
) -> SampleBatch:
    """``n`` accepted points drawn uniformly in ``ball`` and kept when in the set.

    ``ball`` must enclose the set in the sampled coordinates: all of
    ``theta`` by default, or the coordinates of ``chart`` when given. A chart
    maps an ``(m, k)`` array to ``(m, n)`` points satisfying the equalities of
    the set (uniformity then holds in chart coordinates). The returned points
    are ``proj`` applied to the accepted ``theta``.

    Chunk ``j`` draws from the ``j``-th child of ``SeedSequence(seed)``, so the
    batch depends only on the seed and the chunk size.
    """
    if n < 1:
        raise ValueError("n must be positive")
    proj = ProjectionSpec.coerce(proj, sset.n)
    ell = _as_ellipsoid(ball)
    if chart is None:
        if sset.equalities:
            raise SamplingError("the set has equalities: ambient samples hit it with probability zero; pass a chart")
        if ell.d != sset.n:
            raise SamplingError(f"ball has dimension {ell.d}; rejection sampling needs a ball over all {sset.n} coordinates")
    children = np.random.SeedSequence(seed).spawn(max(1, -(-max_trials // chunk)))
    accepted: list[np.ndarray] = []
    count = trials = 0
    for child in children:
        rng = np.random.default_rng(child)
        m = min(chunk, max_trials - trials)
        Y = uniform_in_ellipsoid(ell, m, rng)
        theta = chart(Y) if chart is not None else Y
        ok = sset.violations(theta) <= MEMBERSHIP_TOL
        trials += m
        good = theta[ok]
        if count + good.shape[0] >= n:
            # trials counted up to the n-th acceptance inside this chunk
            need = n - count
            last = int(np.flatnonzero(ok)[need - 1])
            trials -= m - (last + 1)
            accepted.append(good[:need])
            count = n
            break
        accepted.append(good)
        count += good.shape[0]
        if trials >= max_trials:
            break
    rate = count / trials
    if count < n:
        if rate < MIN_ACCEPTANCE:
            raise SamplingError(
                f"acceptance rate {rate:.2e} after {trials} trials: the set is too thin for its enclosing ball; "
                "use hit-and-run or a higher-order ball",
                rate, trials,
            )
        raise SamplingError(f"only {count} of {n} samples accepted in {trials} trials (rate {rate:.2e})", rate, trials)
    pts = proj.apply(np.vstack(accepted))
    log.info("rejection sampling: %d points, acceptance rate %.3e", n, rate)
    return SampleBatch(pts, seed, "rejection", rate, trials)


# ---------------------------------------------------------------------------
# hit-and-run
# ---------------------------------------------------------------------------

@dataclass
class _QuadraticSystem:
    """Stacked ``g_k(x) = x^T A_k x + 2 b_k^T x + c_k``."""

    A: np.ndarray  # (m, n, n)
    b: np.ndarray  # (m, n)
    c: np.ndarray  # (m,)

    @classmethod
    def from_set(cls, sset: SemialgebraicSet) -> _QuadraticSystem:
        if sset.equalities:
            raise ValueError("hit-and-run needs a full-dimensional convex set; the set has equalities")
        ineq = sset.all_inequalities()
        if not ineq:
            raise ValueError("the set has no constraints and is unbounded")
        parts = []
        for k, g in enumerate(ineq):
            if g.degree > 2:
                raise ValueError(f"constraint {k} has degree {g.degree}; hit-and-run needs degree <= 2")
            A, b, c = _quadratic_parts(g)
            if np.linalg.eigvalsh(A)[-1] > 1e-12 * max(1.0, np.abs(A).max()):
                raise ValueError(f"constraint {k} is not concave; hit-and-run needs a convex set")
            parts.append((A, b, c))
        return cls(np.array([p[0] for p in parts]), np.array([p[1] for p in parts]),
                   np.array([p[2] for p in parts], dtype=float))

    def values(self, x) -> np.ndarray:
        return np.einsum("i,kij,j->k", x, self.A, x) + 2 * self.b @ x + self.c

    def interior_point(self) -> np.ndarray:
        """Approximate maximiser of the smallest normalised slack (a convex program)."""
        norm = np.maximum(np.abs(self.A).max(axis=(1, 2)), np.maximum(np.abs(self.b).max(axis=1), np.abs(self.c)))
        norm = np.maximum(norm, 1e-300)
        n = self.b.shape[1]
        # start from the minimiser of the summed violation surrogate
        Asum = -(self.A / norm[:, None, None]).sum(0)
        bsum = (self.b / norm[:, None]).sum(0)
        x0 = np.linalg.lstsq(Asum, bsum, rcond=None)[0] if np.any(Asum) else np.zeros(n)

        def cons(v):
            return self.values(v[:n]) / norm - v[n]

        res = minimize(lambda v: -v[n], np.r_[x0, float((self.values(x0) / norm).min())], method="SLSQP",
                       constraints=[{"type": "ineq", "fun": cons}, {"type": "ineq", "fun": lambda v: 1.0 - v[n]}],
                       options={"maxiter": 500, "ftol": 1e-14})
        x = res.x[:n]
        if self.values(x).min() < -MEMBERSHIP_TOL:
            raise ValueError("could not find a feasible starting point; the set may be empty (pass start=)")
        return x

    def chord(self, x, d) -> tuple[float, float]:
        """Feasible ``[lo, hi]`` of ``t`` with ``g_k(x + t d) >= 0`` for all ``k``."""
        a = np.einsum("i,kij,j->k", d, self.A, d)
        Ax = np.einsum("kij,j->ki", self.A, x)
        bt = 2 * (Ax @ d + self.b @ d)
        c = np.maximum(self.values(x), 0.0)  # x is feasible up to round-off
        lo, hi = -np.inf, np.inf
        scale = np.maximum(np.abs(a), 1e-300)
        quad = a < -1e-14 * (np.abs(bt) + np.sqrt(np.abs(c) * scale) + 1e-300)
        if np.any(quad):
            aq, bq, cq = a[quad], bt[quad], c[quad]
            disc = np.sqrt(np.maximum(bq * bq - 4 * aq * cq, 0.0))
            # roots of aq t^2 + bq t + cq, the stable way; the product is cq/aq <= 0
            q = -0.5 * (bq + np.where(bq >= 0, disc, -disc))
            with np.errstate(divide="ignore", invalid="ignore"):
                r1 = np.where(q != 0, cq / q, 0.0)
                r2 = q / aq
            lo = max(lo, float(np.minimum(r1, r2).max()))
            hi = min(hi, float(np.maximum(r1, r2).min()))
        lin = ~quad
        if np.any(lin):
            bl, cl = bt[lin], c[lin]
            pos, neg = bl > 0, bl < 0
            if np.any(pos):
                lo = max(lo, float((-cl[pos] / bl[pos]).max()))
            if np.any(neg):
                hi = min(hi, float((-cl[neg] / bl[neg]).min()))
        lo, hi = min(lo, 0.0), max(hi, 0.0)
        return lo, hi


def hit_and_run(
    sset: SemialgebraicSet,
    n: int,
    burn_in: int = 1000,
    seed: int = 0,
    start=None,
    thin: int = 1,
) -> SampleBatch:
    """Hit-and-run chain on a convex set of concave quadratic inequalities.

    Each step draws a direction from a normalised isotropic Gaussian and moves
    to a uniform point of the feasible chord through the current state. The
    first ``burn_in`` states are discarded and every ``thin``-th state after
    that is kept. ``start`` defaults to a point maximising the smallest
    normalised constraint slack.
    """
    if n < 1:
        raise ValueError("n must be positive")
    system = _QuadraticSystem.from_set(sset)
    if start is None:
        start = system.interior_point()
    x = np.asarray(start, dtype=float).copy()
    viol = float(np.max(-system.values(x), initial=0.0))
    if viol > MEMBERSHIP_TOL:
        raise ValueError(f"starting point violates the constraints by {viol:.2e}")
    rng = np.random.default_rng(seed)
    out = np.empty((n, sset.n))
    total = burn_in + n * thin
    kept = 0
    for step in range(total):
        d = rng.standard_normal(sset.n)
        d /= np.linalg.norm(d)
        lo, hi = system.chord(x, d)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError("unbounded chord: the set is unbounded (add a ball_bound)")
        t = rng.uniform(lo, hi) if hi > lo else 0.0
        cand = x + t * d
        if np.max(-system.values(cand), initial=0.0) <= MEMBERSHIP_TOL:
            x = cand
        i = step - burn_in
        if i >= 0 and (i + 1) % thin == 0:
            out[kept] = x
            kept += 1
    return SampleBatch(out, seed, "hit_and_run")


# ---------------------------------------------------------------------------
# shape estimate
# ---------------------------------------------------------------------------

def sample_covariance(points) -> np.ndarray:
    X = np.atleast_2d(np.asarray(points, dtype=float))
    D = X - X.mean(axis=0)
    return D.T @ D / X.shape[0]


def estimate_shape(batch: SampleBatch, floor: float = 1e-10) -> ShapeMatrix:
    """Unit-determinant inverse sample covariance.

    Rank-deficient covariances (smallest eigenvalue below ``floor`` times the
    largest) are regularised with ``1e-8 tr / d`` on the diagonal and a
    warning; a zero covariance is an error.
    """
    X = batch.points
    Ns, d = X.shape
    if Ns < d + 1:
        raise ValueError(f"need at least d+1 = {d + 1} samples, got {Ns}")
    C = sample_covariance(X)
    w = np.linalg.eigvalsh(C)
    if w[-1] <= 0:
        raise ValueError("sample covariance is zero: all samples coincide")
    regularized = False
    if w[0] < floor * w[-1]:
        log.warning("sample covariance is rank deficient (eigenvalues %s); regularising", w)
        C = C + 1e-8 * np.trace(C) / d * np.eye(d)
        regularized = True
    w, V = np.linalg.eigh(C)
    w = np.maximum(w, floor * w[-1])
    Q = (V / w) @ V.T
    Q = 0.5 * (Q + Q.T)
    Q /= np.exp(np.mean(np.log(1.0 / w)))
    return ShapeMatrix(Q, C, Ns, regularized)
