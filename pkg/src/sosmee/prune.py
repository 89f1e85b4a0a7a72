"""Greedy removal of redundant inequality constraints.

Constraints are visited in input order. Constraint ``k`` is dropped when a
moment lower bound of ``g_k`` over the set defined by the constraints kept so
far (without ``k``) is nonnegative: every point of that set then satisfies
``g_k >= 0`` and the feasible region is unchanged.

The bounds come from the order-``kappa`` moment relaxation (order one by
default, which scales to thousands of quadratic constraints). The moment
structure of the full set is built once; each sub-problem switches off the
localizers of the constraints already dropped and of ``k`` itself.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import sdpcore
from .grcc import quadratic_frame
from .relax import (
    MomentStructure,
    RelaxationError,
    SemialgebraicSet,
    add_moment_constraints,
    build_structure,
    check_status,
)
from .sdpcore import ProgramBuilder, Settings

log = logging.getLogger(__name__)


@dataclass
class PruneReport:
    kept: list[int]
    dropped: list[int]
    bounds: list[float]  # lower bound of each g_k, nan if not computed
    times: list[float]
    failures: dict[int, str] = field(default_factory=dict)
    order: int = 1
    eps: float = 0.0

    @property
    def n_constraints(self) -> int:
        return len(self.bounds)

    @property
    def kept_fraction(self) -> float:
        return len(self.kept) / max(self.n_constraints, 1)

    def to_json(self) -> dict:
        return {
            "kept": list(self.kept),
            "dropped": list(self.dropped),
            "bounds": [None if math.isnan(b) else b for b in self.bounds],
            "times": list(self.times),
            "failures": {str(k): v for k, v in self.failures.items()},
            "order": self.order,
            "eps": self.eps,
        }

    @classmethod
    def from_json(cls, data) -> PruneReport:
        return cls(
            kept=list(data["kept"]),
            dropped=list(data["dropped"]),
            bounds=[float("nan") if b is None else float(b) for b in data["bounds"]],
            times=list(data["times"]),
            failures={int(k): v for k, v in data.get("failures", {}).items()},
            order=int(data.get("order", 1)),
            eps=float(data.get("eps", 0.0)),
        )


class _Pruner:
    """Frame, structure and solver shared by all sub-problems of one pass."""

    def __init__(self, sset: SemialgebraicSet, order: int, settings: Settings | None):
        if 2 * order < max(2, sset.max_degree):
            raise RelaxationError(f"order {order} too small for constraint degree {sset.max_degree}")
        self.sset = sset
        self.order = order
        self.settings = settings
        frame = quadratic_frame(sset)
        # work in a frame where the set has size of order one; each
        # constraint is rescaled by a positive factor, recorded to map the
        # bounds back
        if frame is None:
            shift, scale = np.zeros(sset.n), 1.0
        else:
            shift, scale = frame
        ineq = [g.affine_substitute(shift, scale) for g in sset.inequalities]
        self.factor = np.array([max(g.max_abs_coef(), 1e-300) for g in ineq])
        ineq = [g / f for g, f in zip(ineq, self.factor)]
        eq = [h.affine_substitute(shift, scale) for h in sset.equalities]
        eq = [h / max(h.max_abs_coef(), 1e-300) for h in eq]
        extra = []
        if sset.ball_bound is not None:
            ball = sset.ball_polynomial().affine_substitute(shift, scale)
            extra.append(ball / ball.max_abs_coef())
        self.work = SemialgebraicSet(sset.n, ineq + extra, eq, None)
        self.n_ineq = len(ineq)
        self.structure: MomentStructure = build_structure(self.work, order)

    def bound(self, k: int, active) -> float:
        """Lower bound of ``g_k`` (original scaling) with the given inequalities active."""
        st = self.structure
        locs = [i for i in active if i != k] + list(range(self.n_ineq, len(st.localizers)))
        b = ProgramBuilder()
        z = add_moment_constraints(b, st, locs)
        c = st.coefficient_vector(self.work.inequalities[k])
        b.add_linear_objective(z, c)
        sol = sdpcore.solve(b.build(), self.settings)
        check_status(sol, f"redundancy bound of constraint {k}")
        return float(c @ sol.x[z]) * float(self.factor[k])


def redundancy_margin(
    k: int,
    sset: SemialgebraicSet,
    order: int = 1,
    settings: Settings | None = None,
) -> float:
    """Lower bound of ``g_k`` over the set cut out by every other constraint."""
    if not 0 <= k < len(sset.inequalities):
        raise IndexError(f"constraint index {k} out of range")
    pr = _Pruner(sset, order, settings)
    return pr.bound(k, range(len(sset.inequalities)))


def prune_constraints(
    sset: SemialgebraicSet,
    order: int = 1,
    eps: float = 0.0,
    settings: Settings | None = None,
) -> tuple[SemialgebraicSet, PruneReport]:
    """One greedy pass over the inequalities; returns the pruned set and a report.

    Sub-problems that fail (solver trouble, unbounded relaxation) keep their
    constraint; the reason is logged and recorded in ``report.failures``.
    """
    N = len(sset.inequalities)
    pr = _Pruner(sset, order, settings)
    active = list(range(N))
    bounds = [float("nan")] * N
    times = [0.0] * N
    failures: dict[int, str] = {}
    for k in range(N):
        t0 = time.perf_counter()
        try:
            bounds[k] = pr.bound(k, active)
        except RelaxationError as err:
            failures[k] = str(err)
            log.info("constraint %d kept: %s", k, err)
        times[k] = time.perf_counter() - t0
        if not math.isnan(bounds[k]) and bounds[k] >= eps:
            active.remove(k)
    dropped = [k for k in range(N) if k not in set(active)]
    pruned = sset.replace(inequalities=[sset.inequalities[k] for k in active])
    report = PruneReport(active, dropped, bounds, times, failures, order, eps)
    return pruned, report

