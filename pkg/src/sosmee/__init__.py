"""Set-membership estimation with moment-SOS relaxations.

Uncertainty sets are basic semialgebraic sets; the package computes enclosing
ellipsoids (minimum volume or fixed shape), enclosing geodesic balls of
rotations, prunes redundant constraints, samples the sets and certifies
minimality of enclosing ellipsoids.
"""

__version__ = "0.1.0"

from .certify import JohnCertificate, certify, contact_points, extract_minimizers, john_feasibility
from .grcc import ChebyshevResult, ShapeMatrix, grcc, lift_to_standard_sdp, rcc
from .mee import DegenerateSetError, Ellipsoid, MEEResult, ProjectionSpec, mee_sos
from .polyalg import MonomialBasis, Polynomial, monomial_basis
from .prune import PruneReport, prune_constraints, redundancy_margin
from .relax import (
    AssumptionError,
    InfeasibleError,
    MomentStructure,
    PseudomomentSolution,
    RelaxationError,
    SemialgebraicSet,
    lower_bound,
)
from .sample import SampleBatch, SamplingError, estimate_shape, hit_and_run, rejection_sample
from .sdpcore import ConicProgram, ConicSolution, Settings, solve
from .so3 import RotationBallResult, geodesic_distance, quaternion_distance, rotation_ball

__all__ = [
    "AssumptionError", "ChebyshevResult", "ConicProgram", "ConicSolution", "DegenerateSetError",
    "Ellipsoid", "InfeasibleError", "JohnCertificate", "MEEResult", "MomentStructure", "MonomialBasis",
    "Polynomial", "ProjectionSpec", "PruneReport", "PseudomomentSolution", "RelaxationError",
    "RotationBallResult", "SampleBatch", "SamplingError", "SemialgebraicSet", "Settings", "ShapeMatrix",
    "certify", "contact_points", "estimate_shape", "extract_minimizers", "geodesic_distance", "grcc",
    "hit_and_run", "john_feasibility", "lift_to_standard_sdp", "lower_bound", "mee_sos", "monomial_basis",
    "prune_constraints", "quaternion_distance", "rcc", "redundancy_margin", "rejection_sample",
    "rotation_ball", "solve",
]
