import numpy as np
import pytest

from sosmee.polyalg import Polynomial
from sosmee.relax import SemialgebraicSet


def disk(r=1.0, center=(0.0, 0.0)):
    c = np.asarray(center, dtype=float)
    n = c.size
    # r^2 - |x - c|^2
    return Polynomial.quadratic(-np.eye(n), c, r * r - c @ c)


def disk_set(r=1.0, center=(0.0, 0.0), ball_bound=None):
    return SemialgebraicSet(len(center), [disk(r, center)], [], ball_bound)


def box_set(a=2.0, b=1.0):
    x = Polynomial.variables(2)
    return SemialgebraicSet(2, [a * a - x[0] ** 2, b * b - x[1] ** 2])


def rectangle_set(a=2.0, b=1.0):
    """Same box written with linear constraints (hit-and-run friendly)."""
    x = Polynomial.variables(2)
    return SemialgebraicSet(2, [a - x[0], a + x[0], b - x[1], b + x[1]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
