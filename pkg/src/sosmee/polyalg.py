"""Sparse multivariate polynomials over the reals.

Monomials are exponent tuples (multi-indices). Every basis and every moment
vector in the package is ordered graded-lexicographically: by total degree
first, then by descending exponent of ``x1``, ``x2``, ... so that for two
variables the degree-2 basis reads ``[1, x1, x2, x1^2, x1 x2, x2^2]``.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

MultiIndex = tuple[int, ...]

#: Coefficients below this magnitude are dropped on construction.
DROP_TOL = 1e-14


def degree(alpha: MultiIndex) -> int:
    return sum(alpha)


def grlex_key(alpha: MultiIndex) -> tuple:
    """Sort key realising the graded lexicographic order."""
    return (sum(alpha), tuple(-a for a in alpha))


def basis_size(n: int, d: int) -> int:
    """Number of monomials of degree at most ``d`` in ``n`` variables."""
    return comb(n + d, d)


@lru_cache(maxsize=None)
def _basis(n: int, d: int) -> tuple[MultiIndex, ...]:
    out: list[MultiIndex] = []
    for deg in range(d + 1):
        # compositions of deg into n parts, in descending lex order
        block = []
        for cut in itertools.combinations_with_replacement(range(n), deg):
            alpha = [0] * n
            for i in cut:
                alpha[i] += 1
            block.append(tuple(alpha))
        block.sort(key=grlex_key)
        out.extend(block)
    return tuple(out)


class MonomialBasis(Sequence):
    """Ordered list of all monomials of degree ``<= d`` in ``n`` variables."""

    def __init__(self, n: int, d: int):
        if n < 1 or d < 0:
            raise ValueError(f"need n >= 1 and d >= 0, got n={n}, d={d}")
        self.n = n
        self.d = d
        self.entries = _basis(n, d)
        self._index = {alpha: i for i, alpha in enumerate(self.entries)}

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def index(self, alpha: MultiIndex) -> int:  # type: ignore[override]
        return self._index[alpha]

    def __contains__(self, alpha) -> bool:
        return alpha in self._index

    def evaluate(self, point) -> np.ndarray:
        """Vector of all basis monomials evaluated at ``point``."""
        x = np.asarray(point, dtype=float)
        exps = np.array(self.entries, dtype=int)
        return np.prod(x[None, :] ** exps, axis=1)

    def __repr__(self) -> str:
        return f"MonomialBasis(n={self.n}, d={self.d}, size={len(self)})"


def monomial_basis(n: int, d: int) -> MonomialBasis:
    return MonomialBasis(n, d)


def _add_mono(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


class Polynomial:
    """Immutable sparse polynomial in ``n`` variables.

    ``terms`` maps exponent tuples to float coefficients. Arithmetic with
    scalars and other polynomials returns new instances.
    """

    __slots__ = ("n", "_terms", "_hash")

    def __init__(self, n: int, terms: Mapping[MultiIndex, float] | Iterable = ()):
        if n < 1:
            raise ValueError("a polynomial needs at least one variable")
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[MultiIndex, float] = {}
        for alpha, c in items:
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != n or any(a < 0 for a in alpha):
                raise ValueError(f"bad exponent {alpha} for n={n}")
            acc[alpha] = acc.get(alpha, 0.0) + float(c)
        self.n = n
        self._terms = {a: c for a, c in acc.items() if abs(c) >= DROP_TOL}
        self._hash = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, n: int, c: float) -> Polynomial:
        return cls(n, {(0,) * n: c})

    @classmethod
    def variable(cls, n: int, i: int) -> Polynomial:
        """The coordinate ``x_i`` (zero-based ``i``)."""
        alpha = [0] * n
        alpha[i] = 1
        return cls(n, {tuple(alpha): 1.0})

    @classmethod
    def variables(cls, n: int) -> list[Polynomial]:
        return [cls.variable(n, i) for i in range(n)]

    @classmethod
    def from_coefficients(cls, basis: MonomialBasis, coef) -> Polynomial:
        return cls(basis.n, zip(basis.entries, np.asarray(coef, dtype=float)))

    @classmethod
    def quadratic(cls, A, b=None, c: float = 0.0) -> Polynomial:
        """``x^T A x + 2 b^T x + c`` (``A`` symmetrised)."""
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        A = 0.5 * (A + A.T)
        terms: dict[MultiIndex, float] = {(0,) * n: c}
        for i in range(n):
            for j in range(i, n):
                alpha = [0] * n
                alpha[i] += 1
                alpha[j] += 1
                terms[tuple(alpha)] = A[i, i] if i == j else 2.0 * A[i, j]
        if b is not None:
            for i, bi in enumerate(np.asarray(b, dtype=float)):
                alpha = [0] * n
                alpha[i] = 1
                terms[tuple(alpha)] = 2.0 * bi
        return cls(n, terms)

    # -- accessors ----------------------------------------------------------
    @property
    def terms(self) -> dict[MultiIndex, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coef(self, alpha: MultiIndex) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self._terms), default=0)

    def is_zero(self) -> bool:
        return not self._terms

    def coefficient_vector(self, basis: MonomialBasis) -> np.ndarray:
        v = np.zeros(len(basis))
        for alpha, c in self._terms.items():
            v[basis.index(alpha)] = c
        return v

    def max_abs_coef(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # -- evaluation ---------------------------------------------------------
    def __call__(self, point) -> float:
        return evaluate(self, point)

    def evaluate_many(self, points) -> np.ndarray:
        X = np.atleast_2d(np.asarray(points, dtype=float))
        if X.shape[1] != self.n:
            raise ValueError(f"points have dimension {X.shape[1]}, polynomial has n={self.n}")
        if not self._terms:
            return np.zeros(X.shape[0])
        exps = np.array(list(self._terms.keys()), dtype=int)
        coefs = np.array(list(self._terms.values()))
        mons = np.prod(X[:, None, :] ** exps[None, :, :], axis=2)
        return mons @ coefs

    # -- arithmetic ---------------------------------------------------------
    def _coerce(self, other) -> Polynomial:
        if isinstance(other, Polynomial):
            if other.n != self.n:
                raise ValueError(f"variable count mismatch: {self.n} vs {other.n}")
            return other
        if np.isscalar(other):
            return Polynomial.constant(self.n, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        acc = dict(self._terms)
        for a, c in other._terms.items():
            acc[a] = acc.get(a, 0.0) + c
        return Polynomial(self.n, acc)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            return Polynomial(self.n, {a: c * float(other) for a, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / float(s))

    def __pow__(self, k: int):
        if k < 0 or int(k) != k:
            raise ValueError("only non-negative integer powers")
        out = Polynomial.constant(self.n, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def substitute(self, images: Sequence[Polynomial]) -> Polynomial:
        """Compose: replace variable ``x_i`` by the polynomial ``images[i]``."""
        if len(images) != self.n:
            raise ValueError("need one image per variable")
        m = images[0].n
        out = Polynomial(m, {})
        cache: dict[tuple[int, int], Polynomial] = {}

        def power(i, k):
            if (i, k) not in cache:
                cache[(i, k)] = images[i] ** k
            return cache[(i, k)]

        for alpha, c in self._terms.items():
            term = Polynomial.constant(m, c)
            for i, k in enumerate(alpha):
                if k:
                    term = term * power(i, k)
            out = out + term
        return out

    def affine_substitute(self, shift, scale) -> Polynomial:
        """Polynomial in ``y`` equal to ``self(shift + scale * y)``."""
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.n,))
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (self.n,))
        xs = Polynomial.variables(self.n)
        return self.substitute([shift[i] + scale[i] * xs[i] for i in range(self.n)])

    def hessian_of_quadratic_part(self) -> np.ndarray:
        H = np.zeros((self.n, self.n))
        for alpha, c in self._terms.items():
            if sum(alpha) != 2:
                continue
            idx = [i for i, a in enumerate(alpha) for _ in range(a)]
            i, j = idx
            if i == j:
                H[i, i] += 2.0 * c
            else:
                H[i, j] += c
                H[j, i] += c
        return H

    # -- comparison / io ------------------------------------------------------
    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.n == other.n and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.n, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: Polynomial, atol: float = 1e-10) -> bool:
        return (self - other).max_abs_coef() <= atol

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "terms": [
                {"exp": list(a), "coef": c}
                for a, c in sorted(self._terms.items(), key=lambda t: grlex_key(t[0]))
            ],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> Polynomial:
        n = int(data["n"])
        return cls(n, [(tuple(t["exp"]), t["coef"]) for t in data.get("terms", [])])

    def __repr__(self) -> str:
        if not self._terms:
            return f"Polynomial(n={self.n}, 0)"
        parts = []
        for alpha, c in sorted(self._terms.items(), key=lambda t: grlex_key(t[0])):
            mono = "*".join(
                f"x{i + 1}" + (f"^{a}" if a > 1 else "") for i, a in enumerate(alpha) if a
            )
            parts.append(f"{c:+.6g}" + (f"*{mono}" if mono else ""))
        return f"Polynomial(n={self.n}, {' '.join(parts)})"


def evaluate(p: Polynomial, point) -> float:
    x = np.asarray(point, dtype=float).ravel()
    if x.shape[0] != p.n:
        raise ValueError(f"point has dimension {x.shape[0]}, polynomial has n={p.n}")
    total = 0.0
    for alpha, c in p.items():
        total += c * float(np.prod(x ** np.array(alpha)))
    return total


def multiply(p: Polynomial, q: Polynomial) -> Polynomial:
    if p.n != q.n:
        raise ValueError(f"variable count mismatch: {p.n} vs {q.n}")
    acc: dict[MultiIndex, float] = {}
    for a, ca in p.items():
        for b, cb in q.items():
            g = _add_mono(a, b)
            acc[g] = acc.get(g, 0.0) + ca * cb
    return Polynomial(p.n, acc)
