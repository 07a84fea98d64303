"""Sparse multivariate polynomials with real coefficients.

A :class:`Poly` stores its support as an integer exponent matrix (one row per
term, one column per variable) and a parallel coefficient vector.  Terms are
kept in canonical order (descending graded-lexicographic) with duplicates
merged and near-zero coefficients dropped, so two polynomials are equal iff
their term tables are identical.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

ZERO_TOL = 1e-14

Monomial = tuple  # dense exponent tuple, one entry per variable


class DimensionError(ValueError):
    """Raised when polynomials over different variable spaces are combined."""


def _canonicalize(exps: np.ndarray, coefs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if exps.shape[0] == 0:
        return exps, coefs
    nvars = exps.shape[1]
    if nvars == 0:
        c = float(coefs.sum())
        if abs(c) < ZERO_TOL:
            return exps[:0], coefs[:0]
        return exps[:1], np.array([c])
    # merge duplicate rows
    uniq, inv = np.unique(exps, axis=0, return_inverse=True)
    summed = np.zeros(uniq.shape[0])
    np.add.at(summed, inv.ravel(), coefs)
    keep = np.abs(summed) >= ZERO_TOL
    uniq, summed = uniq[keep], summed[keep]
    order = grlex_order(uniq)
    return np.ascontiguousarray(uniq[order]), summed[order]


def grlex_order(exps: np.ndarray) -> np.ndarray:
    """Indices sorting exponent rows in descending graded-lex order."""
    if exps.shape[0] == 0:
        return np.zeros(0, dtype=int)
    deg = exps.sum(axis=1)
    # lexsort uses the last key as primary; x0 is the most significant variable
    keys = [-exps[:, j] for j in range(exps.shape[1] - 1, -1, -1)] + [-deg]
    return np.lexsort(keys)


class Poly:
    """Immutable sparse polynomial in ``nvars`` real variables."""

    __slots__ = ("nvars", "exps", "coefs", "_hash")

    def __init__(self, nvars: int, exps=None, coefs=None, *, _canonical: bool = False):
        self.nvars = int(nvars)
        if exps is None:
            e = np.zeros((0, self.nvars), dtype=np.int64)
            c = np.zeros(0)
        else:
            e = np.asarray(exps, dtype=np.int64).reshape(-1, self.nvars)
            c = np.asarray(coefs, dtype=float).reshape(-1)
            if e.shape[0] != c.shape[0]:
                raise ValueError("exponent rows and coefficients differ in length")
            if (e < 0).any():
                raise ValueError("negative exponent")
            if not _canonical:
                e, c = _canonicalize(e, c)
        e.setflags(write=False)
        c.setflags(write=False)
        self.exps = e
        self.coefs = c
        self._hash = None

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, nvars: int) -> "Poly":
        return cls(nvars)

    @classmethod
    def const(cls, nvars: int, value: float) -> "Poly":
        return cls(nvars, np.zeros((1, nvars), dtype=np.int64), [value])

    @classmethod
    def var(cls, nvars: int, index: int, power: int = 1) -> "Poly":
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range for {nvars} variables")
        e = np.zeros((1, nvars), dtype=np.int64)
        e[0, index] = power
        return cls(nvars, e, [1.0])

    @classmethod
    def from_terms(cls, nvars: int, terms: Mapping[Sequence[int], float]) -> "Poly":
        """Build from ``{exponent tuple: coefficient}``."""
        if not terms:
            return cls(nvars)
        return cls(nvars, list(terms.keys()), list(terms.values()))

    @classmethod
    def from_sparse_terms(cls, nvars: int, terms: Iterable[tuple[Mapping[int, int], float]]) -> "Poly":
        """Build from ``[({var: exponent}, coefficient), ...]``."""
        rows, cs = [], []
        for mono, c in terms:
            row = [0] * nvars
            for v, k in mono.items():
                row[v] = k
            rows.append(row)
            cs.append(c)
        if not rows:
            return cls(nvars)
        return cls(nvars, rows, cs)

    @staticmethod
    def variables(nvars: int) -> list["Poly"]:
        return [Poly.var(nvars, i) for i in range(nvars)]

    # -- queries ------------------------------------------------------------

    @property
    def nterms(self) -> int:
        return self.coefs.shape[0]

    def is_zero(self) -> bool:
        return self.nterms == 0

    def degree(self) -> int:
        """Total degree; ``-1`` for the zero polynomial."""
        if self.is_zero():
            return -1
        return int(self.exps.sum(axis=1).max())

    def terms(self) -> dict[tuple, float]:
        return {tuple(int(v) for v in row): float(c) for row, c in zip(self.exps, self.coefs)}

    def sparse_terms(self) -> list[tuple[dict[int, int], float]]:
        """Terms with monomials as ``{var: exponent}`` maps (zero exponents omitted)."""
        out = []
        for row, c in zip(self.exps, self.coefs):
            out.append(({int(i): int(row[i]) for i in np.flatnonzero(row)}, float(c)))
        return out

    def coefficient(self, mono: Sequence[int]) -> float:
        return self.terms().get(tuple(mono), 0.0)

    def constant_term(self) -> float:
        return self.coefficient((0,) * self.nvars)

    def support(self) -> set[tuple]:
        return set(self.terms())

    def depends_on(self, var: int) -> bool:
        return bool(self.nterms and (self.exps[:, var] > 0).any())

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "Poly":
        if isinstance(other, Poly):
            if other.nvars != self.nvars:
                raise DimensionError(f"nvars mismatch: {self.nvars} vs {other.nvars}")
            return other
        if isinstance(other, (int, float, np.integer, np.floating)):
            return Poly.const(self.nvars, float(other))
        return NotImplemented

    def __add__(self, other):
        q = self._coerce(other)
        if q is NotImplemented:
            return q
        return Poly(self.nvars, np.vstack([self.exps, q.exps]), np.concatenate([self.coefs, q.coefs]))

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.nvars, self.exps, -self.coefs, _canonical=True)

    def __sub__(self, other):
        q = self._coerce(other)
        if q is NotImplemented:
            return q
        return self + (-q)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.integer, np.floating)):
            if other == 0:
                return Poly(self.nvars)
            return Poly(self.nvars, self.exps, self.coefs * float(other))
        q = self._coerce(other)
        if q is NotImplemented:
            return q
        if self.is_zero() or q.is_zero():
            return Poly(self.nvars)
        e = (self.exps[:, None, :] + q.exps[None, :, :]).reshape(-1, self.nvars)
        c = (self.coefs[:, None] * q.coefs[None, :]).ravel()
        return Poly(self.nvars, e, c)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0 or int(n) != n:
            raise ValueError("only non-negative integer powers")
        out = Poly.const(self.nvars, 1.0)
        base = self
        n = int(n)
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def diff(self, var: int) -> "Poly":
        if not 0 <= var < self.nvars:
            raise IndexError(f"variable index {var} out of range")
        k = self.exps[:, var]
        mask = k > 0
        e = self.exps[mask].copy()
        e[:, var] -= 1
        return Poly(self.nvars, e, self.coefs[mask] * k[mask])

    def gradient(self) -> list["Poly"]:
        return [self.diff(i) for i in range(self.nvars)]

    # -- evaluation ---------------------------------------------------------

    def __call__(self, point) -> float:
        return self.eval(point)

    def eval(self, point) -> float:
        x = np.asarray(point, dtype=float)
        if x.shape != (self.nvars,):
            raise DimensionError(f"expected point of length {self.nvars}, got shape {x.shape}")
        if self.is_zero():
            return 0.0
        return float(np.dot(self.coefs, np.prod(x[None, :] ** self.exps, axis=1)))

    def eval_many(self, points) -> np.ndarray:
        """Evaluate at each row of an ``(N, nvars)`` array."""
        X = np.asarray(points, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.nvars:
            raise DimensionError(f"expected (N, {self.nvars}) array, got shape {X.shape}")
        if self.is_zero():
            return np.zeros(X.shape[0])
        out = np.zeros(X.shape[0])
        for row, c in zip(self.exps, self.coefs):
            nz = np.flatnonzero(row)
            term = np.full(X.shape[0], c)
            for i in nz:
                term = term * X[:, i] ** row[i]
            out += term
        return out

    def subs(self, values: Mapping[int, float]) -> "Poly":
        """Substitute numbers for some variables; the variable count is unchanged."""
        e = self.exps.copy()
        c = self.coefs.copy()
        for v, val in values.items():
            c = c * float(val) ** e[:, v]
            e[:, v] = 0
        return Poly(self.nvars, e, c)

    def coefficients_in(self, var: int) -> list["Poly"]:
        """Split as ``sum_j var**j * P_j`` and return ``[P_0, P_1, ...]`` (``var`` absent from each)."""
        if self.is_zero():
            return [Poly(self.nvars)]
        top = int(self.exps[:, var].max())
        out = []
        for j in range(top + 1):
            mask = self.exps[:, var] == j
            e = self.exps[mask].copy()
            e[:, var] = 0
            out.append(Poly(self.nvars, e, self.coefs[mask]))
        return out

    def extend(self, nvars: int, offset: int = 0) -> "Poly":
        """Embed into a larger variable space, shifting variable ``i`` to ``i + offset``."""
        if offset + self.nvars > nvars:
            raise DimensionError("target space too small")
        e = np.zeros((self.nterms, nvars), dtype=np.int64)
        e[:, offset:offset + self.nvars] = self.exps
        return Poly(nvars, e, self.coefs, _canonical=False)

    def restrict(self, keep: Sequence[int]) -> "Poly":
        """Project onto the listed variables; all others must be absent."""
        keep = list(keep)
        drop = [i for i in range(self.nvars) if i not in keep]
        if drop and self.nterms and (self.exps[:, drop] != 0).any():
            raise ValueError("polynomial depends on dropped variables")
        return Poly(len(keep), self.exps[:, keep], self.coefs)

    # -- comparison / display -----------------------------------------------

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Poly.const(self.nvars, float(other))
        if not isinstance(other, Poly):
            return NotImplemented
        return (
            self.nvars == other.nvars
            and self.exps.shape == other.exps.shape
            and bool(np.array_equal(self.exps, other.exps))
            and bool(np.array_equal(self.coefs, other.coefs))
        )

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.nvars, self.exps.tobytes(), self.coefs.tobytes()))
        return self._hash

    def allclose(self, other: "Poly", atol: float = 1e-9) -> bool:
        diff = self - other
        return diff.is_zero() or float(np.abs(diff.coefs).max()) <= atol

    def __str__(self) -> str:
        if self.is_zero():
            return "0"
        parts = []
        for row, c in zip(self.exps, self.coefs):
            factors = []
            for i in np.flatnonzero(row):
                factors.append(f"x{i}" if row[i] == 1 else f"x{i}^{row[i]}")
            if not factors:
                parts.append(_fmt(c))
            elif c == 1:
                parts.append("*".join(factors))
            else:
                parts.append(_fmt(c) + "*" + "*".join(factors))
        return " + ".join(parts)

    def __repr__(self) -> str:
        return f"Poly({self.nvars}, {self})"


def _fmt(c: float) -> str:
    c = float(c)
    if c.is_integer() and abs(c) < 1e15:
        return str(int(c))
    return repr(c)


def add(p: Poly, q: Poly) -> Poly:
    return p + q


def mul(p: Poly, q: Poly) -> Poly:
    return p * q


def diff(p: Poly, var: int) -> Poly:
    return p.diff(var)


def evaluate(p: Poly, point) -> float:
    return p.eval(point)


def monomial_mul(a: Sequence[int], b: Sequence[int]) -> tuple:
    return tuple(int(x) + int(y) for x, y in zip(a, b))


def monomial_degree(m: Sequence[int]) -> int:
    return int(sum(m))
