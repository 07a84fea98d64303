"""Fixed-assignment Gram matrices and Sylvester leading-minor tests.

Each monomial of ``p0`` is routed to exactly one Gram entry: a perfect square
``Y_k**2`` goes to the diagonal, anything else to the first index pair
``(i, j)``, ``i < j``, with ``Y_i * Y_j`` equal to it, split symmetrically.
This gives up the freedom of a full SOS program but keeps ``Q`` linear in the
coefficients of ``p0``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .polyalg import Poly, grlex_order


class OddDegreeError(ValueError):
    """Polynomial of odd total degree; it cannot be a sum of squares."""


class UnrepresentableMonomialError(ValueError):
    def __init__(self, monomial):
        self.monomial = tuple(monomial)
        super().__init__(f"monomial {self.monomial} is not a product of two basis entries")


@dataclass(frozen=True)
class MonomialBasis:
    entries: tuple  # exponent tuples, entries[0] is the constant monomial

    def __len__(self):
        return len(self.entries)

    @property
    def nvars(self) -> int:
        return len(self.entries[0])

    def as_polys(self) -> list[Poly]:
        n = self.nvars
        return [Poly(n, [e], [1.0]) for e in self.entries]


@dataclass(frozen=True)
class GramMatrix:
    basis: MonomialBasis
    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def ascending_grlex(monos: Iterable[tuple]) -> list[tuple]:
    monos = list(monos)
    if not monos:
        return []
    arr = np.array(monos, dtype=np.int64).reshape(len(monos), -1)
    order = grlex_order(arr)[::-1]
    return [monos[i] for i in order]


def half_support(support: Iterable[tuple], nvars: int) -> list[tuple]:
    """Constant monomial followed by every ``m`` with ``2m`` in the support, ascending grlex."""
    zero = (0,) * nvars
    halves = {tuple(e // 2 for e in m) for m in support if all(e % 2 == 0 for e in m)}
    halves.discard(zero)
    return [zero] + ascending_grlex(halves)


def box_half_support(support: Iterable[tuple], nvars: int) -> list[tuple]:
    """Constant monomial followed by every ``m`` with ``2m`` under the support's exponent box.

    ``m`` qualifies when ``2m`` is exponent-wise at most the largest exponent of
    each variable in the support and ``2 deg(m)`` is at most the support degree.
    Support monomials that still have no product representation get their two
    halves (floor and ceiling) added, so mixed terms whose square partners
    cancelled stay expressible.
    """
    zero = (0,) * nvars
    supp = [tuple(m) for m in support]
    if not supp:
        return [zero]
    arr = np.array(supp, dtype=np.int64).reshape(len(supp), nvars)
    cap = arr.max(axis=0) // 2
    half_deg = int(arr.sum(axis=1).max()) // 2
    entries = {m for m in itertools.product(*(range(int(c) + 1) for c in cap)) if sum(m) <= half_deg}
    entries.add(zero)
    rep = representation_map([zero] + ascending_grlex(entries - {zero}))
    for m in supp:
        if m not in rep:
            low = tuple(e // 2 for e in m)
            entries.update({low, tuple(e - f for e, f in zip(m, low))})
    entries.discard(zero)
    return [zero] + ascending_grlex(entries)


def monomial_basis(p0: Poly) -> MonomialBasis:
    if p0.degree() > 0 and p0.degree() % 2 == 1:
        raise OddDegreeError(f"degree {p0.degree()} is odd")
    return MonomialBasis(tuple(box_half_support(p0.support(), p0.nvars)))


def representation_map(entries: Sequence[tuple]) -> dict:
    """``{monomial: (i, j)}`` under the fixed assignment rule (``i == j`` for squares)."""
    rep = {}
    n = len(entries)
    arr = np.array(entries, dtype=np.int64).reshape(n, -1)
    for i in range(n):
        sums = arr[i] + arr[i + 1:]
        for off, row in enumerate(sums):
            rep.setdefault(tuple(int(v) for v in row), (i, i + 1 + off))
    for i in range(n):
        rep[tuple(int(2 * v) for v in arr[i])] = (i, i)
    return rep


def assemble(p0: Poly, basis: MonomialBasis) -> GramMatrix:
    rep = representation_map(basis.entries)
    n = len(basis)
    Q = np.zeros((n, n))
    for mono, w in p0.terms().items():
        if mono not in rep:
            raise UnrepresentableMonomialError(mono)
        i, j = rep[mono]
        if i == j:
            Q[i, i] += w
        else:
            Q[i, j] += w / 2.0
            Q[j, i] += w / 2.0
    return GramMatrix(basis, Q)


def reconstruct(G: GramMatrix) -> Poly:
    """``Y^T Q Y`` as a polynomial."""
    Y = G.basis.as_polys()
    n = G.dim
    out = Poly.zero(G.basis.nvars)
    for i in range(n):
        for j in range(n):
            if G.values[i, j] != 0.0:
                out = out + Y[i] * Y[j] * float(G.values[i, j])
    return out


def ldl_pivots(Q: np.ndarray, tiny: float = 1e-300) -> tuple[np.ndarray, np.ndarray]:
    """Unpivoted ``Q = L D L^T``; returns ``(pivots, L)``.

    Pivots are ``det(Q_k) / det(Q_{k-1})``.  The elimination carries on past
    nonpositive pivots; an exactly-zero pivot is reported as zero but divided
    by as ``tiny`` so the remaining entries stay finite.
    """
    A = np.array(Q, dtype=float, copy=True)
    n = A.shape[0]
    L = np.eye(n)
    d = np.empty(n)
    for k in range(n):
        piv = A[k, k]
        d[k] = piv
        if abs(piv) < tiny:
            piv = tiny if piv >= 0 else -tiny
        if k + 1 < n:
            col = A[k + 1:, k] / piv
            L[k + 1:, k] = col
            A[k + 1:, k + 1:] -= np.outer(col, A[k, k + 1:])
    return d, L


def normalized_minors(Q) -> np.ndarray:
    """Leading minors divided by their predecessors, i.e. the LDL pivots."""
    Q = Q.values if isinstance(Q, GramMatrix) else np.asarray(Q, dtype=float)
    if Q.shape[0] == 0:
        return np.zeros(0)
    return ldl_pivots(Q)[0]


def leading_minors(Q) -> np.ndarray:
    """``det(Q_k)`` for ``k = 1..n``."""
    Q = Q.values if isinstance(Q, GramMatrix) else np.asarray(Q, dtype=float)
    n = Q.shape[0]
    out = np.empty(n)
    det = 1.0
    A = np.array(Q, dtype=float, copy=True)
    for k in range(n):
        piv = A[k, k]
        det *= piv
        out[k] = det
        if piv == 0.0:
            # a singular leading block: fall back to direct determinants
            for m in range(k + 1, n):
                out[m] = np.linalg.det(Q[:m + 1, :m + 1])
            return out
        if k + 1 < n:
            col = A[k + 1:, k] / piv
            A[k + 1:, k + 1:] -= np.outer(col, A[k, k + 1:])
    return out


def is_positive_definite(Q, eps: float = 0.0) -> bool:
    piv = normalized_minors(Q)
    return bool(piv.size == 0 or piv.min() > eps)


def sos_witness(G: GramMatrix) -> list[Poly]:
    """Polynomials whose squares sum to ``Y^T Q Y``; requires ``Q`` positive definite."""
    d, L = ldl_pivots(G.values)
    if d.size and d.min() <= 0:
        raise ValueError("Gram matrix is not positive definite")
    Y = G.basis.as_polys()
    out = []
    n = G.dim
    for k in range(n):
        q = Poly.zero(G.basis.nvars)
        for i in range(k, n):
            if L[i, k] != 0.0:
                q = q + Y[i] * float(L[i, k])
        out.append(q * float(np.sqrt(d[k])))
    return out


def pivot_gradient_factor(L: np.ndarray) -> np.ndarray:
    """``Linv`` with ``d(pivot_k)/dQ = outer(Linv[k], Linv[k])``."""
    from scipy.linalg import solve_triangular

    return solve_triangular(L, np.eye(L.shape[0]), lower=True, unit_diagonal=True)
