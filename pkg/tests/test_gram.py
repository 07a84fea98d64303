import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import polys
from sisynth.gram import (GramMatrix, MonomialBasis, OddDegreeError,
                          UnrepresentableMonomialError, assemble, is_positive_definite,
                          ldl_pivots, leading_minors, monomial_basis, normalized_minors,
                          pivot_gradient_factor, reconstruct, sos_witness)
from sisynth.polyalg import Poly

x, = Poly.variables(1)
a, b = Poly.variables(2)


def expand(Q, basis):
    """Oracle: Y^T Q Y as a plain coefficient dict."""
    out = {}
    for i, mi in enumerate(basis):
        for j, mj in enumerate(basis):
            if Q[i][j]:
                m = tuple(p + q for p, q in zip(mi, mj))
                out[m] = out.get(m, 0.0) + Q[i][j]
    return {m: v for m, v in out.items() if v != 0}


class TestMonomialBasis:

    def test_square(self):
        assert monomial_basis(x ** 2 + 2 * x + 1).entries == ((0,), (1,))

    def test_half_support(self):
        entries = monomial_basis(a ** 2 * b ** 2 - 1).entries
        assert (0, 0) in entries and (1, 1) in entries

    def test_cancelled_square_stays_representable(self):
        # (a^2 + a - 1/2)^2 + b^2 has no a^2 term, yet its a term needs 1 * a
        q = a ** 2 + a - 0.5
        p = q * q + b ** 2
        entries = monomial_basis(p).entries
        assert (1, 0) in entries
        assert reconstruct(assemble(p, monomial_basis(p))).allclose(p, atol=1e-12)

    def test_odd_degree(self):
        with pytest.raises(OddDegreeError):
            monomial_basis(x ** 3 + 1)

    def test_constant_first_and_distinct(self):
        e = monomial_basis(a ** 4 + b ** 2 + a ** 2 * b ** 2 + 3).entries
        assert e[0] == (0, 0) and len(set(e)) == len(e)


class TestAssemble:

    def test_perfect_square(self):
        p = x ** 2 + 2 * x + 1
        G = assemble(p, MonomialBasis(((0,), (1,))))
        np.testing.assert_array_equal(G.values, [[1, 1], [1, 1]])
        assert expand(G.values, G.basis.entries) == p.terms()

    def test_strict(self):
        p = 2 * x ** 2 + 2 * x + 1
        G = assemble(p, MonomialBasis(((0,), (1,))))
        np.testing.assert_array_equal(G.values, [[1, 1], [1, 2]])
        assert expand(G.values, G.basis.entries) == p.terms()

    def test_zero(self):
        G = assemble(Poly.zero(1), MonomialBasis(((0,), (1,))))
        np.testing.assert_array_equal(G.values, np.zeros((2, 2)))

    def test_lexicographic_pair(self):
        # a*b = Y1*Y2 only; a^2*b = Y1*Y3 (a * ab) is the first pair
        basis = MonomialBasis(((0, 0), (1, 0), (0, 1), (1, 1)))
        G = assemble(a ** 2 * b, basis)
        assert G.values[1, 3] == G.values[3, 1] == 0.5
        # a*b could be Y0*Y3 or Y1*Y2; the smaller pair (0, 3) wins
        G = assemble(a * b, basis)
        assert G.values[0, 3] == 0.5 and G.values[1, 2] == 0

    def test_unrepresentable(self):
        with pytest.raises(UnrepresentableMonomialError) as err:
            assemble(x ** 5, MonomialBasis(((0,), (1,))))
        assert err.value.monomial == (5,)

    def test_symmetric(self, rng):
        p = Poly.from_terms(2, {(i, j): rng.normal() for i in range(3) for j in range(3)
                                if (i + j) % 2 == 0 or i + j < 4})
        p = p + a ** 4 + b ** 4 + a ** 2 * b ** 2 * 3
        G = assemble(p, MonomialBasis(((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))))
        assert np.array_equal(G.values, G.values.T)


class TestLeadingMinors:

    def test_identity(self):
        np.testing.assert_array_equal(leading_minors(np.eye(3)), [1, 1, 1])

    def test_singular(self):
        np.testing.assert_allclose(leading_minors(np.array([[1.0, 1], [1, 1]])), [1, 0],
                                   atol=1e-15)

    def test_pd(self):
        np.testing.assert_allclose(leading_minors(np.array([[1.0, 1], [1, 2]])), [1, 1])

    def test_zero_leading_block(self):
        Q = np.array([[0.0, 1, 0], [1, 0, 0], [0, 0, 2]])
        np.testing.assert_allclose(leading_minors(Q), [0, -1, -2])

    def test_normalized_are_ratios(self, rng):
        A = rng.normal(size=(6, 6))
        Q = A @ A.T + np.eye(6)
        m = leading_minors(Q)
        np.testing.assert_allclose(normalized_minors(Q), m / np.concatenate([[1.0], m[:-1]]),
                                   rtol=1e-10)

    def test_pivots_bound_smallest_eigenvalue(self, rng):
        for _ in range(50):
            A = rng.normal(size=(5, 5))
            Q = A @ A.T
            assert normalized_minors(Q).min() >= np.linalg.eigvalsh(Q).min() - 1e-10


@settings(max_examples=1000)
@given(st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
def test_sylvester_agrees_with_eigenvalues(n, seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(n, n))
    Q = (A + A.T) / 2 + r.uniform(-1, 2) * np.eye(n)
    m = leading_minors(Q)
    eig = np.linalg.eigvalsh(Q)
    if np.all(np.abs(m) > 1e-10) and np.all(np.abs(eig) > 1e-10):
        assert bool(np.all(m > 0)) == bool(eig.min() > 0)
    if eig.min() < -1e-10:
        assert np.any(m <= 0)


def _sum_of_squares(draw_polys):
    p = Poly.zero(draw_polys[0].nvars)
    for q in draw_polys:
        p = p + q * q
    return p


@settings(max_examples=1000)
@given(st.integers(1, 3).flatmap(
    lambda n: st.lists(polys(nvars=n, max_degree=2, max_terms=4), min_size=1, max_size=5)))
def test_reconstruction_of_explicit_sos(squares):
    p = _sum_of_squares(squares)
    G = assemble(p, monomial_basis(p))
    assert reconstruct(G).allclose(p, atol=1e-9)


@settings(max_examples=200)
@given(st.integers(1, 3).flatmap(
    lambda n: st.lists(polys(nvars=n, max_degree=2, max_terms=4), min_size=1, max_size=5)))
def test_pd_gram_gives_sos_witness(squares):
    p = _sum_of_squares(squares) + 1.0
    G = assemble(p, monomial_basis(p))
    if not is_positive_definite(G.values):
        return
    q = _sum_of_squares(sos_witness(G))
    assert q.allclose(p, atol=1e-7)


def test_sos_witness_requires_pd():
    G = GramMatrix(MonomialBasis(((0,), (1,))), np.array([[1.0, 1], [1, 1]]))
    with pytest.raises(ValueError):
        sos_witness(G)


def test_pivot_gradient(rng):
    A = rng.normal(size=(5, 5))
    Q = A @ A.T + 0.5 * np.eye(5)
    d, L = ldl_pivots(Q)
    Linv = pivot_gradient_factor(L)
    h = 1e-6
    for k in range(5):
        for i, j in [(0, 0), (1, 3), (4, 4), (2, 0)]:
            E = np.zeros((5, 5))
            E[i, j] = E[j, i] = 1.0
            fd = (ldl_pivots(Q + h * E)[0][k] - ldl_pivots(Q - h * E)[0][k]) / (2 * h)
            G = np.outer(Linv[k], Linv[k])
            an = G[i, j] + G[j, i] if i != j else G[i, i]
            assert abs(fd - an) < 1e-6
