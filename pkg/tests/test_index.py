import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sisynth.index import (IndexTemplate, RelativeDegreeError, build_index, lie_derivative,
                           min_phi_dot, min_phi_dot_many, minimizing_control,
                           roots_negative_real)
from sisynth.model import build_arm, build_unicycle
from sisynth.polyalg import Poly

S32 = np.sqrt(3) / 2
s, c, w = Poly.variables(3)


def arm1_index(k):
    return build_index(IndexTemplate(build_arm(1)), [k])


def grid_min(idx, z, step=0.1):
    """Oracle: brute minimum of phi_dot over a regular control grid (includes the corners)."""
    axes = [np.round(np.arange(lo, hi + step / 2, step), 12) for lo, hi in zip(idx.u_min, idx.u_max)]
    return min(idx.phi_dot(z, u) for u in itertools.product(*axes))


class TestArm1Index:

    def test_phi(self):
        assert arm1_index(1.0).phi == c - 0.5 - s * w

    def test_lg(self):
        assert arm1_index(1.0).Lg == (-s,)

    def test_affine_in_k(self):
        assert arm1_index(2.0).phi - arm1_index(1.0).phi == -s * w

    def test_lie_identities(self):
        sys = build_arm(1)
        idx = arm1_index(1.7)
        assert idx.Lf == lie_derivative(idx.phi, sys.f)
        grad = idx.phi.gradient()
        assert idx.Lg[0] == sum((gi * sys.g[i][0] for i, gi in enumerate(grad)), Poly.zero(3))


class TestMinPhiDot:
    # expected values frozen from grid_min (control step 0.1)

    def test_upright(self):
        idx = arm1_index(1.0)
        z = np.array([1.0, 0.0, 0.0])
        assert grid_min(idx, z) == pytest.approx(-1.0, abs=1e-12)
        assert min_phi_dot(idx, z) == pytest.approx(-1.0, abs=1e-12)

    def test_at_lower_angle(self):
        idx = arm1_index(1.0)
        z = np.array([S32, 0.5, 1.0])
        expected = -2.2320508075688772
        assert grid_min(idx, z) == pytest.approx(expected, abs=1e-12)
        assert min_phi_dot(idx, z) == pytest.approx(expected, abs=1e-12)
        # closed form at thetaddot = 1
        assert expected == pytest.approx(-S32 - 0.5 - S32, abs=1e-15)

    def test_zero_lg(self):
        idx = arm1_index(1.0)
        z = np.array([0.0, 0.3, 0.2])
        assert idx.Lg[0].eval(z) == 0.0
        assert min_phi_dot(idx, z) == idx.Lf.eval(z)

    def test_tie_resolves_to_u_min(self):
        idx = arm1_index(1.0)
        assert minimizing_control(idx, np.array([0.0, 0.3, 0.2]))[0] == -1.0


def test_nonpositive_gain_rejected():
    t = IndexTemplate(build_arm(1))
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            build_index(t, [bad])
    with pytest.raises(ValueError):
        build_index(t, [1.0, 2.0])


def test_relative_degree_violation():
    with pytest.raises(RelativeDegreeError):
        IndexTemplate(build_arm(1), order=2)


def test_order_two_template_on_integrator_chain():
    # phi0 = -x0 on a triple integrator has relative degree 3
    from sisynth.model import SubstitutedSystem
    x0, x1, x2 = Poly.variables(3)
    z, one = Poly.zero(3), Poly.const(3, 1.0)
    sys = SubstitutedSystem(
        name="chain", nz=3, nu=1, f=(x1, x2, z), g=((z,), (z,), (one,)), equalities=(),
        state_ineqs=(), u_min=np.array([-1.0]), u_max=np.array([1.0]), phi0=-x0, raw_dim=3,
        lift_fn=lambda r: r, raw_dynamics=lambda r, u: r, raw_lo=np.zeros(3), raw_hi=np.ones(3))
    t = IndexTemplate(sys, order=2)
    idx = build_index(t, [3.0, 2.0])
    assert idx.phi == -x0 - 3 * x1 - 2 * x2
    assert idx.Lg == (Poly.const(3, -2.0),)
    with pytest.raises(ValueError):
        build_index(t, [1.0, 1.0])  # 1 + s + s^2 has complex roots


@settings(max_examples=300)
@given(st.floats(0.01, 10), st.floats(0.01, 10))
def test_root_negativity_closed_form(k1, k2):
    roots = np.roots([k2, k1, 1.0])
    numeric = bool(np.all(np.abs(roots.imag) < 1e-12) and np.all(roots.real < 0))
    if abs(k1 * k1 - 4 * k2) > 1e-9:
        assert roots_negative_real([k1, k2]) == numeric


@pytest.mark.parametrize("sys", [build_arm(1), build_arm(2), build_arm(3), build_unicycle()],
                         ids=lambda s: s.name)
def test_corner_equivalence(sys, rng):
    idx = build_index(IndexTemplate(sys), [1.3])
    X = rng.uniform(sys.raw_lo, sys.raw_hi, size=(10 ** 4, sys.raw_dim))
    if sys.name == "unicycle":
        X = X[np.hypot(X[:, 0], X[:, 1]) > 0.1]
    Z = sys.lift_many(X)
    closed = min_phi_dot_many(idx, Z)
    Lf = idx.Lf.eval_many(Z)
    Lg = np.stack([g.eval_many(Z) for g in idx.Lg], axis=1)
    corners = np.array(list(itertools.product(*zip(idx.u_min, idx.u_max))))
    brute = np.min(Lf[:, None] + Lg @ corners.T, axis=1)
    assert np.max(np.abs(closed - brute)) <= 1e-12
    np.testing.assert_allclose(closed[:50], [min_phi_dot(idx, z) for z in Z[:50]], atol=1e-12)


@pytest.mark.parametrize("sys", [build_arm(2), build_unicycle(coords="polar")],
                         ids=lambda s: s.name)
def test_phi_dot_matches_finite_difference(sys, rng):
    idx = build_index(IndexTemplate(sys), [0.8])
    h = 1e-4
    X = rng.uniform(sys.raw_lo, sys.raw_hi, size=(100, sys.raw_dim))
    for x in X:
        if sys.name.startswith("unicycle") and np.hypot(x[0], x[1]) < 0.1:
            continue
        z = sys.lift(x)
        u = rng.uniform(sys.u_min, sys.u_max)
        zdot = sys.lifted_rate(z, u)
        fd = (idx.phi.eval(z + h * zdot) - idx.phi.eval(z - h * zdot)) / (2 * h)
        assert abs(fd - idx.phi_dot(z, u)) < 2e-6


@settings(max_examples=300)
@given(st.floats(np.pi / 3, 2 * np.pi / 3), st.floats(-1, 1), st.floats(1e-3, 50))
def test_arm1_minimizer_is_full_acceleration(theta, omega, k):
    idx = arm1_index(k)
    z = build_arm(1).lift(np.array([theta, omega]))
    assert minimizing_control(idx, z)[0] == 1.0


def test_symbolic_matches_numeric():
    sys = build_unicycle(coords="polar")
    t = IndexTemplate(sys)
    sym = t.symbolic()
    num = build_index(t, [2.5])
    sub = {sys.nz: 2.5}
    assert sym.phi.subs(sub).restrict(range(sys.nz)).allclose(num.phi)
    assert sym.Lf.subs(sub).restrict(range(sys.nz)).allclose(num.Lf)
    for a, b in zip(sym.Lg, num.Lg):
        assert a.subs(sub).restrict(range(sys.nz)).allclose(b)


def test_per_joint_mode_splits_gain():
    sys = build_arm(2, geometry="absolute")
    t = IndexTemplate(sys, mode="per_joint")
    assert t.theta_dim == 2
    shared = build_index(IndexTemplate(sys), [1.5])
    split = build_index(t, [1.5, 1.5])
    assert split.phi.allclose(shared.phi)
