"""Lifted polynomial descriptions of the shipped control systems.

Trigonometric and distance terms are replaced by auxiliary variables tied
together by polynomial equalities (``s**2 + c**2 - 1 = 0`` and friends), so
the drift ``f``, the control map ``g`` and the safety specification ``phi0``
are all polynomials in the lifted state ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .polyalg import Poly

SQRT3_2 = np.sqrt(3.0) / 2.0


class LiftError(ValueError):
    """The raw state lies where an auxiliary lift is undefined."""


@dataclass(frozen=True)
class SubstitutedSystem:
    """Control-affine system ``zdot = f(z) + g(z) u`` in lifted coordinates.

    ``raw_dynamics``, ``raw_lo``/``raw_hi`` and ``velocity_coords`` are not
    needed for synthesis; they drive simulation and manifold sampling.
    ``velocity_coords`` lists ``(raw_index, lifted_index)`` pairs of
    coordinates that are copied unchanged by the lift.
    """

    name: str
    nz: int
    nu: int
    f: tuple
    g: tuple  # nz rows of nu Polys
    equalities: tuple
    state_ineqs: tuple
    u_min: np.ndarray
    u_max: np.ndarray
    phi0: Poly
    raw_dim: int
    lift_fn: Callable[[np.ndarray], np.ndarray]
    raw_dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    raw_lo: np.ndarray
    raw_hi: np.ndarray
    velocity_coords: tuple = ()
    var_names: tuple = ()
    distance_fn: Optional[Callable[[np.ndarray], float]] = None
    joint_groups: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.f) != self.nz or len(self.g) != self.nz:
            raise ValueError("f and g must have nz rows")
        if any(len(row) != self.nu for row in self.g):
            raise ValueError("g rows must have nu entries")
        if not np.all(np.asarray(self.u_min) < np.asarray(self.u_max)):
            raise ValueError("u_min must be strictly below u_max")
        for p in (*self.f, *(q for row in self.g for q in row), *self.equalities,
                  *self.state_ineqs, self.phi0):
            if p.nvars != self.nz:
                raise ValueError("all polynomials must live in the lifted space")

    def lift(self, raw) -> np.ndarray:
        x = np.asarray(raw, dtype=float)
        if x.shape != (self.raw_dim,):
            raise ValueError(f"raw state must have length {self.raw_dim}")
        return self.lift_fn(x)

    def lift_many(self, raws) -> np.ndarray:
        """Lift the rows of an ``(N, raw_dim)`` array; lift functions broadcast."""
        X = np.asarray(raws, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.raw_dim:
            raise ValueError(f"raw states must have shape (N, {self.raw_dim})")
        return self.lift_fn(X)

    def lifted_rate(self, z, u) -> np.ndarray:
        """``f(z) + g(z) u`` evaluated numerically."""
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.array([fi.eval(z) for fi in self.f])
        for i, row in enumerate(self.g):
            out[i] += sum(gij.eval(z) * uj for gij, uj in zip(row, u))
        return out

    def in_region(self, z, tol: float = 1e-10) -> bool:
        return all(s.eval(z) >= -tol for s in self.state_ineqs)

    def equality_residual(self, z) -> float:
        if not self.equalities:
            return 0.0
        return max(abs(h.eval(z)) for h in self.equalities)


# -- planar arm ---------------------------------------------------------------

def _angle_sum(sins: list, coss: list) -> tuple:
    """sin and cos of the running angle sum, expanded with angle-sum identities."""
    s_acc, c_acc = sins[0], coss[0]
    out_s, out_c = [s_acc], [c_acc]
    for s, c in zip(sins[1:], coss[1:]):
        s_acc, c_acc = s_acc * c + c_acc * s, c_acc * c - s_acc * s
        out_s.append(s_acc)
        out_c.append(c_acc)
    return out_s, out_c


def build_arm(n_dof: int, link_length: float = 1.0, wall_factor: float = 0.5,
              angle_box=(np.pi / 3, 2 * np.pi / 3), speed_bound: float = 1.0,
              accel_bound: float = 1.0, geometry: str = "serial") -> SubstitutedSystem:
    """Planar arm with unit links reaching toward a wall at ``x = wall_factor * n_dof``.

    Lifted state per joint is ``(s_i, c_i, thetadot_i)``; the raw state is
    ``[theta_1..theta_n, thetadot_1..thetadot_n]`` and the controls are the
    angular accelerations.

    ``geometry="serial"`` uses relative joint angles, so the end-effector
    coordinate is a sum of cosines of running angle sums.  With the default
    box every joint past the first folds the chain back toward the base, so
    for ``n_dof >= 2`` the wall is out of reach and a small enough gain has
    an empty zero level set inside ``X``.  ``geometry="absolute"``
    boxes and actuates each link's absolute orientation instead, giving
    ``x_ee = sum_i cos(theta_i)``.
    """
    if geometry not in ("serial", "absolute"):
        raise ValueError(f"unknown arm geometry {geometry!r}")
    if not isinstance(n_dof, (int, np.integer)) or not 1 <= n_dof <= 14:
        raise ValueError("n_dof must be an integer in [1, 14]")
    if tuple(angle_box) != (np.pi / 3, 2 * np.pi / 3):
        # the lifted box encoding below is specific to this interval
        raise ValueError("only the [pi/3, 2pi/3] joint box is supported")
    n = int(n_dof)
    nz = 3 * n
    z = Poly.variables(nz)
    S = [z[3 * i] for i in range(n)]
    C = [z[3 * i + 1] for i in range(n)]
    V = [z[3 * i + 2] for i in range(n)]
    zero = Poly.zero(nz)
    one = Poly.const(nz, 1.0)

    f, g = [], []
    for i in range(n):
        f += [C[i] * V[i], -S[i] * V[i], zero]
        for j in range(3):
            row = [zero] * n
            if j == 2:
                row[i] = one
            g.append(tuple(row))

    if geometry == "serial":
        _, cum_c = _angle_sum(S, C)
    else:
        cum_c = C
    x_ee = Poly.zero(nz)
    for cc in cum_c:
        x_ee = x_ee + cc * link_length
    wall = wall_factor * n
    phi0 = x_ee - wall

    equalities = tuple(S[i] * S[i] + C[i] * C[i] - 1.0 for i in range(n))
    ineqs = []
    sb = float(speed_bound)
    for i in range(n):
        ineqs += [S[i] - SQRT3_2, 1.0 - S[i], C[i] + 0.5, 0.5 - C[i], sb * sb - V[i] * V[i]]

    def lift(raw):
        th, om = raw[..., :n], raw[..., n:]
        out = np.empty(raw.shape[:-1] + (nz,))
        out[..., 0::3] = np.sin(th)
        out[..., 1::3] = np.cos(th)
        out[..., 2::3] = om
        return out

    def raw_dynamics(raw, u):
        return np.concatenate([raw[..., n:], np.asarray(u, dtype=float)], axis=-1)

    def distance(raw):
        th = np.asarray(raw, dtype=float)[..., :n]
        ang = np.cumsum(th, axis=-1) if geometry == "serial" else th
        return wall - np.sum(link_length * np.cos(ang), axis=-1)

    names = []
    for i in range(n):
        names += [f"s{i + 1}", f"c{i + 1}", f"w{i + 1}"]
    return SubstitutedSystem(
        name=f"arm{n}" if geometry == "serial" else f"arm{n}-abs",
        nz=nz,
        nu=n,
        f=tuple(f),
        g=tuple(g),
        equalities=equalities,
        state_ineqs=tuple(ineqs),
        u_min=np.full(n, -float(accel_bound)),
        u_max=np.full(n, float(accel_bound)),
        phi0=phi0,
        raw_dim=2 * n,
        lift_fn=lift,
        raw_dynamics=raw_dynamics,
        raw_lo=np.concatenate([np.full(n, angle_box[0]), np.full(n, -sb)]),
        raw_hi=np.concatenate([np.full(n, angle_box[1]), np.full(n, sb)]),
        velocity_coords=tuple((n + i, 3 * i + 2) for i in range(n)),
        var_names=tuple(names),
        distance_fn=distance,
        joint_groups=tuple((3 * i, 3 * i + 1, 3 * i + 2) for i in range(n)),
        params={"n_dof": n, "wall": wall, "link_length": link_length, "geometry": geometry},
    )


# -- unicycle -----------------------------------------------------------------

@dataclass(frozen=True)
class UnicycleParams:
    obstacle: tuple = (0.0, 0.0)
    d_min: float = 1.0
    d_lo: Optional[float] = None  # defaults to 0.5 * d_min
    d_hi: Optional[float] = None  # defaults to 10 * d_min
    v_lo: float = 0.2
    v_hi: float = 2.0
    pos_bound: Optional[float] = None  # |dx|, |dy| bound; defaults to 10 * d_min
    a_bound: float = 1.0
    w_bound: float = 1.0

    def resolved(self) -> "UnicycleParams":
        return UnicycleParams(
            obstacle=tuple(self.obstacle),
            d_min=self.d_min,
            d_lo=0.5 * self.d_min if self.d_lo is None else self.d_lo,
            d_hi=10.0 * self.d_min if self.d_hi is None else self.d_hi,
            v_lo=self.v_lo,
            v_hi=self.v_hi,
            pos_bound=10.0 * self.d_min if self.pos_bound is None else self.pos_bound,
            a_bound=self.a_bound,
            w_bound=self.w_bound,
        )


def build_unicycle(params: Optional[UnicycleParams] = None, coords: str = "cartesian",
                   **overrides) -> SubstitutedSystem:
    """Unicycle ``(px, py, v, heading)`` avoiding a point obstacle.

    Controls are ``(acceleration, turn rate)``.

    ``coords="cartesian"`` lifts to ``(dx, dy, v, s, c, d, r)`` with ``d`` the
    distance to the obstacle and ``r = 1/d``.

    ``coords="polar"`` lifts to ``(d, r, v, rho, tau)`` where ``rho`` and
    ``tau`` are the cosine and sine of the heading measured from the outward
    radial direction.  The position only enters through ``d``, which keeps
    the certificate polynomials small.
    """
    p = (params or UnicycleParams())
    if overrides:
        p = UnicycleParams(**{**p.__dict__, **overrides})
    p = p.resolved()
    if p.d_min <= 0:
        raise ValueError("d_min must be positive")
    if p.d_lo <= 0:
        raise ValueError("distance box lower bound must be positive (r = 1/d is singular at 0)")
    if not (p.d_lo < p.d_hi and p.v_lo < p.v_hi and p.pos_bound > 0
            and p.a_bound > 0 and p.w_bound > 0):
        raise ValueError("degenerate unicycle boxes")
    if coords == "cartesian":
        return _unicycle_cartesian(p)
    if coords == "polar":
        return _unicycle_polar(p)
    raise ValueError(f"unknown unicycle coordinates {coords!r}")


def _unicycle_common(p: UnicycleParams) -> dict:
    ox, oy = p.obstacle
    P = p.pos_bound

    def raw_dynamics(raw, u):
        vel, th = raw[..., 2], raw[..., 3]
        u = np.asarray(u, dtype=float)
        return np.stack([vel * np.cos(th), vel * np.sin(th), u[..., 0], u[..., 1]], axis=-1)

    def distance(raw):
        raw = np.asarray(raw, dtype=float)
        return np.hypot(raw[..., 0] - ox, raw[..., 1] - oy) - p.d_min

    return dict(
        nu=2,
        u_min=np.array([-p.a_bound, -p.w_bound]),
        u_max=np.array([p.a_bound, p.w_bound]),
        raw_dim=4,
        raw_dynamics=raw_dynamics,
        raw_lo=np.array([ox - P, oy - P, p.v_lo, -np.pi]),
        raw_hi=np.array([ox + P, oy + P, p.v_hi, np.pi]),
        velocity_coords=((2, 2),),
        distance_fn=distance,
        joint_groups=(),
        params=dict(p.__dict__),
    )


def _offset(p: UnicycleParams, raw):
    ex, ey = raw[..., 0] - p.obstacle[0], raw[..., 1] - p.obstacle[1]
    dist = np.hypot(ex, ey)
    if np.any(dist <= 0.0) or not np.all(np.isfinite(dist)):
        raise LiftError("distance lift undefined at the obstacle position")
    return ex, ey, dist


def _unicycle_cartesian(p: UnicycleParams) -> SubstitutedSystem:
    nz = 7
    dx, dy, v, s, c, d, r = Poly.variables(nz)
    zero = Poly.zero(nz)
    one = Poly.const(nz, 1.0)
    ddot = (dx * v * c + dy * v * s) * r
    f = (v * c, v * s, zero, zero, zero, ddot, -(ddot * r * r))
    g = ((zero, zero), (zero, zero), (one, zero), (zero, c), (zero, -s), (zero, zero), (zero, zero))
    equalities = (s * s + c * c - 1.0, d * d - dx * dx - dy * dy, d * r - 1.0)
    P = p.pos_bound
    ineqs = (
        d - p.d_lo, p.d_hi - d,
        v - p.v_lo, p.v_hi - v,
        dx + P, P - dx, dy + P, P - dy,
        r - 1.0 / p.d_hi, 1.0 / p.d_lo - r,
        s + 1.0, 1.0 - s, c + 1.0, 1.0 - c,
    )

    def lift(raw):
        ex, ey, dist = _offset(p, raw)
        th = raw[..., 3]
        return np.stack([ex, ey, raw[..., 2], np.sin(th), np.cos(th), dist, 1.0 / dist], axis=-1)

    return SubstitutedSystem(
        name="unicycle", nz=nz, f=f, g=g, equalities=equalities, state_ineqs=ineqs,
        phi0=p.d_min - d, lift_fn=lift, var_names=("dx", "dy", "v", "s", "c", "d", "r"),
        **_unicycle_common(p))


def _unicycle_polar(p: UnicycleParams) -> SubstitutedSystem:
    nz = 5
    d, r, v, rho, tau = Poly.variables(nz)
    zero = Poly.zero(nz)
    one = Poly.const(nz, 1.0)
    # ddot = v rho; the bearing turns at rate -v tau / d relative to the heading
    f = (v * rho, -(r * r * v * rho), zero, v * r * tau * tau, -(v * r * rho * tau))
    g = ((zero, zero), (zero, zero), (one, zero), (zero, -tau), (zero, rho))
    equalities = (rho * rho + tau * tau - 1.0, d * r - 1.0)
    ineqs = (
        d - p.d_lo, p.d_hi - d,
        r - 1.0 / p.d_hi, 1.0 / p.d_lo - r,
        v - p.v_lo, p.v_hi - v,
        rho + 1.0, 1.0 - rho, tau + 1.0, 1.0 - tau,
    )

    def lift(raw):
        ex, ey, dist = _offset(p, raw)
        hx, hy = np.cos(raw[..., 3]), np.sin(raw[..., 3])
        return np.stack([dist, 1.0 / dist, raw[..., 2], (ex * hx + ey * hy) / dist,
                         (ex * hy - ey * hx) / dist], axis=-1)

    return SubstitutedSystem(
        name="unicycle-polar", nz=nz, f=f, g=g, equalities=equalities, state_ineqs=ineqs,
        phi0=p.d_min - d, lift_fn=lift, var_names=("d", "r", "v", "rho", "tau"),
        **_unicycle_common(p))


def lift(sys: SubstitutedSystem, raw) -> np.ndarray:
    return sys.lift(raw)
