"""Safety-index templates ``phi = phi0 + sum_i k_i * T_i`` and their Lie derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import SubstitutedSystem
from .polyalg import Poly


class RelativeDegreeError(ValueError):
    pass


def lie_derivative(p: Poly, field: Sequence[Poly]) -> Poly:
    """``grad(p) . field``."""
    out = Poly.zero(p.nvars)
    for i, fi in enumerate(field):
        if fi.is_zero() or not p.depends_on(i):
            continue
        out = out + p.diff(i) * fi
    return out


def control_lie_derivatives(p: Poly, sys: SubstitutedSystem) -> list[Poly]:
    return [lie_derivative(p, [sys.g[r][j] for r in range(sys.nz)]) for j in range(sys.nu)]


def _extend_field(field, nvars):
    return [fi.extend(nvars) for fi in field]


class IndexTemplate:
    """Parametric safety index over a lifted system.

    ``mode="standard"`` builds ``phi0 + k_1 phi0' + ... + k_n phi0^(n)`` from the
    drift-Lie-derivative chain.  ``mode="per_joint"`` (order 1 only) gives each
    entry of ``sys.joint_groups`` its own gain on its share of ``phi0'``.
    """

    def __init__(self, sys: SubstitutedSystem, order: int = 1, mode: str = "standard"):
        if order < 1:
            raise ValueError("template order must be positive")
        if mode not in ("standard", "per_joint"):
            raise ValueError(f"unknown template mode {mode!r}")
        if mode == "per_joint" and (order != 1 or not sys.joint_groups):
            raise ValueError("per_joint mode needs order 1 and a system with joint groups")
        self.sys = sys
        self.order = order
        self.mode = mode

        chain = [sys.phi0]
        for i in range(order):
            if any(not q.is_zero() for q in control_lie_derivatives(chain[-1], sys)):
                raise RelativeDegreeError(
                    f"control appears in derivative {i} of phi0; order {order} is too high")
            chain.append(lie_derivative(chain[-1], sys.f))
        if all(q.is_zero() for q in control_lie_derivatives(chain[-1], sys)):
            raise RelativeDegreeError(f"control does not appear after {order} derivatives")
        self.phi0_chain = tuple(chain)

        if mode == "standard":
            self.terms = tuple(chain[1:])
        else:
            phi0 = sys.phi0
            terms = []
            for grp in sys.joint_groups:
                t = Poly.zero(sys.nz)
                for v in grp:
                    if phi0.depends_on(v):
                        t = t + phi0.diff(v) * sys.f[v]
                terms.append(t)
            self.terms = tuple(terms)
        self._symbolic = None

    @property
    def theta_dim(self) -> int:
        return len(self.terms)

    def check_theta(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float).reshape(-1)
        if th.shape != (self.theta_dim,):
            raise ValueError(f"theta must have length {self.theta_dim}")
        if not np.all(th > 0):
            raise ValueError("all gains must be strictly positive")
        if self.mode == "standard" and not roots_negative_real(th):
            raise ValueError("1 + k1 s + ... + kn s^n must have only negative real roots")
        return th

    def phi(self, theta) -> Poly:
        th = self.check_theta(theta)
        out = self.sys.phi0
        for k, t in zip(th, self.terms):
            out = out + t * float(k)
        return out

    def symbolic(self) -> "SymbolicIndex":
        """Index with the gains as extra trailing variables ``z[nz:]``."""
        if self._symbolic is None:
            self._symbolic = SymbolicIndex.build(self)
        return self._symbolic


def roots_negative_real(theta) -> bool:
    """Closed-form check that ``1 + k1 s + ... + kn s^n`` has only negative real roots (n <= 2)."""
    th = np.asarray(theta, dtype=float)
    if not np.all(th > 0):
        return False
    if th.size == 1:
        return True
    if th.size == 2:
        k1, k2 = th
        return k1 * k1 >= 4.0 * k2
    roots = np.roots(np.concatenate([th[::-1], [1.0]]))
    return bool(np.all(np.abs(roots.imag) < 1e-9) and np.all(roots.real < 0))


@dataclass(frozen=True)
class IndexInstance:
    theta: np.ndarray
    phi: Poly
    Lf: Poly
    Lg: tuple
    u_min: np.ndarray
    u_max: np.ndarray

    def phi_dot(self, z, u) -> float:
        return self.Lf.eval(z) + sum(lg.eval(z) * ui for lg, ui in zip(self.Lg, u))


def build_index(template: IndexTemplate, theta) -> IndexInstance:
    th = template.check_theta(theta)
    sys = template.sys
    phi = template.phi(th)
    return IndexInstance(
        theta=th,
        phi=phi,
        Lf=lie_derivative(phi, sys.f),
        Lg=tuple(control_lie_derivatives(phi, sys)),
        u_min=np.asarray(sys.u_min, dtype=float),
        u_max=np.asarray(sys.u_max, dtype=float),
    )


@dataclass(frozen=True)
class SymbolicIndex:
    """phi, Lf, Lg as polynomials in ``(z, theta)``; affine in each gain."""

    nz: int
    theta_dim: int
    phi: Poly
    Lf: Poly
    Lg: tuple

    @classmethod
    def build(cls, template: IndexTemplate) -> "SymbolicIndex":
        sys = template.sys
        m = template.theta_dim
        n = sys.nz + m
        phi = sys.phi0.extend(n)
        for i, t in enumerate(template.terms):
            phi = phi + t.extend(n) * Poly.var(n, sys.nz + i)
        f = _extend_field(sys.f, n)
        Lf = lie_derivative(phi, f)
        Lg = tuple(lie_derivative(phi, [sys.g[r][j].extend(n) for r in range(sys.nz)])
                   for j in range(sys.nu))
        return cls(sys.nz, m, phi, Lf, Lg)


def min_phi_dot(idx: IndexInstance, z) -> float:
    """Exact minimum of ``Lf + Lg . u`` over the control box (per-axis bang-bang)."""
    z = np.asarray(z, dtype=float)
    total = idx.Lf.eval(z)
    for lg, lo, hi in zip(idx.Lg, idx.u_min, idx.u_max):
        a = lg.eval(z)
        total += a * (lo if a >= 0 else hi)
    return float(total)


def min_phi_dot_many(idx: IndexInstance, Z) -> np.ndarray:
    """Vectorised :func:`min_phi_dot` over the rows of ``Z``."""
    Z = np.asarray(Z, dtype=float)
    total = idx.Lf.eval_many(Z)
    for lg, lo, hi in zip(idx.Lg, idx.u_min, idx.u_max):
        a = lg.eval_many(Z)
        total = total + a * np.where(a >= 0, lo, hi)
    return total


def minimizing_control(idx: IndexInstance, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.array([lo if lg.eval(z) >= 0 else hi
                     for lg, lo, hi in zip(idx.Lg, idx.u_min, idx.u_max)])
