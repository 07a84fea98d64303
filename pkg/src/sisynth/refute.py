"""Refute sets per control sign pattern and the scalar-multiplier certificate polynomial."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Optional, Sequence

import numpy as np

from .index import IndexTemplate, build_index
from .model import SubstitutedSystem
from .polyalg import Poly

MAX_PATTERN_CONTROLS = 16


@dataclass(frozen=True)
class SignPattern:
    """``nonneg`` holds controls with ``Lg[i] >= 0``; ``nonpos`` those with ``Lg[i] <= 0``."""

    nonneg: frozenset
    nonpos: frozenset

    def __post_init__(self):
        if self.nonneg & self.nonpos:
            raise ValueError("sign pattern sets must be disjoint")

    @property
    def nu(self) -> int:
        return len(self.nonneg) + len(self.nonpos)

    def label(self) -> str:
        return "".join("+" if i in self.nonneg else "-" for i in range(self.nu))


def enumerate_sign_patterns(nu: int) -> list[SignPattern]:
    """All ``2**nu`` splits, ordered by the bit pattern of the nonpositive set."""
    if nu < 1 or nu > MAX_PATTERN_CONTROLS:
        raise ValueError(f"nu must be in [1, {MAX_PATTERN_CONTROLS}]")
    out = []
    for bits in range(2 ** nu):
        nonpos = frozenset(i for i in range(nu) if bits >> i & 1)
        out.append(SignPattern(frozenset(range(nu)) - nonpos, nonpos))
    return out


@dataclass(frozen=True)
class ConeConfig:
    max_product_order: int = 2


@dataclass(frozen=True)
class RefuteInstance:
    pattern: SignPattern
    gammas: tuple
    zetas: tuple
    n_state_ineqs: int

    @property
    def nvars(self) -> int:
        return self.gammas[0].nvars

    def cone_index_sets(self, cfg: ConeConfig) -> list[tuple]:
        return cone_index_sets(len(self.gammas), cfg)

    def cone_terms(self, cfg: ConeConfig, cache: Optional[dict] = None) -> list[Poly]:
        """Products of the gammas; ``cache`` shares products across patterns."""
        if cache is None:
            return [_product(self.gammas, ix) for ix in self.cone_index_sets(cfg)]
        signed = [_unsigned(g) for g in self.gammas]
        out = []
        for ix in self.cone_index_sets(cfg):
            key = tuple(signed[i][0] for i in ix)
            prod = cache.get(key)
            if prod is None:
                prod = cache[key] = _product(key, range(len(key)))
            sign = np.prod([signed[i][1] for i in ix])
            out.append(prod if sign > 0 else -prod)
        return out

    def omega_dim(self, cfg: ConeConfig) -> int:
        return len(self.zetas) + cone_term_count(len(self.gammas), cfg.max_product_order)


def cone_index_sets(n_gammas: int, cfg: ConeConfig) -> list[tuple]:
    q = cfg.max_product_order
    if not 1 <= q <= n_gammas:
        raise ValueError(f"max_product_order must be in [1, {n_gammas}]")
    out = []
    for j in range(1, q + 1):
        out.extend(itertools.combinations(range(n_gammas), j))
    return out


def cone_term_count(n_gammas: int, q: int) -> int:
    return sum(comb(n_gammas, j) for j in range(1, q + 1))


def _unsigned(p: Poly) -> tuple[Poly, int]:
    """``(q, s)`` with ``p == s * q`` and ``q``'s leading coefficient positive."""
    if p.coefs.size and p.coefs[0] < 0:
        return -p, -1
    return p, 1


def _product(polys: Sequence[Poly], ix) -> Poly:
    out = polys[ix[0]]
    for i in ix[1:]:
        out = out * polys[i]
    return out


def build_instance(sys: SubstitutedSystem, template: IndexTemplate, theta,
                   pattern: SignPattern) -> RefuteInstance:
    """Assemble the refute-set families for one sign pattern.

    With ``theta=None`` the gains stay symbolic: every polynomial then lives
    in ``nz + theta_dim`` variables with the gains last.
    """
    if pattern.nu != sys.nu:
        raise ValueError("pattern does not match the system's control count")
    if theta is None:
        si = template.symbolic()
        n = sys.nz + si.theta_dim
        phi, Lf, Lg = si.phi, si.Lf, si.Lg
        state = [s.extend(n) for s in sys.state_ineqs]
        eqs = [h.extend(n) for h in sys.equalities]
    else:
        idx = build_index(template, theta)
        phi, Lf, Lg = idx.phi, idx.Lf, idx.Lg
        state = list(sys.state_ineqs)
        eqs = list(sys.equalities)

    gamma0 = Lf
    for i in range(sys.nu):
        bound = sys.u_min[i] if i in pattern.nonneg else sys.u_max[i]
        gamma0 = gamma0 + Lg[i] * float(bound)
    gammas = [gamma0, *state]
    gammas += [Lg[i] for i in sorted(pattern.nonneg)]
    gammas += [-Lg[i] for i in sorted(pattern.nonpos)]
    return RefuteInstance(pattern, tuple(gammas), (phi, *eqs), len(state))


def split_omega(instance: RefuteInstance, cfg: ConeConfig, omega) -> tuple[np.ndarray, np.ndarray]:
    """``omega = [betas..., alphas...]``."""
    omega = np.asarray(omega, dtype=float).reshape(-1)
    if omega.size != instance.omega_dim(cfg):
        raise ValueError(f"omega must have length {instance.omega_dim(cfg)}, got {omega.size}")
    r = len(instance.zetas)
    return omega[:r], omega[r:]


def build_p0(instance: RefuteInstance, cfg: ConeConfig, omega,
             theta: Optional[Sequence[float]] = None) -> Poly:
    """``-sum alpha_j * cone_j - sum beta_l * zeta_l - 1``.

    ``theta`` substitutes numeric gains into a symbolic instance.
    """
    betas, alphas = split_omega(instance, cfg, omega)
    if np.any(alphas < 0):
        raise ValueError("cone multipliers must be nonnegative")
    n = instance.nvars
    p0 = Poly.const(n, -1.0)
    for a, t in zip(alphas, instance.cone_terms(cfg)):
        if a != 0:
            p0 = p0 - t * float(a)
    for b, t in zip(betas, instance.zetas):
        if b != 0:
            p0 = p0 - t * float(b)
    if theta is not None:
        nz = n - len(theta)
        p0 = p0.subs({nz + i: float(k) for i, k in enumerate(theta)}).restrict(range(nz))
    return p0
