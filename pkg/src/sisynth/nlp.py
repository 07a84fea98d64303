"""Joint feasibility program over the gains and all per-pattern multipliers.

For every control sign pattern the certificate polynomial ``p0`` is affine in
that pattern's multipliers ``omega`` and polynomial in the gains ``theta``.
Treating ``theta`` as extra polynomial variables lets each pattern be compiled
once into sparse maps

    vec(Q) = sum_t theta**t  M_t @ omega + c,    r = sum_t theta**t  R_t @ omega

where ``Q`` is the fixed-assignment Gram matrix over a frozen basis and ``r``
collects the coefficients of monomials no basis product can express.  Those
must vanish; they are driven to zero by the penalty and then removed exactly
by a least-norm correction of ``omega``.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import lsq_linear, minimize

from . import gram
from .index import IndexTemplate
from .model import SubstitutedSystem
from .refute import ConeConfig, SignPattern, build_instance, enumerate_sign_patterns
from .polyalg import Poly


class BasisError(ValueError):
    """A pattern's certificate cannot be written over its frozen basis."""


def monomials_up_to(nvars: int, degree: int) -> list[tuple]:
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return out


@dataclass(frozen=True)
class Generator:
    """One multiplier slot: ``kind`` is ``"beta"`` (free) or ``"alpha"`` (nonnegative)."""

    kind: str
    label: str
    table: dict  # z-monomial -> {theta-monomial: coef}


def _split_table(p: Poly, nz: int) -> dict:
    table: dict = {}
    for mono, c in p.terms().items():
        table.setdefault(mono[:nz], {})[mono[nz:]] = c
    return table


def _sign_definite(coefs: dict) -> int:
    """+1 / -1 if a theta-polynomial keeps one sign for positive theta, else 0."""
    vals = np.fromiter(coefs.values(), dtype=float)
    if np.all(vals >= 0):
        return 1
    if np.all(vals <= 0):
        return -1
    return 0


@dataclass
class PatternProgram:
    pattern: SignPattern
    basis: tuple
    rep_monos: tuple
    res_monos: tuple
    generators: tuple
    active: np.ndarray  # indices into the full omega vector
    theta_monos: np.ndarray  # (T, m)
    M: list  # sparse (nB*nB, n_act) per theta-monomial
    R: list  # sparse (n_res, n_act) per theta-monomial
    const_q: np.ndarray  # vec(Q) at omega = 0
    const_r: np.ndarray
    n_beta: int

    @property
    def omega_dim(self) -> int:
        return len(self.generators)

    @property
    def n_active(self) -> int:
        return int(self.active.size)

    @property
    def basis_size(self) -> int:
        return len(self.basis)

    @property
    def alpha_mask(self) -> np.ndarray:
        """Boolean mask over active multipliers that must stay nonnegative."""
        return np.array([self.generators[i].kind == "alpha" for i in self.active], dtype=bool)

    def theta_powers(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """``theta**t`` for each stored exponent and its Jacobian (T, m)."""
        th = np.asarray(theta, dtype=float)
        E = self.theta_monos
        pw = np.prod(th[None, :] ** E, axis=1)
        jac = np.zeros(E.shape)
        for i in range(E.shape[1]):
            Ei = E.copy()
            mask = Ei[:, i] > 0
            Ei[mask, i] -= 1
            jac[mask, i] = E[mask, i] * np.prod(th[None, :] ** Ei[mask], axis=1)
        return pw, jac

    def _combine(self, mats, pw):
        # cached on the gain powers: inner descent holds the gains fixed
        key = (id(mats), pw.tobytes())
        cache = self.__dict__.setdefault("_cache", {})
        hit = cache.get(key)
        if hit is not None:
            return hit
        out = mats[0] * pw[0]
        for m, w in zip(mats[1:], pw[1:]):
            out = out + m * w
        out = out.tocsr()
        if len(cache) > 8:
            cache.clear()
        cache[key] = out
        return out

    def gram_matrix(self, theta, omega_act) -> np.ndarray:
        pw, _ = self.theta_powers(theta)
        q = self.const_q + self._combine(self.M, pw) @ omega_act
        n = self.basis_size
        return q.reshape(n, n)

    def residual(self, theta, omega_act) -> np.ndarray:
        if not self.res_monos:
            return np.zeros(0)
        pw, _ = self.theta_powers(theta)
        return self.const_r + self._combine(self.R, pw) @ omega_act

    def residual_matrix(self, theta):
        pw, _ = self.theta_powers(theta)
        return self._combine(self.R, pw)

    def pivots(self, theta, omega_act) -> np.ndarray:
        return gram.normalized_minors(self.gram_matrix(theta, omega_act))

    def full_omega(self, omega_act) -> np.ndarray:
        out = np.zeros(self.omega_dim)
        out[self.active] = omega_act
        return out

    def penalty(self, theta, omega_act, target: float, res_weight: float,
                surrogate: str = "eig", tiny: float = 1e-12):
        """Hinge-squared penalty and its exact gradient in ``(theta, omega_act)``.

        ``surrogate="eig"`` hinges the eigenvalues of ``Q``; since every
        normalized pivot is at least the smallest eigenvalue, driving the
        eigenvalues above ``target`` certifies the pivots too, without the
        blow-up pivots suffer when an earlier one crosses zero.
        ``surrogate="pivot"`` hinges the LDL pivots directly: pivot ``k`` has
        derivative ``outer(y_k, y_k)`` with ``y_k`` the ``k``-th row of ``L^{-1}``.
        """
        pw, jac = self.theta_powers(theta)
        Mth = self._combine(self.M, pw)
        q = self.const_q + Mth @ omega_act
        n = self.basis_size
        Q = q.reshape(n, n)
        if surrogate == "eig":
            d, V = np.linalg.eigh(0.5 * (Q + Q.T))
        else:
            d, L = gram.ldl_pivots(Q, tiny=tiny)
        h = np.maximum(0.0, target - d)
        val = float(h @ h)
        g_th = np.zeros(len(theta))
        g_om = np.zeros(self.n_active)
        if val > 0:
            if surrogate == "eig":
                gQ = (V * (-2.0 * h)) @ V.T
            else:
                Linv = gram.pivot_gradient_factor(L)
                gQ = (Linv.T * (-2.0 * h)) @ Linv
            gq = gQ.reshape(-1)
            g_om += Mth.T @ gq
            for t in range(len(self.M)):
                if np.any(jac[t]):
                    g_th += jac[t] * float(gq @ (self.M[t] @ omega_act))
        if self.res_monos and res_weight > 0:
            Rth = self._combine(self.R, pw)
            r = self.const_r + Rth @ omega_act
            val += res_weight * float(r @ r)
            g_om += 2.0 * res_weight * (Rth.T @ r)
            for t in range(len(self.R)):
                if np.any(jac[t]):
                    g_th += jac[t] * float(2.0 * res_weight * (r @ (self.R[t] @ omega_act)))
        return val, g_th, g_om, d

    def clean_residual(self, theta, omega_act, floor: float = 0.0, tol: float = 1e-12,
                       damping: float = 1e-6) -> np.ndarray:
        """Least-norm change of the free multipliers that zeroes the residual.

        Multipliers pinned at their lower bound stay put so the cone
        constraints are untouched.  If that leaves a residual above ``tol``,
        a damped bounded least-squares step over all multipliers (cone ones
        kept nonnegative) is tried and kept when it does better.
        """
        if not self.res_monos:
            return omega_act
        R = self.residual_matrix(theta).toarray()
        r = self.const_r + R @ omega_act
        free = ~self.alpha_mask | (omega_act > floor)
        if not free.any():
            return omega_act
        delta, *_ = np.linalg.lstsq(R[:, free], -r, rcond=None)
        out = omega_act.copy()
        out[free] += delta
        out[self.alpha_mask] = np.maximum(out[self.alpha_mask], 0.0)
        if np.max(np.abs(self.const_r + R @ out)) <= tol:
            return out
        # pinned cone multipliers may be needed: bounded, lightly damped step
        n = self.n_active
        lo = np.where(self.alpha_mask, -omega_act, -np.inf)
        A = np.vstack([R, damping * np.eye(n)])
        b = np.concatenate([-r, np.zeros(n)])
        step = lsq_linear(A, b, bounds=(lo, np.full(n, np.inf)), method="bvls",
                          tol=1e-14).x
        alt = omega_act + step
        alt[self.alpha_mask] = np.maximum(alt[self.alpha_mask], 0.0)
        if np.max(np.abs(self.const_r + R @ alt)) < np.max(np.abs(self.const_r + R @ out)):
            return alt
        return out


def ideal_multipliers(zeta: Poly, nz: int, degree: int, groups=None) -> list[tuple]:
    """Monomials multiplying one equality.

    Without ``groups`` every monomial up to ``degree`` is used.  With groups,
    only monomials supported inside a single group that the equality touches.
    """
    if not groups:
        return monomials_up_to(nz, degree)
    out = {(0,) * nz}
    for grp in groups:
        if not any(zeta.depends_on(v) for v in grp):
            continue
        grp = sorted(grp)
        for local in monomials_up_to(len(grp), degree):
            e = [0] * nz
            for v, k in zip(grp, local):
                e[v] = k
            out.add(tuple(e))
    return gram.ascending_grlex(out)


def _pattern_generators(inst, cfg: ConeConfig, nz: int, ideal_degree: int,
                        groups=None, cache: Optional[dict] = None) -> list[Generator]:
    """Multiplier slots for one pattern.

    The equalities do not depend on the pattern, so their generators are
    shared through ``cache`` along with the cone products.
    """
    cache = {} if cache is None else cache
    n = inst.nvars
    key = ("ideal", inst.zetas, ideal_degree, None if groups is None else tuple(map(tuple, groups)))
    gens = cache.get(key)
    if gens is None:
        gens = []
        for li, zeta in enumerate(inst.zetas):
            for m in ideal_multipliers(zeta, nz, ideal_degree, groups):
                mono = Poly(n, [m + (0,) * (n - nz)], [1.0])
                label = f"zeta{li}" + ("" if not any(m) else f"*{m}")
                gens.append(Generator("beta", label, _split_table(zeta * mono, nz)))
        cache[key] = gens
    gens = list(gens)
    for ix, term in zip(inst.cone_index_sets(cfg), inst.cone_terms(cfg, cache)):
        gens.append(Generator("alpha", "gamma" + "*".join(map(str, ix)), _split_table(term, nz)))
    return gens


def _prune(gens: Sequence[Generator], nz: int, allow_cancellation: bool,
           excluded: frozenset = frozenset()):
    """Fixed-point removal of multipliers forced to zero, with the matching basis.

    A multiplier is dropped when it carries a monomial that no basis product
    can express and that no other surviving multiplier can cancel.  A basis
    entry is dropped when no surviving multiplier can make its diagonal
    positive.  Dropping multipliers only shrinks the feasible set.
    """
    zero = (0,) * nz
    alive = np.ones(len(gens), dtype=bool)
    while True:
        touch: dict = {}
        for gi in np.flatnonzero(alive):
            for mono in gens[gi].table:
                touch.setdefault(mono, []).append(gi)
        basis = []
        for m in gram.half_support(set(touch) | {zero}, nz):
            if m == zero:
                basis.append(m)
                continue
            if m in excluded:
                continue
            sq = tuple(2 * e for e in m)
            # p0 carries -omega * generator, so a positive diagonal needs a free
            # beta or an alpha term whose coefficient can go negative
            ok = any(gens[gi].kind == "beta" or _sign_definite(gens[gi].table[sq]) <= 0
                     for gi in touch.get(sq, []))
            if ok:
                basis.append(m)
        rep = gram.representation_map(basis)
        unrep = [m for m in touch if m not in rep]
        if unrep and not allow_cancellation:
            raise BasisError(f"monomial {unrep[0]} is not a product of two basis entries")
        kill = set()
        for m in unrep:
            owners = touch[m]
            if len(owners) == 1:
                kill.update(owners)
                continue
            if all(gens[g].kind == "alpha" for g in owners):
                signs = {_sign_definite(gens[g].table[m]) for g in owners}
                if len(signs) == 1 and 0 not in signs:
                    kill.update(owners)
        if not kill:
            return alive, tuple(basis), rep, unrep
        alive[list(kill)] = False


DEFAULT_PROBES = (0.5, 2.0, 8.0)


def _diagonal_can_be_positive(prog: PatternProgram, probes, bound: float = 1.0) -> np.ndarray:
    """Basis entries whose Gram diagonal some admissible multiplier makes positive.

    One LP per entry and probe gain: maximise ``Q_kk`` subject to a zero
    residual, nonnegative cone multipliers and ``|omega| <= bound``.  A combined
    LP first settles most entries at once.
    """
    from scipy.optimize import linprog

    nb, n = prog.basis_size, prog.n_active
    ok = np.zeros(nb, dtype=bool)
    ok[0] = True
    if n == 0:
        return ok
    lo = np.where(prog.alpha_mask, 0.0, -bound)
    diag_rows = np.arange(nb) * nb + np.arange(nb)
    for theta in probes:
        todo = np.flatnonzero(~ok)
        if todo.size == 0:
            break
        pw, _ = prog.theta_powers(theta)
        D = prog._combine(prog.M, pw)[diag_rows].toarray()
        A_eq = prog.residual_matrix(theta).toarray() if prog.res_monos else None
        b_eq = np.zeros(len(prog.res_monos)) if prog.res_monos else None
        # combined pass: maximise sum_k t_k with t_k <= min(Q_kk, 1)
        nt = todo.size
        c = np.concatenate([np.zeros(n), -np.ones(nt)])
        A_ub = np.hstack([-D[todo], np.eye(nt)])
        A_eq2 = None if A_eq is None else np.hstack([A_eq, np.zeros((A_eq.shape[0], nt))])
        bounds = [(l, bound) for l in lo] + [(None, 1.0)] * nt
        res = linprog(c, A_ub=A_ub, b_ub=np.zeros(nt), A_eq=A_eq2, b_eq=b_eq,
                      bounds=bounds, method="highs")
        if res.status == 0:
            ok[todo[res.x[n:] > 1e-9]] = True
        for k in np.flatnonzero(~ok):
            res = linprog(-D[k], A_eq=A_eq, b_eq=b_eq, bounds=list(zip(lo, np.full(n, bound))),
                          method="highs")
            if res.status == 0 and -res.fun > 1e-9:
                ok[k] = True
    return ok


def compile_pattern(sys: SubstitutedSystem, template: IndexTemplate, cfg: ConeConfig,
                    pattern: SignPattern, ideal_degree: int = 0,
                    allow_cancellation: bool = True, refine_basis: bool = True,
                    probes: Optional[Sequence] = None, ideal_scope: str = "full",
                    cache: Optional[dict] = None) -> PatternProgram:
    """Compile one pattern; optionally drop basis entries that can never be positive."""
    if ideal_scope not in ("full", "joint"):
        raise ValueError(f"unknown ideal scope {ideal_scope!r}")
    groups = sys.joint_groups if ideal_scope == "joint" else None
    inst = build_instance(sys, template, None, pattern)
    gens = _pattern_generators(inst, cfg, sys.nz, ideal_degree, groups, cache)
    m = template.theta_dim
    if probes is None:
        probes = [np.full(m, v) for v in DEFAULT_PROBES]
    excluded: frozenset = frozenset()
    while True:
        prog = _compile(gens, pattern, sys.nz, m, allow_cancellation, excluded)
        if not (refine_basis and allow_cancellation):
            return prog
        ok = _diagonal_can_be_positive(prog, probes)
        if ok.all():
            return prog
        excluded = excluded | {prog.basis[k] for k in np.flatnonzero(~ok)}


def _compile(gens, pattern, nz, m, allow_cancellation, excluded) -> PatternProgram:
    alive, basis, rep, unrep = _prune(gens, nz, allow_cancellation, excluded)
    active = np.flatnonzero(alive)
    nb = len(basis)

    theta_set = {(0,) * m}
    for gi in active:
        for tab in gens[gi].table.values():
            theta_set.update(tab)
    theta_monos = sorted(theta_set)
    t_index = {t: i for i, t in enumerate(theta_monos)}
    res_monos = tuple(sorted(unrep))
    r_index = {mono: i for i, mono in enumerate(res_monos)}

    rows_q = [[] for _ in theta_monos]
    rows_r = [[] for _ in theta_monos]
    for col, gi in enumerate(active):
        for mono, tab in gens[gi].table.items():
            for tm, c in tab.items():
                t = t_index[tm]
                if mono in rep:
                    i, j = rep[mono]
                    if i == j:
                        rows_q[t].append((i * nb + i, col, -c))
                    else:
                        rows_q[t].append((i * nb + j, col, -c / 2.0))
                        rows_q[t].append((j * nb + i, col, -c / 2.0))
                else:
                    rows_r[t].append((r_index[mono], col, -c))

    def to_csr(entries, nrows):
        if not entries:
            return sp.csr_matrix((nrows, active.size))
        r, c, v = zip(*entries)
        return sp.csr_matrix((v, (r, c)), shape=(nrows, active.size))

    M = [to_csr(e, nb * nb) for e in rows_q]
    R = [to_csr(e, len(res_monos)) for e in rows_r]
    const_q = np.zeros(nb * nb)
    const_q[0] = -1.0  # the "-1" of p0 sits on the constant monomial
    n_beta = sum(g.kind == "beta" for g in gens)
    return PatternProgram(
        pattern=pattern, basis=basis, rep_monos=tuple(sorted(rep)), res_monos=res_monos,
        generators=tuple(gens), active=active,
        theta_monos=np.array(theta_monos, dtype=np.int64).reshape(len(theta_monos), m),
        M=M, R=R, const_q=const_q, const_r=np.zeros(len(res_monos)), n_beta=n_beta)


@dataclass
class NlpProblem:
    sys: SubstitutedSystem
    template: IndexTemplate
    cone: ConeConfig
    programs: list
    ideal_degree: int = 0

    @property
    def theta_dim(self) -> int:
        return self.template.theta_dim

    @property
    def n_patterns(self) -> int:
        return len(self.programs)

    @property
    def omega_dims(self) -> list[int]:
        return [p.omega_dim for p in self.programs]

    @property
    def decision_dim(self) -> int:
        return self.theta_dim + sum(p.n_active for p in self.programs)

    def split(self, x) -> tuple[np.ndarray, list]:
        x = np.asarray(x, dtype=float)
        th = x[:self.theta_dim]
        out, o = [], self.theta_dim
        for p in self.programs:
            out.append(x[o:o + p.n_active])
            o += p.n_active
        return th, out

    def join(self, theta, omegas_act) -> np.ndarray:
        return np.concatenate([np.asarray(theta, dtype=float)] + [np.asarray(o, dtype=float) for o in omegas_act])

    def theta_slacks(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float)
        out = list(th)
        if self.template.mode == "standard" and th.size == 2:
            out.append(th[0] ** 2 - 4.0 * th[1])
        return np.array(out)

    def constraints(self, theta, omegas_act) -> np.ndarray:
        """Concatenated normalized pivots of every pattern plus the gain slacks."""
        parts = [p.pivots(theta, o) for p, o in zip(self.programs, omegas_act)]
        parts.append(self.theta_slacks(theta))
        return np.concatenate(parts)

    def residual_norm(self, theta, omegas_act) -> float:
        vals = [np.max(np.abs(p.residual(theta, o)), initial=0.0)
                for p, o in zip(self.programs, omegas_act)]
        return float(max(vals, default=0.0))

    def evaluate(self, x) -> np.ndarray:
        th, om = self.split(x)
        return self.constraints(th, om)


def assemble_problem(sys: SubstitutedSystem, template: IndexTemplate,
                     cone_cfg: Optional[ConeConfig] = None, ideal_degree: int = 0,
                     allow_cancellation: bool = True, ideal_scope: str = "full") -> NlpProblem:
    cone_cfg = cone_cfg or ConeConfig()
    cache: dict = {}
    programs = [compile_pattern(sys, template, cone_cfg, pat, ideal_degree, allow_cancellation,
                                ideal_scope=ideal_scope, cache=cache)
                for pat in enumerate_sign_patterns(sys.nu)]
    return NlpProblem(sys, template, cone_cfg, programs, ideal_degree)


@dataclass(frozen=True)
class SolverConfig:
    restarts: int = 200
    max_iters: int = 2000
    epsilon: float = 1e-6
    seed: int = 0
    theta_range: tuple = (0.0, 5.0)
    theta_bounds: tuple = (1e-3, 100.0)
    alpha_range: tuple = (0.0, 2.0)
    beta_range: tuple = (-2.0, 2.0)
    target_margin: float = 1.0
    residual_weight: float = 100.0
    residual_tol: float = 1e-9
    rounds: int = 3
    time_budget: Optional[float] = None
    objective: str = "none"  # or "sum_theta"
    objective_weight: float = 1e-3
    surrogate: str = "eig"
    outer: str = "reduced"  # or "joint"
    outer_iters: int = 60
    early_residual: float = 1e-7
    early_fraction: float = 0.5
    ftol: float = 1e-12

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.restarts < 0 or self.max_iters < 1:
            raise ValueError("restarts must be >= 0 and max_iters >= 1")
        lo, hi = self.theta_range
        if not hi > lo >= 0:
            raise ValueError("theta_range must satisfy 0 <= lo < hi")
        if self.surrogate not in ("eig", "pivot"):
            raise ValueError(f"unknown surrogate {self.surrogate!r}")
        if self.objective not in ("none", "sum_theta"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.outer not in ("reduced", "joint"):
            raise ValueError(f"unknown outer method {self.outer!r}")


@dataclass
class SynthesisResult:
    theta: np.ndarray
    omegas: list
    margin: float
    residual: float
    iterations: int
    wall_time_seconds: float
    status: str  # feasible | infeasible | budget_exhausted
    restarts_used: int
    patterns: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def _sample_start(problem: NlpProblem, cfg: SolverConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.theta_range
    tlo, thi = cfg.theta_bounds
    # uniform on (lo, hi]: flip numpy's [lo, hi)
    th = hi - rng.uniform(0.0, hi - lo, size=problem.theta_dim)
    th = np.clip(th, tlo, thi)
    parts = [th]
    for p in problem.programs:
        mask = p.alpha_mask
        w = np.empty(p.n_active)
        w[mask] = rng.uniform(*cfg.alpha_range, size=int(mask.sum()))
        w[~mask] = rng.uniform(*cfg.beta_range, size=int((~mask).sum()))
        parts.append(w)
    return np.concatenate(parts)


def _bounds(problem: NlpProblem, cfg: SolverConfig) -> list:
    b = [tuple(cfg.theta_bounds)] * problem.theta_dim
    for p in problem.programs:
        b += [(0.0, None) if a else (None, None) for a in p.alpha_mask]
    return b


def objective_and_grad(problem: NlpProblem, x, cfg: SolverConfig):
    """Penalty sum over all patterns plus gain-slack hinges (and the optional objective)."""
    th, oms = problem.split(x)
    m = problem.theta_dim
    grad = np.zeros_like(x)
    total = 0.0
    o = m
    for p, om in zip(problem.programs, oms):
        val, g_th, g_om, _ = p.penalty(th, om, cfg.target_margin, cfg.residual_weight,
                                          cfg.surrogate)
        total += val
        grad[:m] += g_th
        grad[o:o + p.n_active] = g_om
        o += p.n_active
    val, g = _theta_terms(problem, th, cfg)
    grad[:m] += g
    return total + val, grad


def _theta_terms(problem: NlpProblem, th, cfg: SolverConfig):
    """Gain-only part of the objective: the discriminant hinge and the optional objective."""
    m = problem.theta_dim
    total, grad = 0.0, np.zeros(m)
    if problem.template.mode == "standard" and m == 2:
        s = th[0] ** 2 - 4.0 * th[1]
        h = max(0.0, cfg.target_margin - s)
        total += h * h
        grad[0] += -2.0 * h * 2.0 * th[0]
        grad[1] += -2.0 * h * -4.0
    if cfg.objective == "sum_theta":
        total += cfg.objective_weight * float(th.sum())
        grad += cfg.objective_weight
    return total, grad


def _clean_pattern(p: PatternProgram, th, om) -> np.ndarray:
    om = p.clean_residual(th, om)
    # the least-norm step may nudge a free cone multiplier below zero
    om[p.alpha_mask] = np.maximum(om[p.alpha_mask], 0.0)
    return om


def _pattern_ok(p: PatternProgram, th, om, cfg: SolverConfig) -> bool:
    om = _clean_pattern(p, th, om)
    res = float(np.max(np.abs(p.residual(th, om)), initial=0.0))
    return float(p.pivots(th, om).min()) >= cfg.epsilon and res <= cfg.residual_tol


def _finalize(problem: NlpProblem, x, cfg: SolverConfig):
    """Zero the residuals exactly, then report ``(x, margin, residual)``."""
    th, oms = problem.split(x)
    oms = [_clean_pattern(p, th, om) for p, om in zip(problem.programs, oms)]
    margin = float(np.min(problem.constraints(th, oms)))
    residual = problem.residual_norm(th, oms)
    return problem.join(th, oms), margin, residual


def _is_feasible(margin: float, residual: float, cfg: SolverConfig) -> bool:
    return margin >= cfg.epsilon and residual <= cfg.residual_tol


def _result(problem, x, margin, residual, iters, t0, status, restarts):
    th, oms = problem.split(x)
    return SynthesisResult(
        theta=np.array(th, dtype=float),
        omegas=[p.full_omega(o) for p, o in zip(problem.programs, oms)],
        margin=float(margin), residual=float(residual), iterations=int(iters),
        wall_time_seconds=time.perf_counter() - t0, status=status, restarts_used=int(restarts),
        patterns=[p.pattern.label() for p in problem.programs])


class _Found(Exception):
    def __init__(self, x, margin, residual):
        self.x, self.margin, self.residual = x, margin, residual


def _pattern_bounds(p: PatternProgram) -> list:
    return [(0.0, None) if a else (None, None) for a in p.alpha_mask]


def inner_descent(problem: NlpProblem, x, cfg: SolverConfig, subset=None):
    """Per-pattern descent with the gains frozen.

    For fixed gains each pattern's penalty is a convex function of its own
    multipliers (a convex spectral function of an affine map plus a quadratic),
    so the patterns decouple and each local minimum is global.  ``subset``
    restricts the work to some patterns; the rest keep their multipliers.
    Returns ``(x, iterations, penalty summed over the solved patterns)``.
    """
    th, oms = problem.split(x)
    oms = list(oms)
    iters, total = 0, 0.0
    todo = range(problem.n_patterns) if subset is None else subset
    # eigenvalues well clear of zero and a tiny residual: the exact residual
    # correction finishes the job, so further polishing is wasted work
    res_done = cfg.residual_weight * cfg.early_residual ** 2
    floor = cfg.early_fraction * cfg.target_margin
    for i in todo:
        p = problem.programs[i]
        calls = [0, 0]  # evaluations, next evaluation allowed to run the exact check

        def fun(v, p=p):
            calls[0] += 1
            val, _, g, d = p.penalty(th, v, cfg.target_margin, cfg.residual_weight, cfg.surrogate)
            if d.min() >= floor and calls[0] >= calls[1]:
                h = np.maximum(0.0, cfg.target_margin - d)
                if val - float(h @ h) <= res_done:
                    if _pattern_ok(p, th, v, cfg):
                        raise _Found(v.copy(), None, None)
                    calls[1] = calls[0] + 20
            return val, g
        start = oms[i]
        here = p.penalty(th, start, cfg.target_margin, cfg.residual_weight, cfg.surrogate)[0]
        if p.n_active == 0:
            total += here
            continue
        # the problem is convex, so the start only affects speed; all-zero
        # multipliers leave Q = -e0 e0^T, often far closer than a random draw
        zero = np.zeros(p.n_active)
        if p.penalty(th, zero, cfg.target_margin, cfg.residual_weight, cfg.surrogate)[0] < here:
            start = zero
        try:
            res = minimize(fun, start, jac=True, method="L-BFGS-B", bounds=_pattern_bounds(p),
                           options={"maxiter": cfg.max_iters, "ftol": cfg.ftol, "gtol": 1e-12})
        except _Found as hit:
            oms[i] = hit.x
            iters += calls[0]
            continue
        oms[i] = res.x
        iters += int(res.nit)
        total += float(res.fun)
    return problem.join(th, oms), iters, total


def reduced_descent(problem: NlpProblem, x, cfg: SolverConfig):
    """Descent on the gains alone over a working set of failing patterns.

    The reduced function ``F_W(theta) = sum_{p in W} min_omega penalty_p``
    has gradient ``sum_p d penalty_p / d theta`` at the inner minimizers
    (envelope theorem), so only ``theta_dim`` variables see the outer
    quasi-Newton model.  ``W`` starts as the patterns failing at ``x``; once
    they all pass, the remaining patterns are re-solved at the new gains and
    any that now fail join ``W``.
    """
    x = np.asarray(x, dtype=float)
    th, oms = problem.split(x)
    work = [i for i, (p, om) in enumerate(zip(problem.programs, oms))
            if not _pattern_ok(p, th, om, cfg)]
    state = {"x": x, "iters": 0}

    def fun(th):
        xi = problem.join(th, problem.split(state["x"])[1])
        xi, n, total = inner_descent(problem, xi, cfg, work)
        state["x"], state["iters"] = xi, state["iters"] + n
        _, oms = problem.split(xi)
        if all(_pattern_ok(problem.programs[i], th, oms[i], cfg) for i in work):
            raise _Found(xi, None, None)
        grad = np.zeros(problem.theta_dim)
        for i in work:
            grad += problem.programs[i].penalty(th, oms[i], cfg.target_margin,
                                                cfg.residual_weight, cfg.surrogate)[1]
        val, g = _theta_terms(problem, th, cfg)
        return total + val, grad + g

    for _ in range(problem.n_patterns):
        if not work:
            break
        try:
            minimize(fun, problem.split(state["x"])[0], jac=True, method="L-BFGS-B",
                     bounds=[tuple(cfg.theta_bounds)] * problem.theta_dim,
                     options={"maxiter": cfg.outer_iters, "ftol": cfg.ftol, "gtol": 1e-12})
        except _Found as hit:
            state["x"] = hit.x
        else:
            break  # the working set itself is stuck
        rest = [i for i in range(problem.n_patterns) if i not in work]
        xi, n, _ = inner_descent(problem, state["x"], cfg, rest)
        state["x"], state["iters"] = xi, state["iters"] + n
        th, oms = problem.split(xi)
        new = [i for i in rest if not _pattern_ok(problem.programs[i], th, oms[i], cfg)]
        if not new:
            break
        work = sorted(work + new)
    return state["x"], state["iters"], None


def joint_descent(problem: NlpProblem, x, cfg: SolverConfig):
    res = minimize(lambda v: objective_and_grad(problem, v, cfg), x, jac=True,
                   method="L-BFGS-B", bounds=_bounds(problem, cfg),
                   options={"maxiter": cfg.max_iters, "ftol": cfg.ftol, "gtol": 1e-12})
    return res.x, int(res.nit), float(res.fun)


def descend(problem: NlpProblem, x0, cfg: SolverConfig):
    """One restart: alternate frozen-gain pattern solves with an outer gain update."""
    x = np.asarray(x0, dtype=float)
    iters = 0
    lo, hi = cfg.theta_bounds
    for rnd in range(max(1, cfg.rounds)):
        x, n, _ = inner_descent(problem, x, cfg)
        iters += n
        x, margin, residual = _finalize(problem, x, cfg)
        if _is_feasible(margin, residual, cfg) or lo == hi:
            break
        if cfg.outer == "reduced" and rnd == 0:
            xr, n, _ = reduced_descent(problem, x, cfg)
            iters += n
            xr, margin, residual = _finalize(problem, xr, cfg)
            if _is_feasible(margin, residual, cfg):
                x = xr
                break
            # the reduced step can stall where gains and multipliers must move
            # together; drop it and take the joint step from where it began
        x, n, _ = joint_descent(problem, x, cfg)
        iters += n
        x, margin, residual = _finalize(problem, x, cfg)
        if _is_feasible(margin, residual, cfg):
            break
    return x, margin, residual, iters


def solve(problem: NlpProblem, config: Optional[SolverConfig] = None) -> SynthesisResult:
    """Multistart penalty descent; the first feasible restart wins.

    Restart ``r`` draws its start from ``default_rng(seed + r)`` so results do
    not depend on how many restarts ran before it.
    """
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    if cfg.restarts == 0:
        x = _sample_start(problem, cfg, np.random.default_rng(cfg.seed))
        th, oms = problem.split(x)
        margin = float(np.min(problem.constraints(th, oms)))
        return _result(problem, x, margin, problem.residual_norm(th, oms), 0, t0,
                       "budget_exhausted", 0)
    best = None
    total_iters = 0
    for r in range(cfg.restarts):
        rng = np.random.default_rng(cfg.seed + r)
        x, margin, residual, iters = descend(problem, _sample_start(problem, cfg, rng), cfg)
        total_iters += iters
        if _is_feasible(margin, residual, cfg):
            return _result(problem, x, margin, residual, total_iters, t0, "feasible", r + 1)
        if best is None or (residual <= cfg.residual_tol, margin) > (best[2] <= cfg.residual_tol, best[1]):
            best = (x, margin, residual)
        if cfg.time_budget is not None and time.perf_counter() - t0 > cfg.time_budget:
            return _result(problem, *best, total_iters, t0, "budget_exhausted", r + 1)
    return _result(problem, *best, total_iters, t0, "infeasible", cfg.restarts)
