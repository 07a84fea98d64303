"""Brute-force checks of a synthesized index, the safe-set controller and rollouts.

Nothing here relies on the certificate machinery: validity is judged by
sampling states on the zero level set of ``phi`` and evaluating the exact
worst-case ``phi_dot`` there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .index import IndexInstance, IndexTemplate, build_index, min_phi_dot_many
from .model import LiftError, SubstitutedSystem

MARGIN_FLOOR = 1e-9
VIOLATION_TOL = 1e-6


@dataclass
class ManifoldSample:
    states: np.ndarray  # (N, nz) lifted
    raw: np.ndarray  # (N, raw_dim)
    draws: int
    empty: bool

    def __len__(self):
        return self.states.shape[0]


@dataclass
class VerificationReport:
    valid: bool
    samples: int
    worst_margin: float
    worst_state: Optional[np.ndarray]
    band_tolerance: float
    empty_manifold: bool = False
    margin_floor: float = MARGIN_FLOOR
    draws: int = 0


def _affine_coords(sys: SubstitutedSystem, idx: IndexInstance) -> list:
    """Velocity-like coordinates in which ``phi`` is affine with a nonzero slope."""
    out = []
    for raw_i, z_i in sys.velocity_coords:
        parts = idx.phi.coefficients_in(z_i)
        if len(parts) == 2 and not parts[1].is_zero():
            out.append((raw_i, z_i, parts[0], parts[1]))
    return out


def _in_region_many(sys: SubstitutedSystem, Z: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    ok = np.ones(Z.shape[0], dtype=bool)
    for s in sys.state_ineqs:
        ok &= s.eval_many(Z) >= -tol
    return ok


def sample_manifold(sys: SubstitutedSystem, idx: IndexInstance, n: int, tol: float = 1e-9,
                    rng: Optional[np.random.Generator] = None, batch: int = 20000,
                    max_draws: Optional[int] = None) -> ManifoldSample:
    """Lifted states in ``X`` with ``phi = 0``.

    Raw states are drawn uniformly from the raw box, then one velocity-like
    coordinate (cycled batch by batch) is solved from ``phi = 0``.  If no
    coordinate enters ``phi`` affinely, draws are kept when ``|phi| <= tol``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = rng if rng is not None else np.random.default_rng(0)
    empty_states = np.zeros((0, sys.nz))
    if n == 0:
        return ManifoldSample(empty_states, np.zeros((0, sys.raw_dim)), 0, False)
    max_draws = max_draws if max_draws is not None else max(200 * n, 10 ** 6)
    coords = _affine_coords(sys, idx)
    lo, hi = np.asarray(sys.raw_lo, float), np.asarray(sys.raw_hi, float)
    got_z, got_x = [], []
    count, draws, turn = 0, 0, 0
    while count < n and draws < max_draws:
        m = min(batch, max_draws - draws)
        X = rng.uniform(lo, hi, size=(m, sys.raw_dim))
        draws += m
        try:
            Z = sys.lift_many(X)
        except LiftError:
            continue
        if coords:
            raw_i, z_i, a, b = coords[turn % len(coords)]
            turn += 1
            A, B = a.eval_many(Z), b.eval_many(Z)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = -A / B
            ok = np.isfinite(val) & (val >= lo[raw_i]) & (val <= hi[raw_i])
            X, Z, val = X[ok], Z[ok], val[ok]
            X[:, raw_i] = val
            Z[:, z_i] = val
            keep = _in_region_many(sys, Z)
        else:
            keep = np.abs(idx.phi.eval_many(Z)) <= tol
            keep &= _in_region_many(sys, Z)
        got_z.append(Z[keep])
        got_x.append(X[keep])
        count += int(keep.sum())
    if count == 0:
        return ManifoldSample(empty_states, np.zeros((0, sys.raw_dim)), draws, True)
    return ManifoldSample(np.concatenate(got_z)[:n], np.concatenate(got_x)[:n], draws, False)


def verify_index(sys: SubstitutedSystem, template: IndexTemplate, theta, n_samples: int = 100000,
                 tol: float = 1e-9, seed: int = 0, margin_floor: float = MARGIN_FLOOR
                 ) -> VerificationReport:
    """Valid iff ``min_u phi_dot < -margin_floor`` at every manifold sample."""
    idx = build_index(template, theta)
    sample = sample_manifold(sys, idx, n_samples, tol, np.random.default_rng(seed))
    if len(sample) == 0:
        return VerificationReport(True, 0, -np.inf, None, tol, empty_manifold=sample.empty,
                                  margin_floor=margin_floor, draws=sample.draws)
    vals = min_phi_dot_many(idx, sample.states)
    k = int(np.argmax(vals))
    worst = float(vals[k])
    return VerificationReport(worst < -margin_floor, len(sample), worst, sample.states[k].copy(),
                              tol, margin_floor=margin_floor, draws=sample.draws)


def grid_scan(sys: SubstitutedSystem, idx: IndexInstance, n_grid: int = 400,
              coord: int = 0) -> tuple[int, float]:
    """Independent oracle: bracket roots of ``phi`` along one velocity coordinate.

    The other raw coordinates run over a regular grid (``n_grid`` points per
    axis); along the chosen coordinate ``phi`` is tabulated on ``n_grid``
    points and every sign change is refined with Brent's method.  Returns the
    number of manifold points found and the largest ``min phi_dot`` among them.
    Only practical for low raw dimension.
    """
    raw_i, _ = sys.velocity_coords[coord]
    lo, hi = np.asarray(sys.raw_lo, float), np.asarray(sys.raw_hi, float)
    others = [j for j in range(sys.raw_dim) if j != raw_i]
    axes = [np.linspace(lo[j], hi[j], n_grid) for j in others]
    line = np.linspace(lo[raw_i], hi[raw_i], n_grid)
    found, worst = 0, -np.inf

    def phi_at(x):
        return idx.phi.eval(sys.lift(x))

    for point in np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(others), -1).T:
        X = np.empty((n_grid, sys.raw_dim))
        X[:, others] = point
        X[:, raw_i] = line
        vals = idx.phi.eval_many(sys.lift_many(X))
        for j in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0):
            x = X[j].copy()
            if vals[j] == 0.0:
                root = line[j]
            elif vals[j + 1] == 0.0:
                continue  # picked up as the left end of the next cell
            else:
                def h(t, x=x):
                    x[raw_i] = t
                    return phi_at(x)
                root = brentq(h, line[j], line[j + 1], xtol=1e-14, rtol=1e-14)
            x[raw_i] = root
            z = sys.lift(x)
            if not sys.in_region(z):
                continue
            found += 1
            worst = max(worst, float(min_phi_dot_many(idx, z[None, :])[0]))
    return found, worst


# -- safe-set controller ------------------------------------------------------

@dataclass(frozen=True)
class SafeControl:
    u: np.ndarray
    active: bool  # the constraint was enforced (phi >= threshold)
    infeasible: bool  # no box control meets the constraint; u is the best corner
    saturated: bool  # constraint active and u sits at a box corner


def _clamp(u, lo, hi):
    return np.minimum(np.maximum(u, lo), hi)


def project_controls(Lf, Lg, u_ref, u_min, u_max, eta=0.0) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise argmin ``|u - u_ref|^2`` over the box subject to ``Lf + Lg.u <= -eta``.

    ``eta`` may be a scalar or one value per row.

    The minimizer is ``clamp(u_ref - lam * Lg)`` for the smallest feasible
    ``lam >= 0``.  The constraint value is nonincreasing and piecewise linear
    in ``lam``, with a kink wherever a component meets a bound, so the
    crossing is bracketed between consecutive kinks and located exactly by
    linear interpolation.  Rows where even the best corner fails get that
    corner and an ``infeasible`` flag.  Returns ``(u, infeasible)``.
    """
    Lf = np.asarray(Lf, dtype=float).reshape(-1)
    Lg = np.asarray(Lg, dtype=float).reshape(Lf.size, -1)
    lo, hi = np.asarray(u_min, dtype=float), np.asarray(u_max, dtype=float)
    ref = np.asarray(u_ref, dtype=float).reshape(Lg.shape)
    u0 = _clamp(ref, lo, hi)
    bound = -np.broadcast_to(np.asarray(eta, dtype=float), Lf.shape)

    u = u0.copy()
    infeasible = np.zeros(Lf.size, dtype=bool)
    need = Lf + np.sum(Lg * u0, axis=1) > bound
    if not need.any():
        return u, infeasible
    corner = np.where(Lg >= 0, lo, hi)
    bad = need & (Lf + np.sum(Lg * corner, axis=1) > bound)
    u[bad] = corner[bad]
    infeasible[bad] = True
    rows = np.flatnonzero(need & ~bad)
    if rows.size == 0:
        return u, infeasible
    g, v0, lf, bd = Lg[rows], ref[rows], Lf[rows], bound[rows]
    # a component outside the box stays pinned until the path re-enters it
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        kinks = np.concatenate([(v0 - lo) / g, (v0 - hi) / g], axis=1)
    kinks = np.where(np.isfinite(kinks) & (kinks > 0), kinks, 0.0)
    lam = np.sort(np.concatenate([np.zeros((rows.size, 1)), kinks], axis=1), axis=1)

    def at(lmb):
        gg = g[:, None, :]
        step = np.where(gg != 0, lmb[..., None] * gg, 0.0)
        val = _clamp(v0[:, None, :] - step, lo, hi)
        return val, lf[:, None] + np.sum(gg * val, axis=2)

    _, c = at(lam)
    # first kink where the constraint holds; the corner check guarantees one exists
    k = np.argmax(c <= bd[:, None], axis=1)
    r = np.arange(rows.size)
    km = np.maximum(k - 1, 0)
    c0, c1 = c[r, km], c[r, k]
    l0, l1 = lam[r, km], lam[r, k]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(c0 > c1, (c0 - bd) / (c0 - c1), 1.0)
    star = np.where(k == 0, l1, l0 + np.clip(t, 0.0, 1.0) * (l1 - l0))
    u[rows] = at(star[:, None])[0][:, 0, :]
    return u, infeasible


def project_control(Lf: float, Lg, u_ref, u_min, u_max, eta: float = 0.0) -> tuple[np.ndarray, bool]:
    """Single-state :func:`project_controls`."""
    u, bad = project_controls([Lf], [np.asarray(Lg, dtype=float)], [np.asarray(u_ref, dtype=float)],
                              u_min, u_max, eta)
    return u[0], bool(bad[0])


def _lie_values(idx: IndexInstance, Z: np.ndarray):
    Lf = idx.Lf.eval_many(Z)
    Lg = np.stack([lg.eval_many(Z) for lg in idx.Lg], axis=1)
    return Lf, Lg


def ssa_control(idx: IndexInstance, z, u_ref, threshold: float = 0.0,
                eta: float = 0.0) -> SafeControl:
    """Safe-set projection of ``u_ref``; enforced only when ``phi(z) >= threshold``."""
    z = np.asarray(z, dtype=float)
    lo, hi = idx.u_min, idx.u_max
    if idx.phi.eval(z) < threshold:
        return SafeControl(_clamp(np.asarray(u_ref, float), lo, hi), False, False, False)
    Lf, Lg = _lie_values(idx, z[None, :])
    u, infeasible = project_control(Lf[0], Lg[0], u_ref, lo, hi, eta)
    saturated = bool(np.all((u == lo) | (u == hi)))
    return SafeControl(u, True, infeasible, saturated)


def adversarial_refs(idx: IndexInstance, Z: np.ndarray) -> np.ndarray:
    """Row-wise bang-bang control maximizing ``phi_dot``; ties go to ``u_min``."""
    _, Lg = _lie_values(idx, np.asarray(Z, dtype=float).reshape(-1, idx.phi.nvars))
    return np.where(Lg > 0, idx.u_max, idx.u_min).astype(float)


def adversarial_ref(idx: IndexInstance, z) -> np.ndarray:
    return adversarial_refs(idx, np.asarray(z, dtype=float)[None, :])[0]


# -- rollouts -----------------------------------------------------------------

@dataclass
class RolloutStats:
    """Per-rollout counters.

    A rollout stops at the first state outside ``X`` (``exited``) since the
    certificate makes no claim there; a step past the wall counts as a
    violation before the rollout stops.
    """

    steps: int
    dt: float
    violations: int = 0
    min_phi0_margin: float = np.inf  # min over visited states of -phi0
    min_distance: float = np.inf
    saturation_steps: int = 0
    infeasible_steps: int = 0  # phi >= 0 and no box control met the constraint
    active_steps: int = 0
    exited: bool = False
    aborted: bool = False

    @property
    def safe(self) -> bool:
        return self.violations == 0 and not self.aborted


@dataclass
class Trajectory:
    t: np.ndarray
    raw: np.ndarray
    u: np.ndarray
    phi0: np.ndarray
    phi: np.ndarray

    def to_text(self, delimiter: str = ",") -> str:
        """One line per step: time, raw state, control, phi0, phi."""
        lines = []
        for k in range(self.t.size):
            row = [self.t[k], *self.raw[k], *self.u[k], self.phi0[k], self.phi[k]]
            lines.append(delimiter.join(repr(float(v)) for v in row))
        return "\n".join(lines) + ("\n" if lines else "")


def rk4_step(fun: Callable, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = fun(x, u)
    k2 = fun(x + 0.5 * dt * k1, u)
    k3 = fun(x + 0.5 * dt * k2, u)
    k4 = fun(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _lift_rows(sys: SubstitutedSystem, X: np.ndarray):
    """Lift row by row only when the batch lift fails; returns ``(Z, ok)``."""
    try:
        return sys.lift_many(X), np.ones(X.shape[0], dtype=bool)
    except LiftError:
        Z = np.zeros((X.shape[0], sys.nz))
        ok = np.ones(X.shape[0], dtype=bool)
        for i, x in enumerate(X):
            try:
                Z[i] = sys.lift(x)
            except LiftError:
                ok[i] = False
        return Z, ok


def simulate_many(sys: SubstitutedSystem, idx: IndexInstance, X0, steps: int = 2000,
                  dt: float = 0.01, violation_tol: float = VIOLATION_TOL,
                  threshold: float = 0.0, eta: float = 0.0, record: bool = False,
                  sampled: bool = True):
    """Lockstep rollouts of the safe-set controller around the adversarial reference.

    Fixed-step RK4 on the raw dynamics with the control held over each step;
    states are re-lifted every step so the lifted equalities hold exactly.

    With ``sampled=False`` the constraint ``phi_dot <= -eta`` is imposed only
    where ``phi >= threshold``; a held control then lets ``phi`` overshoot by
    O(dt) before the constraint engages.  The default sampled-data form asks
    for ``phi + dt * phi_dot <= threshold - dt * eta`` at every step, which is
    the same constraint on ``phi = threshold`` and is looser below it.

    Returns ``(stats_list, trajectories_or_None)``.
    """
    X = np.array(X0, dtype=float).reshape(-1, sys.raw_dim)
    N = X.shape[0]
    stats = [RolloutStats(steps=0, dt=dt) for _ in range(N)]
    live = np.ones(N, dtype=bool)
    recs = [([], [], [], []) for _ in range(N)] if record else None
    lo, hi = idx.u_min, idx.u_max
    for k in range(steps + 1):
        rows = np.flatnonzero(live)
        if rows.size == 0:
            break
        Z, ok = _lift_rows(sys, X[rows])
        for i in rows[~ok]:
            stats[i].aborted = True
        live[rows[~ok]] = False
        rows, Z = rows[ok], Z[ok]
        p0 = sys.phi0.eval_many(Z)
        dist = sys.distance_fn(X[rows]) if sys.distance_fn is not None else None
        inside = _in_region_many(sys, Z)
        for j, i in enumerate(rows):
            st = stats[i]
            st.min_phi0_margin = min(st.min_phi0_margin, float(-p0[j]))
            if dist is not None:
                st.min_distance = min(st.min_distance, float(dist[j]))
            if p0[j] > violation_tol:
                st.violations += 1
            if not inside[j]:
                st.exited = True
        live[rows[~inside]] = False
        keep = inside
        rows, Z = rows[keep], Z[keep]
        if k == steps or rows.size == 0:
            break
        phi = idx.phi.eval_many(Z)
        Lf, Lg = _lie_values(idx, Z)
        u = _clamp(np.where(Lg > 0, hi, lo).astype(float), lo, hi)
        infeasible = np.zeros(rows.size, dtype=bool)
        if sampled:
            need = eta + (phi - threshold) / dt
            act = (phi >= threshold) | (Lf + np.sum(Lg * u, axis=1) > -need)
        else:
            need = np.full(rows.size, float(eta))
            act = phi >= threshold
        if act.any():
            u_act, bad = project_controls(Lf[act], Lg[act], u[act], lo, hi, need[act])
            u[act] = u_act
            infeasible[act] = bad
        # below the threshold the sampled-data guard is only anticipating
        infeasible &= phi >= threshold
        sat = act & np.all((u == lo) | (u == hi), axis=1)
        for j, i in enumerate(rows):
            st = stats[i]
            st.active_steps += int(act[j])
            st.saturation_steps += int(sat[j])
            st.infeasible_steps += int(infeasible[j])
            st.steps += 1
            if record:
                rx, ru, rp0, rp = recs[i]
                rx.append(X[i].copy())
                ru.append(u[j].copy())
                rp0.append(float(p0[j]))
                rp.append(float(phi[j]))
        X[rows] = rk4_step(sys.raw_dynamics, X[rows], u, dt)
    trajs = None
    if record:
        trajs = []
        for rx, ru, rp0, rp in recs:
            n = len(rx)
            trajs.append(Trajectory(np.arange(n) * dt, np.array(rx).reshape(n, sys.raw_dim),
                                    np.array(ru).reshape(n, sys.nu), np.array(rp0), np.array(rp)))
    return stats, trajs


def simulate(sys: SubstitutedSystem, idx: IndexInstance, x0_raw, steps: int = 2000,
             dt: float = 0.01, controller: Optional[Callable] = None,
             violation_tol: float = VIOLATION_TOL, record: bool = False):
    """One rollout; returns ``(stats, trajectory_or_None)``.

    With ``controller=None`` this is the safe-set controller wrapped around
    the adversarial reference.  A custom ``controller(idx, z)`` may return a
    control vector or a :class:`SafeControl`.
    """
    if controller is None:
        stats, trajs = simulate_many(sys, idx, np.asarray(x0_raw, dtype=float)[None, :], steps,
                                     dt, violation_tol, record=record)
        return stats[0], (trajs[0] if record else None)
    x = np.asarray(x0_raw, dtype=float).copy()
    stats = RolloutStats(steps=0, dt=dt)
    rec_x, rec_u, rec_p0, rec_p = [], [], [], []
    for k in range(steps + 1):
        try:
            z = sys.lift(x)
        except LiftError:
            stats.aborted = True
            break
        p0 = sys.phi0.eval(z)
        stats.min_phi0_margin = min(stats.min_phi0_margin, -p0)
        if sys.distance_fn is not None:
            stats.min_distance = min(stats.min_distance, float(sys.distance_fn(x)))
        if p0 > violation_tol:
            stats.violations += 1
        if not sys.in_region(z):
            stats.exited = True
            break
        if k == steps:
            break
        out = controller(idx, z)
        u = out.u if isinstance(out, SafeControl) else np.asarray(out, dtype=float)
        if isinstance(out, SafeControl):
            stats.active_steps += int(out.active)
            stats.saturation_steps += int(out.saturated)
            stats.infeasible_steps += int(out.infeasible)
        if record:
            rec_x.append(x.copy())
            rec_u.append(u.copy())
            rec_p0.append(p0)
            rec_p.append(idx.phi.eval(z))
        x = rk4_step(sys.raw_dynamics, x, u, dt)
        stats.steps += 1
    traj = None
    if record:
        n = len(rec_x)
        traj = Trajectory(np.arange(n) * dt, np.array(rec_x).reshape(n, sys.raw_dim),
                          np.array(rec_u).reshape(n, sys.nu), np.array(rec_p0), np.array(rec_p))
    return stats, traj


def default_controller(idx: IndexInstance, z) -> SafeControl:
    return ssa_control(idx, z, adversarial_ref(idx, z))


def sample_initial_states(sys: SubstitutedSystem, idx: IndexInstance, n: int,
                          rng: np.random.Generator, max_draws: int = 10 ** 6) -> np.ndarray:
    """Uniform raw states in ``X`` with ``phi0 <= 0`` and ``phi <= 0``."""
    out, draws = [], 0
    lo, hi = np.asarray(sys.raw_lo, float), np.asarray(sys.raw_hi, float)
    while sum(len(o) for o in out) < n and draws < max_draws:
        X = rng.uniform(lo, hi, size=(max(4 * n, 256), sys.raw_dim))
        draws += X.shape[0]
        Z, ok = _lift_rows(sys, X)
        ok &= _in_region_many(sys, Z) & (sys.phi0.eval_many(Z) <= 0) & (idx.phi.eval_many(Z) <= 0)
        out.append(X[ok])
    X = np.concatenate(out) if out else np.zeros((0, sys.raw_dim))
    return X[:n]


def rollout_batch(sys: SubstitutedSystem, idx: IndexInstance, n_rollouts: int, steps: int,
                  dt: float, seed: int = 0) -> list[RolloutStats]:
    rng = np.random.default_rng(seed)
    starts = sample_initial_states(sys, idx, n_rollouts, rng)
    return simulate_many(sys, idx, starts, steps, dt)[0]


def batch_stats(results: Sequence) -> dict:
    """Table-style summary over ``(SynthesisResult, VerificationReport)`` pairs.

    A seed counts as valid when synthesis reported feasible and the oracle
    agreed.  ``theta_variance`` is taken over the feasible seeds.
    """
    if not results:
        raise ValueError("batch_stats needs at least one result")
    times = [r.wall_time_seconds for r, _ in results]
    valid = [r.status == "feasible" and rep is not None and rep.valid for r, rep in results]
    thetas = [np.asarray(r.theta, dtype=float) for r, _ in results if r.status == "feasible"]
    var = np.var(np.array(thetas), axis=0) if thetas else None
    return {
        "mean_time": float(np.mean(times)),
        "validness_pct": 100.0 * float(np.mean(valid)),
        "theta_variance": None if var is None else [float(v) for v in var],
    }
