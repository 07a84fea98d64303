"""Command-line front end: ``synth``, ``verify``, ``simulate`` and ``bench``.

Configuration is a single YAML file.  Results are appended as JSON lines to
``<out>/<command>-<digest>.jsonl`` where ``digest`` hashes the resolved
configuration; bench runs also write a CSV summary.  Records hold only
deterministic fields, so reruns with the same configuration and seed are
byte-identical; wall-clock times go to a ``timings-<digest>.csv`` sidecar.

Exit codes: 0 success, 1 synthesized/verified result not valid, 2 bad
configuration, 3 certificate basis failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from .index import IndexTemplate, RelativeDegreeError, build_index
from .model import SubstitutedSystem, UnicycleParams, build_arm, build_unicycle
from .nlp import BasisError, SolverConfig, assemble_problem, solve
from .refute import ConeConfig
from .verify import batch_stats, rollout_batch, sample_initial_states, simulate, verify_index

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_BASIS = 0, 1, 2, 3
THREADS_ENV = "SISYNTH_THREADS"


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    kind: str = "arm"
    n_dof: int = 1
    geometry: str = "serial"
    coords: str = "polar"
    obstacle: tuple = (0.0, 0.0)
    d_min: float = 1.0
    d_lo: Optional[float] = None
    d_hi: Optional[float] = None
    v_lo: float = 0.2
    v_hi: float = 2.0
    pos_bound: Optional[float] = None
    a_bound: float = 1.0
    w_bound: float = 1.0


@dataclass(frozen=True)
class TemplateConfig:
    order: int = 1
    shared_k: bool = True
    theta_range: tuple = (0.0, 5.0)
    theta_bounds: tuple = (1e-3, 100.0)


@dataclass(frozen=True)
class ConeBlock:
    max_product_order: int = 2
    ideal_degree: int = 2
    ideal_scope: str = "auto"
    cancellation: bool = True


@dataclass(frozen=True)
class NlpBlock:
    restarts: int = 200
    max_iters: int = 2000
    epsilon: float = 1e-6
    seed: int = 0
    time_budget: Optional[float] = None
    target_margin: float = 1.0
    objective: str = "none"


@dataclass(frozen=True)
class VerifyBlock:
    n_samples: int = 100000
    tol: float = 1e-9
    seed: int = 0


@dataclass(frozen=True)
class SimulateBlock:
    enabled: bool = False
    steps: int = 2000
    dt: float = 0.01
    n_rollouts: int = 100
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    template: TemplateConfig = TemplateConfig()
    cone: ConeBlock = ConeBlock()
    nlp: NlpBlock = NlpBlock()
    verify: VerifyBlock = VerifyBlock()
    simulate: SimulateBlock = SimulateBlock()
    output_dir: str = "results"

    def digest(self) -> str:
        """Hash of the settings that determine results (the output directory excluded)."""
        d = dataclasses.asdict(self)
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def with_(self, **blocks) -> "RunConfig":
        return dataclasses.replace(self, **blocks)


_SECTIONS = {
    "model": ModelConfig, "template": TemplateConfig, "cone": ConeBlock,
    "nlp": NlpBlock, "verify": VerifyBlock, "simulate": SimulateBlock,
}


def _key_lines(node, prefix=()) -> dict:
    """Map key paths to 1-based source lines from a composed YAML node tree."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (k.value,)
            out[path] = k.start_mark.line + 1
            out.update(_key_lines(v, path))
    return out


def _coerce(section: str, name: str, value, default, line):
    where = f"{section}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false", line)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where} must be an integer", line)
        return value
    if isinstance(default, float) or (default is None and isinstance(value, (int, float))):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number", line)
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list) or len(value) != len(default):
            raise ConfigError(f"{where} must be a list of {len(default)} numbers", line)
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise ConfigError(f"{where} must contain numbers", line)
        return tuple(float(v) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string", line)
        return value
    if default is None and value is None:
        return None
    raise ConfigError(f"{where} has an unsupported value {value!r}", line)


def parse_config(text: str) -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"not valid YAML: {getattr(exc, 'problem', exc)}",
                          None if mark is None else mark.line + 1) from None
    data = data or {}
    lines = _key_lines(node) if node is not None else {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1)
    blocks = {}
    for key, value in data.items():
        line = lines.get((key,))
        if key == "output_dir":
            if not isinstance(value, str):
                raise ConfigError("output_dir must be a string", line)
            blocks["output_dir"] = value
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section {key!r}", line)
        if value is None:
            value = {}
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be a mapping", line)
        cls = _SECTIONS[key]
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        kwargs = {}
        for name, v in value.items():
            kline = lines.get((key, name), line)
            if name not in defaults:
                raise ConfigError(f"unknown key {key}.{name}", kline)
            kwargs[name] = _coerce(key, name, v, defaults[name], kline)
        blocks[key] = cls(**kwargs)
    cfg = RunConfig(**blocks)
    validate(cfg, lines)
    return cfg


def validate(cfg: RunConfig, lines: Optional[dict] = None) -> None:
    lines = lines or {}

    def fail(path, msg):
        raise ConfigError(msg, lines.get(path, lines.get(path[:1])))

    m = cfg.model
    if m.kind not in ("arm", "unicycle"):
        fail(("model", "kind"), "model.kind must be 'arm' or 'unicycle'")
    if m.kind == "arm":
        if not 1 <= m.n_dof <= 14:
            fail(("model", "n_dof"), "model.n_dof must be in [1, 14]")
        if m.geometry not in ("serial", "absolute"):
            fail(("model", "geometry"), "model.geometry must be 'serial' or 'absolute'")
    else:
        if m.coords not in ("cartesian", "polar"):
            fail(("model", "coords"), "model.coords must be 'cartesian' or 'polar'")
        if not m.d_min > 0:
            fail(("model", "d_min"), "model.d_min must be positive")
        if m.d_lo is not None and not m.d_lo > 0:
            fail(("model", "d_lo"), "model.d_lo must be positive")
        if not m.v_lo < m.v_hi:
            fail(("model", "v_lo"), "model.v_lo must be below model.v_hi")
    t = cfg.template
    if t.order not in (1, 2):
        fail(("template", "order"), "template.order must be 1 or 2")
    if not t.theta_range[1] > t.theta_range[0] >= 0:
        fail(("template", "theta_range"), "template.theta_range must be [lo, hi] with 0 <= lo < hi")
    if not t.theta_bounds[1] >= t.theta_bounds[0] > 0:
        fail(("template", "theta_bounds"), "template.theta_bounds must be [lo, hi] with 0 < lo <= hi")
    c = cfg.cone
    if c.max_product_order < 1:
        fail(("cone", "max_product_order"), "cone.max_product_order must be at least 1")
    if c.ideal_degree < 0:
        fail(("cone", "ideal_degree"), "cone.ideal_degree must be nonnegative")
    if c.ideal_scope not in ("auto", "full", "joint"):
        fail(("cone", "ideal_scope"), "cone.ideal_scope must be auto, full or joint")
    n = cfg.nlp
    if not n.epsilon > 0:
        fail(("nlp", "epsilon"), "nlp.epsilon must be positive")
    if n.restarts < 0 or n.max_iters < 1:
        fail(("nlp", "restarts"), "nlp.restarts must be >= 0 and nlp.max_iters >= 1")
    if n.objective not in ("none", "sum_theta"):
        fail(("nlp", "objective"), "nlp.objective must be 'none' or 'sum_theta'")
    if cfg.verify.n_samples < 1 or not cfg.verify.tol > 0:
        fail(("verify",), "verify.n_samples must be >= 1 and verify.tol > 0")
    s = cfg.simulate
    if s.steps < 0 or not s.dt > 0 or s.n_rollouts < 0:
        fail(("simulate",), "simulate needs steps >= 0, dt > 0, n_rollouts >= 0")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


# -- pipeline -----------------------------------------------------------------

def build_system(m: ModelConfig) -> SubstitutedSystem:
    if m.kind == "arm":
        return build_arm(m.n_dof, geometry=m.geometry)
    params = UnicycleParams(obstacle=m.obstacle, d_min=m.d_min, d_lo=m.d_lo, d_hi=m.d_hi,
                            v_lo=m.v_lo, v_hi=m.v_hi, pos_bound=m.pos_bound,
                            a_bound=m.a_bound, w_bound=m.w_bound)
    return build_unicycle(params, coords=m.coords)


def build_template(sys: SubstitutedSystem, t: TemplateConfig) -> IndexTemplate:
    mode = "standard" if t.shared_k or not sys.joint_groups else "per_joint"
    return IndexTemplate(sys, order=t.order, mode=mode)


def solver_config(cfg: RunConfig, seed: Optional[int] = None) -> SolverConfig:
    n, t = cfg.nlp, cfg.template
    return SolverConfig(
        restarts=n.restarts, max_iters=n.max_iters, epsilon=n.epsilon,
        seed=n.seed if seed is None else seed, theta_range=t.theta_range,
        theta_bounds=t.theta_bounds, target_margin=n.target_margin,
        time_budget=n.time_budget, objective=n.objective)


def assemble(cfg: RunConfig, sys: SubstitutedSystem, template: IndexTemplate):
    scope = cfg.cone.ideal_scope
    if scope == "auto":
        scope = "joint" if sys.joint_groups else "full"
    return assemble_problem(sys, template, ConeConfig(cfg.cone.max_product_order),
                            cfg.cone.ideal_degree, cfg.cone.cancellation, ideal_scope=scope)


def _rollout_summary(sys, template, theta, s: SimulateBlock) -> dict:
    idx = build_index(template, theta)
    stats = rollout_batch(sys, idx, s.n_rollouts, s.steps, s.dt, seed=s.seed)
    if not stats:
        return {"n_rollouts": 0}
    return {
        "n_rollouts": len(stats),
        "safe_rollouts": sum(st.safe for st in stats),
        "violations": sum(st.violations for st in stats),
        "infeasible_steps": sum(st.infeasible_steps for st in stats),
        "saturation_steps": sum(st.saturation_steps for st in stats),
        "exited_rollouts": sum(st.exited for st in stats),
        "mean_steps": float(np.mean([st.steps for st in stats])),
        "min_distance": float(min(st.min_distance for st in stats)),
        "min_phi0_margin": float(min(st.min_phi0_margin for st in stats)),
    }


def _clean(v):
    if isinstance(v, float):
        return v if np.isfinite(v) else None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        return _clean(v.item())
    return v


@dataclass
class ResultRecord:
    command: str
    config_digest: str
    model: str
    seed: int
    status: str
    theta: list
    margin: Optional[float]
    oracle_valid: Optional[bool]
    oracle_worst_margin: Optional[float] = None
    oracle_samples: Optional[int] = None
    empty_manifold: Optional[bool] = None
    rollouts: Optional[dict] = None
    wall_time: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_clean(dataclasses.asdict(self)), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ResultRecord":
        return cls(**json.loads(line))


def _oracle(sys, template, theta, v: VerifyBlock):
    rep = verify_index(sys, template, theta, v.n_samples, v.tol, seed=v.seed)
    return rep


def run_synth(cfg: RunConfig, seed: Optional[int] = None, with_timing: bool = False):
    """Assemble, solve, always verify, optionally simulate.  Returns ``(record, seconds)``."""
    sys_ = build_system(cfg.model)
    template = build_template(sys_, cfg.template)
    t0 = time.perf_counter()
    problem = assemble(cfg, sys_, template)
    scfg = solver_config(cfg, seed)
    res = solve(problem, scfg)
    seconds = time.perf_counter() - t0
    rec = ResultRecord(
        command="synth", config_digest=cfg.digest(), model=sys_.name, seed=scfg.seed,
        status=res.status, theta=[float(k) for k in res.theta], margin=float(res.margin),
        oracle_valid=None,
        extra={"restarts_used": res.restarts_used, "residual": float(res.residual),
               "basis_sizes": [p.basis_size for p in problem.programs],
               "patterns": res.patterns})
    # the oracle runs on every candidate that satisfies the gain constraints
    try:
        rep = _oracle(sys_, template, res.theta, cfg.verify)
    except ValueError:
        rep = None
    if rep is not None:
        rec.oracle_valid = bool(rep.valid)
        rec.oracle_worst_margin = float(rep.worst_margin)
        rec.oracle_samples = int(rep.samples)
        rec.empty_manifold = bool(rep.empty_manifold)
    if cfg.simulate.enabled and res.status == "feasible" and rec.oracle_valid:
        rec.rollouts = _rollout_summary(sys_, template, res.theta, cfg.simulate)
    if cfg.model.kind == "unicycle":
        rec.extra["k1_above_one"] = bool(res.theta[0] > 1.0)
    if with_timing:
        rec.wall_time = seconds
    return rec, seconds


def run_verify(cfg: RunConfig, theta) -> ResultRecord:
    sys_ = build_system(cfg.model)
    template = build_template(sys_, cfg.template)
    rep = _oracle(sys_, template, theta, cfg.verify)
    return ResultRecord(
        command="verify", config_digest=cfg.digest(), model=sys_.name, seed=cfg.verify.seed,
        status="valid" if rep.valid else "invalid", theta=[float(k) for k in theta], margin=None,
        oracle_valid=bool(rep.valid), oracle_worst_margin=float(rep.worst_margin),
        oracle_samples=int(rep.samples), empty_manifold=bool(rep.empty_manifold),
        extra={"worst_state": None if rep.worst_state is None else [float(v) for v in rep.worst_state]})


def run_simulate(cfg: RunConfig, theta, dump: Optional[Path] = None) -> ResultRecord:
    sys_ = build_system(cfg.model)
    template = build_template(sys_, cfg.template)
    summary = _rollout_summary(sys_, template, theta, cfg.simulate)
    if dump is not None:
        idx = build_index(template, theta)
        starts = sample_initial_states(sys_, idx, 1, np.random.default_rng(cfg.simulate.seed))
        if len(starts):
            _, traj = simulate(sys_, idx, starts[0], cfg.simulate.steps, cfg.simulate.dt, record=True)
            dump.write_text(traj.to_text())
    safe = summary.get("n_rollouts", 0) == summary.get("safe_rollouts", 0)
    return ResultRecord(
        command="simulate", config_digest=cfg.digest(), model=sys_.name, seed=cfg.simulate.seed,
        status="safe" if safe else "unsafe", theta=[float(k) for k in theta], margin=None,
        oracle_valid=None, rollouts=summary)


def _bench_job(args):
    cfg, dof, seed = args
    cfg = cfg.with_(model=dataclasses.replace(cfg.model, kind="arm", n_dof=dof))
    try:
        rec, seconds = run_synth(cfg, seed=seed)
    except (BasisError, RelativeDegreeError) as exc:
        rec = ResultRecord(command="synth", config_digest=cfg.digest(), model=f"arm{dof}",
                           seed=seed, status="error", theta=[], margin=None, oracle_valid=None,
                           extra={"error": str(exc)})
        seconds = float("nan")
    rec.command = "bench"
    rec.extra["dof"] = dof
    return rec, seconds


def run_bench(cfg: RunConfig, dofs: Sequence[int], n_seeds: int, workers: int = 1):
    """Synthesis over DOF x seeds.  Returns ``(records, seconds, summary_rows)``."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    jobs = [(cfg, d, cfg.nlp.seed + s) for d in dofs for s in range(n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_bench_job, jobs))
    else:
        out = [_bench_job(j) for j in jobs]
    records = [r for r, _ in out]
    seconds = [s for _, s in out]
    rows = []
    for d in dofs:
        sel = [(r, s) for r, s in zip(records, seconds) if r.extra["dof"] == d]
        pairs = [(_AsResult(r, s), _AsReport(r)) for r, s in sel]
        st = batch_stats(pairs)
        rows.append({"dof": d, "seeds": len(sel), "mean_time": st["mean_time"],
                     "validness_pct": st["validness_pct"],
                     "theta_variance": "" if st["theta_variance"] is None
                     else ";".join(repr(v) for v in st["theta_variance"])})
    return records, seconds, rows


@dataclass
class _AsResult:
    rec: ResultRecord
    wall_time_seconds: float

    @property
    def status(self):
        return self.rec.status

    @property
    def theta(self):
        return self.rec.theta


@dataclass
class _AsReport:
    rec: ResultRecord

    @property
    def valid(self):
        return bool(self.rec.oracle_valid)


# -- persistence --------------------------------------------------------------

def append_record(path: Path, rec: ResultRecord) -> bool:
    """Append unless an identical (command, digest, seed, theta) record is already there."""
    path.parent.mkdir(parents=True, exist_ok=True)
    line = rec.to_json()
    if path.exists():
        for existing in path.read_text().splitlines():
            try:
                old = json.loads(existing)
            except json.JSONDecodeError:
                continue
            if (old.get("command"), old.get("config_digest"), old.get("seed"), old.get("theta"),
                    old.get("extra", {}).get("dof")) == \
                    (rec.command, rec.config_digest, rec.seed, json.loads(line)["theta"],
                     rec.extra.get("dof")):
                return False
    with path.open("a") as fh:
        fh.write(line + "\n")
    return True


def append_timing(path: Path, rows: Sequence[tuple]) -> None:
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["command", "model", "seed", "seconds"])
        w.writerows(rows)


def _parse_theta(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--theta must be comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError("--theta is empty")
    return vals


def _workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sisynth", description="Safety-index synthesis and checking")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("synth", "verify", "simulate", "bench"):
        sp = sub.add_parser(name)
        sp.add_argument("-c", "--config", required=True)
        sp.add_argument("-o", "--out", default=None, help="results directory (overrides config)")
        if name == "synth":
            sp.add_argument("--seed", type=int, default=None)
        if name in ("verify", "simulate"):
            sp.add_argument("--theta", required=True)
        if name == "simulate":
            sp.add_argument("--dump-trajectory", default=None)
        if name == "bench":
            sp.add_argument("--dof", default="1,2,4,6")
            sp.add_argument("--seeds", type=int, default=5)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg.output_dir)
        digest = cfg.digest()
        if args.command == "synth":
            rec, seconds = run_synth(cfg, seed=args.seed)
            append_record(out / f"synth-{digest}.jsonl", rec)
            append_timing(out / f"timings-{digest}.csv", [("synth", rec.model, rec.seed, seconds)])
            print(rec.to_json())
            ok = rec.status == "feasible" and bool(rec.oracle_valid)
            return EXIT_OK if ok else EXIT_INVALID
        if args.command == "verify":
            rec = run_verify(cfg, _parse_theta(args.theta))
            append_record(out / f"verify-{digest}.jsonl", rec)
            print(rec.to_json())
            return EXIT_OK if rec.oracle_valid else EXIT_INVALID
        if args.command == "simulate":
            dump = Path(args.dump_trajectory) if args.dump_trajectory else None
            rec = run_simulate(cfg, _parse_theta(args.theta), dump)
            append_record(out / f"simulate-{digest}.jsonl", rec)
            print(rec.to_json())
            return EXIT_OK if rec.status == "safe" else EXIT_INVALID
        try:
            dofs = [int(v) for v in args.dof.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"--dof must be comma-separated integers, got {args.dof!r}") from None
        if args.seeds < 1 or not dofs:
            raise ConfigError("bench needs --seeds >= 1 and at least one DOF")
        records, seconds, rows = run_bench(cfg, dofs, args.seeds, _workers())
        for rec in records:
            append_record(out / f"bench-{digest}.jsonl", rec)
        append_timing(out / f"timings-{digest}.csv",
                      [("bench", r.model, r.seed, s) for r, s in zip(records, seconds)])
        with (out / f"bench-{digest}-summary.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["dof", "seeds", "mean_time", "validness_pct",
                                               "theta_variance"])
            w.writeheader()
            w.writerows(rows)
        with (out / f"bench-{digest}-times.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dof", "seed", "seconds"])
            w.writerows((r.extra["dof"], r.seed, s) for r, s in zip(records, seconds))
        for row in rows:
            print(json.dumps(row, sort_keys=True))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BasisError as exc:
        print(f"basis error: {exc}", file=sys.stderr)
        return EXIT_BASIS
    except (RelativeDegreeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
