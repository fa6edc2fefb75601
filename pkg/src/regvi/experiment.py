"""Config-driven experiment runner: seeded run matrices, CSV traces and reports.

A config is a JSON document::

    {
      "name": "gridworld-d1",
      "environment": {"type": "gridworld", "width": 5, "height": 5, "discount": 0.99},
      "params": {"alpha": 0.02, "kappa": 0.99},
      "psi_init": {"type": "uniform_vmax"},
      "iterations": 500,
      "seeds": {"start": 0, "stop": 100},
      "runs": [
        {"name": "mvi", "scheme": "mvi"},
        {"name": "bal", "scheme": "bal", "f": {"type": "tanh", "scale": 1},
         "g": {"type": "clip", "scale": 10, "lo": -1, "hi": 1}}
      ],
      "outputs": {"dir": "runs/gridworld-d1", "formats": ["csv", "json"], "trace": "summary"}
    }

Runs may override ``params``, ``psi_init``, ``noise`` and
``allow_invalid_bounding``. Output files are written with fixed column
orders and 17-significant-digit floats so identical configs give identical
bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import error_terms, iqm, limit_bound_check, normalize_curve, optimal_reference, suboptimality
from .bounding import BoundingFn
from .mdp import GridWorldConfig, TabularMdp, build_gridworld, build_random_mdp
from .soft_ops import RegParams, soft_optimal_value
from .solvers import NoiseSpec, PsiInit, Scheme, SolverConfig, run_scheme

OUTPUT_ENV = "REGVI_OUTPUT_DIR"
TRACE_COLUMNS = (
    "run_name", "seed", "iteration", "suboptimality", "suboptimality_normalized",
    "entropy_mean", "kl_mean", "condition_residual_min", "gap_mean", "diverged",
)
AGGREGATE_COLUMNS = (
    "run_name", "iteration", "n_seeds", "iqm_suboptimality", "iqm_suboptimality_normalized",
)
TABLE_COLUMNS = ("run_name", "seed", "iteration", "state", "action", "psi", "policy")
PRESETS = ("gridworld-d1",)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSpec:
    name: str
    solver: SolverConfig


@dataclass
class ExperimentConfig:
    name: str
    environment: dict
    runs: list[RunSpec]
    seeds: list[int]
    iterations: int
    output_dir: str = "runs"
    formats: tuple[str, ...] = ("csv", "json")
    trace: str = "summary"
    optimal_tol: float = 1e-12
    evaluation_tol: float = 1e-10
    raw: dict = field(default_factory=dict, repr=False)

    def build_mdp(self) -> TabularMdp:
        return build_environment(self.environment)


def build_environment(env: dict) -> TabularMdp:
    env = dict(env)
    kind = env.pop("type", "gridworld")
    if kind == "gridworld":
        return build_gridworld(GridWorldConfig(**env))
    if kind == "random":
        return build_random_mdp(
            int(env["num_states"]), int(env["num_actions"]), int(env.get("seed", 0)),
            float(env.get("reward_scale", 1.0)), float(env.get("discount", 0.9)),
        )
    raise ConfigError(f"environment.type: unknown environment {kind!r}")


def _field(where: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _params(spec, where) -> RegParams:
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected an object with alpha and kappa")
    unknown = set(spec) - {"alpha", "kappa"}
    if unknown:
        raise ConfigError(f"{where}: unexpected fields {sorted(unknown)}")
    if "alpha" not in spec or "kappa" not in spec:
        raise ConfigError(f"{where}: alpha and kappa are required")
    return _field(where, RegParams, float(spec["alpha"]), float(spec["kappa"]))


def _psi_init(spec, where) -> PsiInit:
    if spec is None:
        return PsiInit()
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{where}: expected an object with a 'type' field")
    kind = spec["type"]
    if kind == "explicit":
        return _field(where, PsiInit, "explicit", table=np.asarray(spec["table"], dtype=float))
    return _field(where, PsiInit, kind, float(spec.get("magnitude", 0.0)))


def _noise(spec, where) -> NoiseSpec | None:
    if spec is None:
        return None
    return _field(where, NoiseSpec, spec.get("distribution", "uniform"),
                  float(spec.get("magnitude", 0.0)), int(spec.get("seed", 0)))


def _seeds(spec) -> list[int]:
    if isinstance(spec, dict):
        seeds = list(range(int(spec.get("start", 0)), int(spec["stop"])))
    elif isinstance(spec, list):
        seeds = [int(s) for s in spec]
    else:
        raise ConfigError("seeds: expected a list of integers or {start, stop}")
    if not seeds:
        raise ConfigError("seeds: at least one seed is required")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: duplicate seeds")
    return seeds


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a decoded config document; raises ConfigError naming the field."""
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be an object")
    known = {"name", "environment", "params", "psi_init", "noise", "iterations", "seeds",
             "runs", "outputs", "tolerances", "allow_invalid_bounding", "description"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"config: unexpected fields {sorted(unknown)}")
    environment = data.get("environment", {"type": "gridworld"})
    if not isinstance(environment, dict):
        raise ConfigError("environment: expected an object")
    _field("environment", build_environment, environment)

    iterations = data.get("iterations", 100)
    if not isinstance(iterations, int) or iterations < 0:
        raise ConfigError(f"iterations: expected a non-negative integer, got {iterations!r}")
    seeds = _seeds(data.get("seeds", [0]))

    default_params = data.get("params")
    runs_spec = data.get("runs")
    if not isinstance(runs_spec, list) or not runs_spec:
        raise ConfigError("runs: at least one run is required")
    runs, names = [], set()
    for i, run in enumerate(runs_spec):
        where = f"runs[{i}]"
        if not isinstance(run, dict):
            raise ConfigError(f"{where}: expected an object")
        name = run.get("name")
        if not isinstance(name, str) or not name:
            raise ConfigError(f"{where}.name: a non-empty name is required")
        if name in names:
            raise ConfigError(f"{where}.name: duplicate run name {name!r}")
        if any(c in name for c in "/\\"):
            raise ConfigError(f"{where}.name: path separators are not allowed")
        names.add(name)
        pspec = run.get("params", default_params)
        if pspec is None:
            raise ConfigError(f"{where}.params: no params given and no top-level default")
        params = _params(pspec, f"{where}.params")
        f = _field(f"{where}.f", BoundingFn.from_config, run.get("f", "identity"))
        g = _field(f"{where}.g", BoundingFn.from_config, run.get("g", "identity"))
        solver = _field(
            where, SolverConfig,
            scheme=_field(f"{where}.scheme", Scheme, run.get("scheme", "bal")),
            params=params, f=f, g=g, iterations=iterations,
            noise=_noise(run.get("noise", data.get("noise")), f"{where}.noise"),
            psi_init=_psi_init(run.get("psi_init", data.get("psi_init")), f"{where}.psi_init"),
            allow_invalid_bounding=bool(run.get("allow_invalid_bounding",
                                                data.get("allow_invalid_bounding", False))),
        )
        runs.append(RunSpec(name, solver))

    outputs = data.get("outputs", {})
    trace = outputs.get("trace", "summary")
    if trace not in ("summary", "full"):
        raise ConfigError(f"outputs.trace: expected 'summary' or 'full', got {trace!r}")
    formats = tuple(outputs.get("formats", ("csv", "json")))
    if set(formats) - {"csv", "json"}:
        raise ConfigError(f"outputs.formats: unsupported formats {sorted(set(formats) - {'csv', 'json'})}")
    tolerances = data.get("tolerances", {})
    return ExperimentConfig(
        name=str(data.get("name", "experiment")),
        environment=environment,
        runs=runs,
        seeds=seeds,
        iterations=iterations,
        output_dir=str(outputs.get("dir", "runs")),
        formats=formats,
        trace=trace,
        optimal_tol=float(tolerances.get("optimal_value", 1e-12)),
        evaluation_tol=float(tolerances.get("evaluation", 1e-10)),
        raw=data,
    )


def load_config_text(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(data)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return load_config_text(text)


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = resources.files("regvi.presets").joinpath(f"{name}.json").read_text()
    return load_config_text(text)


def describe(config: ExperimentConfig) -> str:
    mdp = config.build_mdp()
    lines = [
        f"experiment {config.name}",
        f"environment: {json.dumps(config.environment, sort_keys=True)}",
        f"  states={mdp.num_states} actions={mdp.num_actions} gamma={mdp.discount:g} r_max={mdp.r_max:g}",
        f"seeds: {len(config.seeds)} ({config.seeds[0]}..{config.seeds[-1]})",
        f"iterations per run: {config.iterations}",
        f"run matrix: {len(config.runs)} runs x {len(config.seeds)} seeds = "
        f"{len(config.runs) * len(config.seeds)} jobs",
    ]
    for spec in config.runs:
        s = spec.solver
        p = s.params
        sweeps = math.ceil(math.log(config.optimal_tol * (1 - mdp.discount) / max(mdp.v_max(p.tau), 1.0))
                           / math.log(mdp.discount))
        lines.append(
            f"  {spec.name}: scheme={s.scheme.value} f={s.f.label()} g={s.g.label()} "
            f"alpha={p.alpha:.6g} kappa={p.kappa:.6g} tau={p.tau:.6g} lambda={p.lam:.6g} "
            f"V^tau_max={mdp.v_max(p.tau):.7g} psi_init={s.psi_init.kind} "
            f"reference sweeps~{sweeps}"
        )
    lines.append(f"outputs: {config.output_dir} formats={','.join(config.formats)} trace={config.trace}")
    return "\n".join(lines)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _json_bytes(obj) -> bytes:
    return (json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n").encode("utf-8")


@dataclass
class _Job:
    run_index: int
    run_name: str
    seed: int
    solver: SolverConfig
    mdp: TabularMdp
    v_star_tau: np.ndarray
    v_star_alpha: np.ndarray
    pi_star: np.ndarray
    a_star: np.ndarray
    trace_path: Path
    tables_path: Path | None
    evaluation_tol: float


@dataclass
class _JobResult:
    run_index: int
    run_name: str
    seed: int
    suboptimality: np.ndarray
    diverged: bool
    message: str
    report: dict


def _execute(job: _Job) -> _JobResult:
    from dataclasses import replace

    solver = replace(job.solver, seed=job.seed)
    trace = run_scheme(job.mdp, solver)
    params = solver.params
    raw = suboptimality(job.mdp, trace, params.tau, job.v_star_tau, "solve", job.evaluation_tol)
    norm = normalize_curve(raw)

    rows = []
    for i, rec in enumerate(trace.records):
        last = i == len(trace.records) - 1
        rows.append((job.run_name, job.seed, rec.iteration, raw[i], norm[i],
                     float(np.mean(rec.entropy)), float(np.mean(rec.kl)),
                     float(np.min(rec.condition_residual)), rec.gap_mean,
                     bool(trace.diverged and last)))
    job.trace_path.parent.mkdir(parents=True, exist_ok=True)
    job.trace_path.write_bytes(_csv_bytes(TRACE_COLUMNS, rows))

    if job.tables_path is not None:
        table_rows = []
        for rec in trace.records:
            for s in range(job.mdp.num_states):
                for a in range(job.mdp.num_actions):
                    table_rows.append((job.run_name, job.seed, rec.iteration, s, a,
                                       rec.psi[s, a], rec.policy[s, a]))
        job.tables_path.write_bytes(_csv_bytes(TABLE_COLUMNS, table_rows))

    report = {"diverged": trace.diverged, "divergence_message": trace.divergence_message}
    if not trace.diverged and params.alpha > 0:
        bounds = limit_bound_check(job.mdp, trace, params, solver.f, solver.g,
                                   v_star_alpha=job.v_star_alpha, v_star_tau=job.v_star_tau)
        report["bounds"] = bounds.to_dict()
        report["error_terms"] = error_terms(job.mdp, trace, params, solver.f, solver.g,
                                            job.pi_star, job.a_star).to_dict()
    return _JobResult(job.run_index, job.run_name, job.seed, raw, trace.diverged,
                      trace.divergence_message, report)


@dataclass
class ExperimentResult:
    exit_code: int
    output_dir: Path
    diverged: list[tuple[str, int]]
    aggregate: dict[str, np.ndarray]


def resolve_output_dir(config: ExperimentConfig, out: str | Path | None = None) -> Path:
    if out is not None:
        return Path(out)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    return Path(config.output_dir)


def run_experiment(config: ExperimentConfig, out: str | Path | None = None,
                   jobs: int | None = None) -> ExperimentResult:
    """Execute every (run, seed) pair and write traces, aggregate, reports and manifest."""
    out_dir = resolve_output_dir(config, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    mdp = config.build_mdp()
    write_csv = "csv" in config.formats

    references = {}
    for spec in config.runs:
        p = spec.solver.params
        key = (p.alpha, p.kappa)
        if key not in references:
            v_tau = soft_optimal_value(mdp, p.tau, config.optimal_tol)
            v_alpha = soft_optimal_value(mdp, p.alpha, config.optimal_tol)
            pi_star, a_star = optimal_reference(mdp, p, tol=config.optimal_tol)
            references[key] = (v_tau, v_alpha, pi_star, a_star)

    work = []
    for i, spec in enumerate(config.runs):
        p = spec.solver.params
        v_tau, v_alpha, pi_star, a_star = references[(p.alpha, p.kappa)]
        for seed in config.seeds:
            base = out_dir / "traces" / spec.name
            work.append(_Job(
                i, spec.name, seed, spec.solver, mdp, v_tau, v_alpha, pi_star, a_star,
                base / f"seed_{seed}.csv",
                base / f"seed_{seed}_tables.csv" if config.trace == "full" else None,
                config.evaluation_tol,
            ))

    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(work) == 1:
        results = [_execute(job) for job in work]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            results = list(pool.map(_execute, work, chunksize=max(1, len(work) // (4 * jobs))))
    results.sort(key=lambda r: (r.run_index, config.seeds.index(r.seed)))

    if not write_csv:
        for job in work:
            job.trace_path.unlink(missing_ok=True)

    aggregate_rows, aggregate = [], {}
    for i, spec in enumerate(config.runs):
        mine = [r for r in results if r.run_index == i]
        length = min(len(r.suboptimality) for r in mine)
        raw = np.stack([r.suboptimality[:length] for r in mine])
        norm = np.stack([normalize_curve(r.suboptimality)[:length] for r in mine])
        raw_iqm, norm_iqm = iqm(raw, axis=0), iqm(norm, axis=0)
        aggregate[spec.name] = np.atleast_1d(norm_iqm)
        for k in range(length):
            aggregate_rows.append((spec.name, k, len(mine), np.atleast_1d(raw_iqm)[k],
                                   np.atleast_1d(norm_iqm)[k]))
    written = []
    if write_csv:
        (out_dir / "aggregate.csv").write_bytes(_csv_bytes(AGGREGATE_COLUMNS, aggregate_rows))
        written.append("aggregate.csv")

    if "json" in config.formats:
        (out_dir / "reports").mkdir(exist_ok=True)
        for i, spec in enumerate(config.runs):
            report = {
                "run_name": spec.name,
                "scheme": spec.solver.scheme.value,
                "f": spec.solver.f.to_config(),
                "g": spec.solver.g.to_config(),
                "seeds": {str(r.seed): r.report for r in results if r.run_index == i},
            }
            (out_dir / "reports" / f"{spec.name}.json").write_bytes(_json_bytes(report))
            written.append(f"reports/{spec.name}.json")
    if write_csv:
        written.extend(str(job.trace_path.relative_to(out_dir)) for job in work)
        written.extend(str(job.tables_path.relative_to(out_dir)) for job in work if job.tables_path)

    manifest = {
        "tool": "regvi",
        "version": __version__,
        "config": config.raw,
        "resolved": {
            "runs": [
                {"name": s.name, "scheme": s.solver.scheme.value, "alpha": s.solver.params.alpha,
                 "kappa": s.solver.params.kappa, "tau": s.solver.params.tau,
                 "lambda": s.solver.params.lam, "f": s.solver.f.to_config(),
                 "g": s.solver.g.to_config(), "psi_init": s.solver.psi_init.kind}
                for s in config.runs
            ],
            "seeds": config.seeds,
            "iterations": config.iterations,
            "num_states": mdp.num_states,
            "num_actions": mdp.num_actions,
        },
        "files": {name: hashlib.sha256((out_dir / name).read_bytes()).hexdigest()
                  for name in sorted(written)},
        "diverged": [[r.run_name, r.seed] for r in results if r.diverged],
    }
    (out_dir / "manifest.json").write_bytes(_json_bytes(manifest))

    diverged = [(r.run_name, r.seed) for r in results if r.diverged]
    return ExperimentResult(EXIT_DIVERGED if diverged else EXIT_OK, out_dir, diverged, aggregate)
