"""Sweeps over architectures, pair counts and lengths, checked against the bounds.

Every ``(model, n, T)`` point is an independent training job. Jobs are cached
on disk under ``<outdir>/cache`` keyed by a hash of the canonical model config,
the task shape and the training config, so experiments that share a grid point
(Experiment 2 and 3, or the hybrid endpoints and the pure stacks) train it once.

Each experiment writes ``<outdir>/<exp>/rows.csv`` (one row per job),
``summary.csv`` (one row per model and length, with ``n*``), figure CSV/SVG
pairs, and updates ``<outdir>/manifest.json``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .bounds import DEFAULT_EPSILON, ecr_profile, recall_bound, tradeoff_rhs
from .figures import emit_figure_data, rows_to_csv
from .models import ModelConfig, max_step_flops, peak_state_bits
from .rng import DEFAULT_SEED, describe
from .task import TaskConfig
from .trainer import TrainConfig, evaluate, loss_curve_csv, n_star_from_accuracies, train

log = logging.getLogger(__name__)

EXPERIMENTS = ("exp1", "exp2", "exp3", "exp4", "exp5")
CACHE_VERSION = 1
V = 32
THRESHOLD = 0.90
R_ATTN_GRID = tuple(i / 8 for i in range(9))
EXP2_N_GRID = (1, 2, 4, 8, 16, 32)
EXP2_T_GRID = (20, 32, 48, 64)

ROW_COLUMNS = (
    "experiment", "arch", "n", "T", "r_attn", "accuracy", "n_star", "state_bits", "step_flops",
    "bound_n_star", "e", "c", "r", "utilization",
)
SUMMARY_COLUMNS = (
    "experiment", "arch", "T", "r_attn", "n_attn", "n_star", "boundary", "tested", "state_bits",
    "step_flops", "bound_n_star", "e", "c", "r", "tradeoff_rhs", "utilization",
)
ACCOUNTING_COLUMNS = ("arch", "T", "step_flops", "state_bits", "n_star", "e", "c", "r")


class TheoremViolation(AssertionError):
    """An empirical result exceeded a proven capacity bound."""


# --- sweep specifications --------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    experiment: str
    models: tuple[ModelConfig, ...]
    n_grid: tuple[int, ...]
    T_grid: tuple[int, ...]
    r_attn_grid: tuple[float, ...] = ()
    profile: str = "full"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not self.models or not self.n_grid or not self.T_grid:
            raise ValueError(f"{self.experiment}: empty sweep")

    @property
    def labels(self) -> list[str]:
        return [m.label for m in self.models]

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "models": [m.label for m in self.models],
            "n_grid": list(self.n_grid),
            "T_grid": list(self.T_grid),
            "r_attn_grid": list(self.r_attn_grid),
            "profile": self.profile,
        }


def _m(arch: str, **kw) -> ModelConfig:
    return ModelConfig.for_arch(arch, **kw)


def sweep_spec(experiment: str, profile: str = "full") -> SweepSpec:
    """Grids for one experiment; the fast profile shrinks them for CI."""
    if profile not in ("full", "fast"):
        raise ValueError(f"profile must be 'full' or 'fast', got {profile!r}")
    fast = profile == "fast"
    five = (_m("transformer"), _m("hybrid", r_attn=0.5), _m("gla"), _m("linear_transformer"), _m("mamba"))
    if experiment == "exp1":
        models = five if not fast else (_m("transformer"), _m("gla"), _m("linear_transformer"), _m("mamba"))
        n_grid = tuple(range(1, 11)) if not fast else (1, 2, 4, 8)
        return SweepSpec(experiment, models, n_grid, (32,), profile=profile)
    if experiment in ("exp2", "exp3"):
        # the scaling claims need every length, so the fast profile keeps the
        # length grid and drops architectures instead
        models = five if not fast else (_m("transformer"), _m("linear_transformer"), _m("mamba"))
        return SweepSpec(experiment, models, EXP2_N_GRID, EXP2_T_GRID, profile=profile)
    if experiment == "exp4":
        models = tuple(_m("hybrid", r_attn=r) for r in R_ATTN_GRID)
        n_grid = tuple(range(1, 11)) if not fast else (1, 2, 4, 8)
        return SweepSpec(experiment, models, n_grid, (32,), R_ATTN_GRID, profile)
    if experiment == "exp5":
        models = tuple(_m("mamba", N=N) for N in (4, 8, 16, 32, 64)) + (_m("linear_transformer"), _m("gla"))
        if fast:
            return SweepSpec(experiment, models, (1, 2, 4, 8), (32,), profile=profile)
        return SweepSpec(experiment, models, EXP2_N_GRID, (32, 64), profile=profile)
    raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")


def feasible(n_grid: Iterable[int], T: int) -> list[int]:
    """Grid points whose layout ``3n + 2`` fits in ``T`` tokens."""
    return sorted(n for n in set(n_grid) if 3 * n + 2 <= T)


# --- jobs and cache ----------------------------------------------------------------


@dataclass(frozen=True)
class Job:
    model: ModelConfig
    n: int
    T: int
    train: TrainConfig

    @property
    def canonical(self) -> ModelConfig:
        return self.model.canonical()

    @property
    def key(self) -> str:
        payload = {
            "version": CACHE_VERSION,
            "model": self.canonical.to_dict(),
            "n": self.n,
            "T": self.T,
            "V": V,
            "train": self.train.to_dict(),
            "eval_instances": self.train.eval_instances,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:20]

    def stream_keys(self) -> dict[str, str]:
        return {
            "init": describe("init", self.canonical.label),
            "train": describe("train", self.n, self.T, "<step>"),
            "eval": describe("eval", self.n, self.T),
        }


@dataclass
class JobRecord:
    key: str
    label: str
    n: int
    T: int
    accuracy: float
    instances: int
    final_loss: float
    steps: int
    seconds: float
    seed: int
    cached: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def run_job(job: Job) -> tuple[JobRecord, str]:
    """Train and evaluate one grid point; returns the record and the loss-curve CSV."""
    model = job.canonical
    task = TaskConfig(job.n, job.T, V)
    result = train(model, task, job.train)
    ev = evaluate(result.params, model, job.n, job.T, job.train.eval_instances, job.train.seed, V)
    rec = JobRecord(job.key, model.label, job.n, job.T, ev.accuracy, ev.instances, result.final_loss,
                    job.train.total_steps, round(result.seconds, 3), job.train.seed)
    return rec, loss_curve_csv(result.losses)


class JobCache:
    """One JSON record (plus loss curve) per job key; ``None`` disables persistence."""

    def __init__(self, root: Path | str | None):
        self.root = Path(root) if root is not None else None
        self._mem: dict[str, JobRecord] = {}

    def get(self, key: str) -> JobRecord | None:
        if key in self._mem:
            return self._mem[key]
        if self.root is None:
            return None
        path = self.root / f"{key}.json"
        if not path.exists():
            return None
        rec = JobRecord(**json.loads(path.read_text()))
        self._mem[key] = rec
        return rec

    def put(self, rec: JobRecord, loss_csv: str | None = None) -> None:
        self._mem[rec.key] = rec
        if self.root is None:
            return
        self.root.mkdir(parents=True, exist_ok=True)
        stored = replace(rec, cached=False)
        (self.root / f"{rec.key}.json").write_text(json.dumps(stored.to_dict(), sort_keys=True, indent=1) + "\n")
        if loss_csv is not None:
            (self.root / f"{rec.key}.loss.csv").write_text(loss_csv)


JobRunner = Callable[[Job], tuple[JobRecord, str]]


@dataclass
class Scheduler:
    """Runs jobs through the cache, sequentially or on a process pool."""

    cache: JobCache
    runner: JobRunner = run_job
    workers: int = 1
    log: list[dict] = field(default_factory=list)

    def _fetch(self, job: Job) -> JobRecord | None:
        rec = self.cache.get(job.key)
        if rec is None:
            return None
        return replace(rec, cached=True)

    def run(self, jobs: Sequence[Job]) -> list[JobRecord]:
        out: dict[str, JobRecord] = {}
        todo = []
        for job in jobs:
            rec = self._fetch(job)
            if rec is not None:
                out[job.key] = rec
            elif job.key not in {j.key for j in todo}:
                todo.append(job)
        if self.workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(self.workers) as pool:
                for job, (rec, curve) in zip(todo, pool.map(self.runner, todo)):
                    self.cache.put(rec, curve)
                    out[job.key] = rec
        else:
            for job in todo:
                log.info("training %s n=%d T=%d", job.canonical.label, job.n, job.T)
                rec, curve = self.runner(job)
                self.cache.put(rec, curve)
                out[job.key] = rec
        for job in jobs:
            self.log.append({**out[job.key].to_dict(), "requested_as": job.model.label,
                             "streams": job.stream_keys()})
        return [out[job.key] for job in jobs]


def scan_n_star(sched: Scheduler, model: ModelConfig, n_grid: Sequence[int], T: int, train_cfg: TrainConfig,
                descending_stop: bool) -> tuple[int, bool, dict[int, JobRecord]]:
    """``n*`` over the feasible part of ``n_grid``.

    With ``descending_stop`` the scan starts at the largest ``n`` and stops at the
    first point reaching the threshold. That point is ``n*`` by definition (the
    largest passing ``n``), so the smaller points are not trained.
    """
    grid = feasible(n_grid, T)
    if not grid:
        raise ValueError(f"no n in {list(n_grid)} fits in T={T}")
    records: dict[int, JobRecord] = {}
    if descending_stop and sched.workers <= 1:
        for n in reversed(grid):
            (rec,) = sched.run([Job(model, n, T, train_cfg)])
            records[n] = rec
            if rec.accuracy >= THRESHOLD:
                break
    else:
        recs = sched.run([Job(model, n, T, train_cfg) for n in grid])
        records = dict(zip(grid, recs))
    tested = sorted(records)
    ns = n_star_from_accuracies(tested, [records[n].accuracy for n in tested], THRESHOLD)
    return ns.n_star, ns.n_star == grid[-1], records


# --- rows and theorem checks ---------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    arch: str
    n: int
    T: int
    r_attn: float | None
    accuracy: float | None
    n_star: int
    state_bits: int
    step_flops: int
    bound_n_star: int
    e: float
    c: float
    r: float
    utilization: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Summary:
    experiment: str
    arch: str
    T: int
    r_attn: float | None
    n_attn: int
    n_star: int
    boundary: bool
    tested: str
    state_bits: int
    step_flops: int
    bound_n_star: int
    e: float
    c: float
    r: float
    tradeoff_rhs: float
    utilization: float

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(experiment: str, model: ModelConfig, T: int, n_star: int, boundary: bool = False,
              tested: Sequence[int] = (), epsilon: float = DEFAULT_EPSILON) -> Summary:
    """Accounting, bound and ECR triple for one trained model at length ``T``."""
    bits = peak_state_bits(model, T)
    flops = max_step_flops(model, T)
    bound = recall_bound(bits, V, epsilon)
    prof = ecr_profile(flops, bits, n_star, T, model.d, V, model.bits, epsilon, warn=False)
    rhs = tradeoff_rhs(prof.c, model.bits, V, epsilon)
    util = n_star / bound if bound else 0.0
    r_attn = model.r_attn if model.arch == "hybrid" else None
    return Summary(experiment, model.label, T, r_attn, model.n_attn, n_star, boundary,
                   " ".join(str(n) for n in tested), bits, flops, bound, prof.e, prof.c, prof.r, rhs, util)


def check_theorems(summaries: Iterable[Summary]) -> list[str]:
    """Descriptions of every bound violation (empty when all rows comply)."""
    problems = []
    for s in summaries:
        if s.n_star > s.bound_n_star:
            problems.append(f"{s.experiment} {s.arch} T={s.T}: n*={s.n_star} exceeds bound {s.bound_n_star}")
        if s.r > s.tradeoff_rhs * (1 + 1e-12):
            problems.append(f"{s.experiment} {s.arch} T={s.T}: r={s.r:.6g} exceeds trade-off limit {s.tradeoff_rhs:.6g}")
    return problems


def assert_theorems(summaries: Iterable[Summary]) -> None:
    problems = check_theorems(summaries)
    if problems:
        raise TheoremViolation("; ".join(problems))


def job_rows(summary: Summary, records: dict[int, JobRecord], n_grid: Sequence[int]) -> list[ResultRow]:
    rows = []
    for n in feasible(n_grid, summary.T):
        rec = records.get(n)
        rows.append(ResultRow(summary.experiment, summary.arch, n, summary.T, summary.r_attn,
                              None if rec is None else rec.accuracy, summary.n_star, summary.state_bits,
                              summary.step_flops, summary.bound_n_star, summary.e, summary.c, summary.r,
                              summary.utilization))
    return rows


# --- experiment drivers -------------------------------------------------------------------


@dataclass
class ExperimentResult:
    experiment: str
    spec: SweepSpec
    rows: list[ResultRow]
    summaries: list[Summary]
    extra_tables: dict[str, list[dict]] = field(default_factory=dict)
    figures: dict[str, list[dict]] = field(default_factory=dict)
    shared_with: dict[str, str] = field(default_factory=dict)
    seconds: float = 0.0

    def summary_for(self, label: str, T: int) -> Summary:
        for s in self.summaries:
            if s.arch == label and s.T == T:
                return s
        raise KeyError(f"{self.experiment}: no summary for {label} at T={T}")


@dataclass
class Lab:
    """Shared state for a batch of experiments: profile, seed, cache and job log."""

    profile: str = "fast"
    seed: int = DEFAULT_SEED
    outdir: Path | str | None = "results"
    workers: int = 1
    runner: JobRunner = run_job
    descending_stop: bool | None = None
    steps: int | None = None
    _sched: Scheduler | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.outdir = Path(self.outdir) if self.outdir is not None else None
        if self.descending_stop is None:
            self.descending_stop = self.profile == "fast"
        cache = JobCache(self.outdir / "cache" if self.outdir is not None else None)
        self._sched = Scheduler(cache, self.runner, self.workers)

    @property
    def train_config(self) -> TrainConfig:
        kw = {"seed": self.seed}
        if self.steps is not None:
            kw["total_steps"] = self.steps
            kw["warmup_steps"] = min(200, max(self.steps - 1, 0))
        return TrainConfig.for_profile(self.profile, **kw)

    @property
    def scheduler(self) -> Scheduler:
        return self._sched

    def sweep(self, experiment: str, models: Sequence[ModelConfig], n_grid, T_grid):
        summaries, rows = [], []
        for model in models:
            for T in T_grid:
                n_star, boundary, records = scan_n_star(self._sched, model, n_grid, T, self.train_config,
                                                        self.descending_stop)
                s = summarize(experiment, model, T, n_star, boundary, sorted(records))
                summaries.append(s)
                rows.extend(job_rows(s, records, n_grid))
        return rows, summaries


def accounting_table(T: int = 64) -> list[dict]:
    """Training-free step FLOPs and state bits for the five reference models (hybrid at r = 0.5)."""
    models = (_m("transformer"), _m("hybrid", r_attn=0.5), _m("gla"), _m("linear_transformer"), _m("mamba"))
    return [{"arch": m.label, "T": T, "step_flops": max_step_flops(m, T), "state_bits": peak_state_bits(m, T)}
            for m in models]


def _dicts(items) -> list[dict]:
    return [x.to_dict() for x in items]


def run_exp1(lab: Lab) -> ExperimentResult:
    """Recall accuracy against ``n`` at ``T = 32`` and ``n*`` against state size."""
    t0 = time.perf_counter()
    spec = sweep_spec("exp1", lab.profile)
    rows, summaries = lab.sweep("exp1", spec.models, spec.n_grid, spec.T_grid)
    figs = {"1a": _dicts(rows), "1b": _dicts(summaries)}
    return ExperimentResult("exp1", spec, rows, summaries, figures=figs, seconds=time.perf_counter() - t0)


def run_exp2(lab: Lab) -> ExperimentResult:
    """ECR profiles over the length grid, plus an accounting view at ``T = 64``."""
    t0 = time.perf_counter()
    spec = sweep_spec("exp2", lab.profile)
    rows, summaries = lab.sweep("exp2", spec.models, spec.n_grid, spec.T_grid)
    trained = {(s.arch, s.T): s for s in summaries}
    table = []
    for acc in accounting_table(64):
        s = trained.get((acc["arch"], 64))
        table.append({**acc, "n_star": None if s is None else s.n_star, "e": None if s is None else s.e,
                      "c": None if s is None else s.c, "r": None if s is None else s.r})
    return ExperimentResult("exp2", spec, rows, summaries, extra_tables={"accounting": table},
                            seconds=time.perf_counter() - t0)


def run_exp3(lab: Lab) -> ExperimentResult:
    """Scaling of FLOPs, state and ``r`` with ``T``; reuses the Experiment-2 jobs."""
    t0 = time.perf_counter()
    spec = sweep_spec("exp3", lab.profile)
    rows, summaries = lab.sweep("exp3", spec.models, spec.n_grid, spec.T_grid)
    figs = {fid: _dicts(summaries) for fid in ("3a", "3b", "3c")}
    return ExperimentResult("exp3", spec, rows, summaries, figures=figs, shared_with={"jobs": "exp2"},
                            seconds=time.perf_counter() - t0)


def run_exp4(lab: Lab) -> ExperimentResult:
    """Hybrid sweep over the attention fraction at ``T = 32``."""
    t0 = time.perf_counter()
    spec = sweep_spec("exp4", lab.profile)
    rows, summaries = lab.sweep("exp4", spec.models, spec.n_grid, spec.T_grid)
    shared = {m.label: m.canonical().label for m in spec.models if m.canonical().label != m.label}
    return ExperimentResult("exp4", spec, rows, summaries, figures={"4": _dicts(summaries)}, shared_with=shared,
                            seconds=time.perf_counter() - t0)


def run_exp5(lab: Lab) -> ExperimentResult:
    """Empirical ``n*`` against the bound for the fixed-state models."""
    t0 = time.perf_counter()
    spec = sweep_spec("exp5", lab.profile)
    rows, summaries = lab.sweep("exp5", spec.models, spec.n_grid, spec.T_grid)
    util = {}
    for s in summaries:
        util.setdefault(s.arch, []).append(s.utilization)
    table = [{"arch": a, "mean_utilization": sum(u) / len(u), "configs": len(u)} for a, u in util.items()]
    return ExperimentResult("exp5", spec, rows, summaries, extra_tables={"utilization": table},
                            figures={"5a": _dicts(summaries), "5b": _dicts(summaries)},
                            seconds=time.perf_counter() - t0)


RUNNERS = {"exp1": run_exp1, "exp2": run_exp2, "exp3": run_exp3, "exp4": run_exp4, "exp5": run_exp5}


# --- output ----------------------------------------------------------------------------


def write_result(result: ExperimentResult, outdir: Path | str) -> Path:
    """Write rows, summary, extra tables and figures for one experiment."""
    d = Path(outdir) / result.experiment
    d.mkdir(parents=True, exist_ok=True)
    (d / "rows.csv").write_text(rows_to_csv(_dicts(result.rows), ROW_COLUMNS))
    (d / "summary.csv").write_text(rows_to_csv(_dicts(result.summaries), SUMMARY_COLUMNS))
    for name, table in result.extra_tables.items():
        (d / f"{name}.csv").write_text(rows_to_csv(table))
    for fid, rows in result.figures.items():
        emit_figure_data(rows, fid, d)
    return d


def update_manifest(outdir: Path | str, lab: Lab, results: Sequence[ExperimentResult]) -> Path:
    path = Path(outdir) / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {"experiments": {}}
    manifest.update({"profile": lab.profile, "seed": lab.seed, "train_config": lab.train_config.to_dict(),
                     "threshold": THRESHOLD, "V": V, "cache_version": CACHE_VERSION})
    by_exp: dict[str, list[dict]] = {}
    for res in results:
        keys = {(r.arch, r.n, r.T) for r in res.rows}
        jobs = [j for j in lab.scheduler.log if (j["label"], j["n"], j["T"]) in keys
                or (j["requested_as"], j["n"], j["T"]) in keys]
        by_exp[res.experiment] = jobs
        manifest["experiments"][res.experiment] = {
            "spec": res.spec.to_dict(),
            "seconds": round(res.seconds, 3),
            "shared_with": res.shared_with,
            "violations": check_theorems(res.summaries),
            "jobs": sorted({j["key"]: j for j in jobs}.values(), key=lambda j: (j["label"], j["T"], j["n"])),
        }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def run_experiments(names: Sequence[str], lab: Lab, check: bool = True) -> list[ExperimentResult]:
    """Run the named experiments in order, writing outputs when ``lab.outdir`` is set.

    With ``check`` (the default) raises :class:`TheoremViolation` after writing the
    offending experiment's output; violations are always recorded in the manifest.
    """
    results = []
    for name in names:
        if name not in RUNNERS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {name!r}")
        res = RUNNERS[name](lab)
        results.append(res)
        if lab.outdir is not None:
            write_result(res, lab.outdir)
            update_manifest(lab.outdir, lab, [res])
        if check:
            assert_theorems(res.summaries)
    return results


def hybrid_accounting(T: int = 32) -> list[dict]:
    """State bits and step FLOPs for each swept attention fraction (no training)."""
    out = []
    for r in R_ATTN_GRID:
        m = _m("hybrid", r_attn=r)
        out.append({"r_attn": r, "n_attn": m.n_attn, "state_bits": peak_state_bits(m, T),
                    "step_flops": max_step_flops(m, T)})
    return out
