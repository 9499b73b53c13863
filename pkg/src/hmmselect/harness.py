"""Experiment driver: replication studies and IC-difference paths.

A study simulates data under a chosen true model (scenario 1: jumps are real,
scenario 2: no jumps), fits both the plain and the jump model online, scores
them with AIC/BIC, and tabulates how often each criterion picks each model
across replications and data sizes.  Replications run in parallel worker
processes with independent seed streams and are resumable from the CSV on
disk; row order and file bytes depend only on the configuration and seed.

A path study follows one long realisation, checkpointing the online iterate
at a grid of sample sizes and emitting the AIC/BIC difference paths plus a
gnuplot script.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, replace
from multiprocessing import get_context
from pathlib import Path


from .criteria import make_ic_result, select
from .errors import DegenerateFilterError, ParameterError
from .fit import OnlineFitState, StepSchedule, default_init_theta, fit_online, online_gradient_step
from .models import get_model
from .seeding import derive_seed, make_rng
from .smc import run_filter

__all__ = [
    "ExperimentConfig",
    "ReplicationRecord",
    "StudyResult",
    "PathStudyResult",
    "run_replication_study",
    "run_path_study",
    "load_config_file",
    "DEFAULT_CHECKPOINTS",
    "WORKERS_ENV_VAR",
]

WORKERS_ENV_VAR = "HMMSELECT_WORKERS"

SV_TRUE = (0.9, math.sqrt(0.3))
SVJ_TRUE = (0.9, math.sqrt(0.3), math.sqrt(0.6), 0.6)

DEFAULT_CHECKPOINTS = tuple(range(1000, 10001, 1000))


@dataclass(frozen=True)
class ExperimentConfig:
    """Study configuration; defaults mirror the reference experiment scale."""

    scenario: int = 2  # 1: jump model true, 2: plain model true
    phi: float = SV_TRUE[0]
    sigma_x: float = SV_TRUE[1]
    sigma_j: float = SVJ_TRUE[2]
    p: float = SVJ_TRUE[3]
    n_values: tuple[int, ...] = (2500, 5000, 7500, 10000)
    n_particles: int = 200
    replications: int = 200
    master_seed: int = 1
    schedule_c: float = 1.0
    schedule_a: float = 2.0 / 3.0
    out_dir: str = "out"
    workers: int | None = None

    def __post_init__(self):
        if self.scenario not in (1, 2):
            raise ValueError("scenario must be 1 or 2")
        if not self.n_values or any(n < 2 for n in self.n_values):
            raise ValueError("n_values must be positive sample sizes")

    def schedule(self) -> StepSchedule:
        return StepSchedule(self.schedule_c, self.schedule_a)

    def true_model_and_theta(self):
        if self.scenario == 1:
            model = get_model("svj")
            return model, model.theta(self.phi, self.sigma_x, self.sigma_j, self.p)
        model = get_model("sv")
        return model, model.theta(self.phi, self.sigma_x)

    def effective_workers(self) -> int:
        if self.workers is not None:
            return max(1, self.workers)
        env = os.environ.get(WORKERS_ENV_VAR)
        if env:
            return max(1, int(env))
        return os.cpu_count() or 1


_CONFIG_KEYS = {
    "scenario": int,
    "model": str,  # accepted for CLI simulate/fit defaults; ignored by studies
    "phi": float,
    "sigma_x": float,
    "sigma_j": float,
    "p": float,
    "n": str,
    "N": int,
    "R": int,
    "seed": int,
    "schedule_c": float,
    "schedule_a": float,
    "out_dir": str,
    "workers": int,
}


def load_config_file(path) -> dict:
    """Parse a flat key=value file; '#' starts a comment, blank lines skipped."""
    values: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _CONFIG_KEYS[key](value)
    return values


def config_from_values(values: dict) -> ExperimentConfig:
    kwargs = {}
    mapping = {
        "scenario": "scenario",
        "phi": "phi",
        "sigma_x": "sigma_x",
        "sigma_j": "sigma_j",
        "p": "p",
        "N": "n_particles",
        "R": "replications",
        "seed": "master_seed",
        "schedule_c": "schedule_c",
        "schedule_a": "schedule_a",
        "out_dir": "out_dir",
        "workers": "workers",
    }
    for key, attr in mapping.items():
        if key in values and values[key] is not None:
            kwargs[attr] = values[key]
    if values.get("n"):
        kwargs["n_values"] = tuple(int(tok) for tok in str(values["n"]).split(",") if tok)
    return ExperimentConfig(**kwargs)


# -- single replication ---------------------------------------------------------


@dataclass(frozen=True)
class ReplicationRecord:
    scenario: int
    rep: int
    n: int
    sv_phi: float
    sv_sigma_x: float
    sv_loglik: float
    sv_aic: float
    sv_bic: float
    svj_phi: float
    svj_sigma_x: float
    svj_sigma_j: float
    svj_p: float
    svj_loglik: float
    svj_aic: float
    svj_bic: float
    aic_selects: str
    bic_selects: str
    status: str = "ok"
    wall_time: float = 0.0  # kept out of the deterministic CSV

    @property
    def ok(self) -> bool:
        return self.status == "ok"


_CSV_FIELDS = [
    "scenario",
    "rep",
    "n",
    "sv_phi",
    "sv_sigma_x",
    "sv_loglik",
    "sv_aic",
    "sv_bic",
    "svj_phi",
    "svj_sigma_x",
    "svj_sigma_j",
    "svj_p",
    "svj_loglik",
    "svj_aic",
    "svj_bic",
    "aic_selects",
    "bic_selects",
    "status",
]

_FLOAT_FIELDS = set(_CSV_FIELDS[3:15])


def replication_seed(master_seed: int, n: int, rep: int) -> int:
    """Seed stream for one replication: one split per data size, one per index."""
    return derive_seed(derive_seed(master_seed, n), rep)


def run_single_replication(
    scenario: int,
    n: int,
    n_particles: int,
    schedule: StepSchedule,
    rep_seed: int,
    rep: int,
) -> ReplicationRecord:
    cfg = ExperimentConfig(scenario=scenario)
    true_model, true_theta = cfg.true_model_and_theta()
    traj = true_model.simulate(true_theta, n, derive_seed(rep_seed, 0))
    ys = traj.observations

    sv = get_model("sv")
    svj = get_model("svj")
    nan = float("nan")
    try:
        fit_sv = fit_online(sv, ys, n_particles, schedule, default_init_theta(sv), derive_seed(rep_seed, 1))
        fit_svj = fit_online(svj, ys, n_particles, schedule, default_init_theta(svj), derive_seed(rep_seed, 2))
    except (DegenerateFilterError, ParameterError, FloatingPointError) as exc:
        return ReplicationRecord(
            scenario, rep, n, *([nan] * 12), "", "", status=f"failed: {type(exc).__name__}"
        )

    results = [
        make_ic_result("sv", sv.d, n, fit_sv.loglik_hat),
        make_ic_result("svj", svj.d, n, fit_svj.loglik_hat),
    ]
    names = [r.model_name for r in results]
    return ReplicationRecord(
        scenario,
        rep,
        n,
        fit_sv.theta_hat.get("phi"),
        fit_sv.theta_hat.get("sigma_x"),
        fit_sv.loglik_hat,
        results[0].aic,
        results[0].bic,
        fit_svj.theta_hat.get("phi"),
        fit_svj.theta_hat.get("sigma_x"),
        fit_svj.theta_hat.get("sigma_j"),
        fit_svj.theta_hat.get("p"),
        fit_svj.loglik_hat,
        results[1].aic,
        results[1].bic,
        names[select(results, "aic")],
        names[select(results, "bic")],
    )


def _worker_init():
    # each worker is one replication; keep the compiled kernels single threaded
    try:
        import numba

        numba.set_num_threads(1)
    except Exception:
        pass


def _worker(task):
    scenario, n, n_particles, c, a, rep_seed, rep = task
    start = time.perf_counter()
    record = run_single_replication(scenario, n, n_particles, StepSchedule(c, a), rep_seed, rep)
    return replace(record, wall_time=time.perf_counter() - start)


# -- replication study ------------------------------------------------------------


@dataclass(frozen=True)
class StudyResult:
    records: tuple[ReplicationRecord, ...]
    fractions: dict  # (criterion, model_name, n) -> count over ok replications
    failures: dict  # n -> failed replication count
    csv_path: str
    fractions_path: str

    def count(self, criterion: str, model_name: str, n: int) -> int:
        return self.fractions.get((criterion, model_name, n), 0)


def _format_field(name: str, value) -> str:
    if name in _FLOAT_FIELDS:
        return "%.17g" % value
    return str(value)


def _write_records_csv(path: Path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for rec in records:
            writer.writerow([_format_field(f, getattr(rec, f)) for f in _CSV_FIELDS])


def _read_records_csv(path: Path) -> list[ReplicationRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kwargs = {}
            for name in _CSV_FIELDS:
                raw = row[name]
                if name in _FLOAT_FIELDS:
                    kwargs[name] = float(raw) if raw not in ("", "nan") else float("nan")
                elif name in ("scenario", "rep", "n"):
                    kwargs[name] = int(raw)
                else:
                    kwargs[name] = raw
            records.append(ReplicationRecord(**kwargs))
    return records


def run_replication_study(config: ExperimentConfig, timings_path=None) -> StudyResult:
    """Run (or resume) the full replication table for ``config``.

    Completed replications found in the study CSV are not recomputed.  The
    CSV is rewritten sorted by (n, replication index), so a finished study is
    byte-stable no matter how work was scheduled.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"replications_scenario{config.scenario}.csv"
    fractions_path = out_dir / f"fractions_scenario{config.scenario}.csv"

    done: dict[tuple[int, int], ReplicationRecord] = {}
    if csv_path.exists():
        for rec in _read_records_csv(csv_path):
            if rec.scenario == config.scenario:
                done[(rec.n, rec.rep)] = rec

    tasks = []
    for n in config.n_values:
        for rep in range(config.replications):
            if (n, rep) not in done:
                tasks.append(
                    (
                        config.scenario,
                        n,
                        config.n_particles,
                        config.schedule_c,
                        config.schedule_a,
                        replication_seed(config.master_seed, n, rep),
                        rep,
                    )
                )

    workers = config.effective_workers()
    if tasks:
        if workers > 1:
            # spawn: fresh interpreters avoid forking a process with live
            # compiled-kernel thread pools
            ctx = get_context("spawn")
            with ctx.Pool(workers, initializer=_worker_init) as pool:
                new_records = pool.map(_worker, tasks, chunksize=1)
        else:
            new_records = [_worker(t) for t in tasks]
        for rec in new_records:
            done[(rec.n, rec.rep)] = rec

    records = [done[key] for key in sorted(done)]
    wanted = {(n, rep) for n in config.n_values for rep in range(config.replications)}
    records = [r for r in records if (r.n, r.rep) in wanted]
    _write_records_csv(csv_path, records)
    if timings_path is not None:
        with open(timings_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "rep", "wall_time"])
            for rec in records:
                writer.writerow([rec.n, rec.rep, "%.3f" % rec.wall_time])

    fractions: dict = {}
    failures: dict = {n: 0 for n in config.n_values}
    for rec in records:
        if not rec.ok:
            failures[rec.n] += 1
            continue
        for criterion, chosen in (("aic", rec.aic_selects), ("bic", rec.bic_selects)):
            key = (criterion, chosen, rec.n)
            fractions[key] = fractions.get(key, 0) + 1

    with open(fractions_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["criterion", "model"] + [f"n_{n}" for n in config.n_values])
        for criterion in ("aic", "bic"):
            for model_name in ("sv", "svj"):
                writer.writerow(
                    [criterion, model_name]
                    + [fractions.get((criterion, model_name, n), 0) for n in config.n_values]
                )
        writer.writerow(["failures", ""] + [failures[n] for n in config.n_values])
        writer.writerow(["total", ""] + [config.replications] * len(config.n_values))

    return StudyResult(tuple(records), fractions, failures, str(csv_path), str(fractions_path))


# -- IC difference path study ------------------------------------------------------


@dataclass(frozen=True)
class PathStudyResult:
    rows: tuple  # (n, aic_diff, bic_diff)
    csv_path: str
    plot_path: str


_GNUPLOT_TEMPLATE = """\
set datafile separator ','
set xlabel 'n'
set ylabel 'IC difference (sv - svj)'
set key top left
plot '{csv}' using 1:2 skip 1 with lines lw 2 title 'AIC difference', \\
     '{csv}' using 1:3 skip 1 with lines lw 2 title 'BIC difference', \\
     0 with lines dashtype 2 lc 'black' notitle
"""


def _checkpointed_fit(model, ys, checkpoints, n_particles, schedule, fit_seed):
    """One online pass; returns {checkpoint: theta iterate after that many observations}."""
    rng = make_rng(derive_seed(fit_seed, 0))
    state = OnlineFitState.initial(model, schedule, default_init_theta(model))
    wanted = set(checkpoints)
    iterates = {}
    for t in range(max(checkpoints)):
        state = online_gradient_step(state, ys[t], model, rng, n_particles)
        if state.k in wanted:
            iterates[state.k] = state.theta
    return iterates


def run_path_study(
    config: ExperimentConfig, checkpoints=DEFAULT_CHECKPOINTS, timings_path=None
) -> PathStudyResult:
    """AIC/BIC difference paths along one realisation of the no-jump scenario."""
    if config.scenario != 2:
        raise ValueError("the path study is defined for scenario 2 (plain model true)")
    checkpoints = tuple(sorted(int(c) for c in checkpoints))
    if not checkpoints or checkpoints[0] < 2:
        raise ValueError("checkpoints must be sample sizes >= 2")

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    true_model, true_theta = config.true_model_and_theta()
    ys = true_model.simulate(true_theta, checkpoints[-1], derive_seed(config.master_seed, 0)).observations

    per_model = {}
    for idx, name in enumerate(("sv", "svj")):
        model = get_model(name)
        fit_seed = derive_seed(config.master_seed, 1 + idx)
        iterates = _checkpointed_fit(model, ys, checkpoints, config.n_particles, config.schedule(), fit_seed)
        entries = {}
        for ci, n in enumerate(checkpoints):
            loglik = run_filter(
                model, iterates[n], ys[:n], config.n_particles, derive_seed(fit_seed, 1 + ci)
            ).loglik
            entries[n] = make_ic_result(name, model.d, n, loglik)
        per_model[name] = entries

    rows = tuple(
        (
            n,
            per_model["sv"][n].aic - per_model["svj"][n].aic,
            per_model["sv"][n].bic - per_model["svj"][n].bic,
        )
        for n in checkpoints
    )

    csv_path = out_dir / "path_scenario2.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write("n,aic_diff,bic_diff\n")
        for n, da, db in rows:
            fh.write("%d,%.17g,%.17g\n" % (n, da, db))
    plot_path = out_dir / "path_scenario2.gp"
    with open(plot_path, "w") as fh:
        fh.write(_GNUPLOT_TEMPLATE.format(csv=csv_path.name))
    return PathStudyResult(rows, str(csv_path), str(plot_path))
