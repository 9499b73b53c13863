"""Command line interface.

Subcommands: simulate, fit, oracle, compare, replicate, path.  Each accepts
an optional key=value config file via --config; explicit flags win over file
values.  Exit codes: 0 on success, 2 on configuration/usage errors, 3 on
numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .criteria import (
    IC_RESULT_CSV_HEADER,
    default_prior_log_density,
    ic_result_csv_row,
    laplace_log_evidence,
    make_ic_result,
)
from .errors import DegenerateFilterError, EvidenceUnavailableError, ParameterError
from .fit import StepSchedule, default_init_theta, fit_online
from .harness import (
    DEFAULT_CHECKPOINTS,
    config_from_values,
    load_config_file,
    run_path_study,
    run_replication_study,
)
from .kalman import kalman_loglik_and_score
from .models import get_model, read_trajectory_csv, write_trajectory_csv
from .seeding import derive_seed

_PARAM_FLAGS = ("phi", "sigma_x", "sigma_j", "p", "sigma_v")

_DEFAULT_PARAMS = {
    "sv": {"phi": 0.9, "sigma_x": np.sqrt(0.3)},
    "svj": {"phi": 0.9, "sigma_x": np.sqrt(0.3), "sigma_j": np.sqrt(0.6), "p": 0.6},
    "lg": {"phi": 0.9, "sigma_x": np.sqrt(0.3), "sigma_v": 1.0},
}


def _add_param_flags(parser):
    for name in _PARAM_FLAGS:
        parser.add_argument("--" + name.replace("_", "-"), type=float, default=None)


def _theta_from_args(model, args, fallback=None):
    values = dict(_DEFAULT_PARAMS[model.name] if fallback is None else fallback)
    for name in model.param_names:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return model.theta(**{k: values[k] for k in model.param_names})


def _config_values(args) -> dict:
    return load_config_file(args.config) if getattr(args, "config", None) else {}


def _pick(args, cfg_values, attr, key, default):
    flag = getattr(args, attr, None)
    if flag is not None:
        return flag
    if key in cfg_values:
        return cfg_values[key]
    return default


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmmselect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate a trajectory to CSV")
    p_sim.add_argument("--config")
    p_sim.add_argument("--model", choices=("sv", "svj", "lg"), default=None)
    p_sim.add_argument("--n", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", required=True)
    _add_param_flags(p_sim)

    p_fit = sub.add_parser("fit", help="online gradient-ascent fit on a data CSV")
    p_fit.add_argument("--config")
    p_fit.add_argument("--model", choices=("sv", "svj", "lg"), default=None)
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--n-particles", type=int, default=None)
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.add_argument("--schedule-c", type=float, default=None)
    p_fit.add_argument("--schedule-a", type=float, default=None)
    p_fit.add_argument("--trace-out", default=None)

    p_oracle = sub.add_parser("oracle", help="exact linear-Gaussian loglik and score")
    p_oracle.add_argument("--config")
    p_oracle.add_argument("--data", required=True)
    _add_param_flags(p_oracle)

    p_cmp = sub.add_parser("compare", help="fit several models and print IC rows")
    p_cmp.add_argument("--config")
    p_cmp.add_argument("--data", required=True)
    p_cmp.add_argument("--models", default="sv,svj")
    p_cmp.add_argument("--n-particles", type=int, default=None)
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--schedule-c", type=float, default=None)
    p_cmp.add_argument("--schedule-a", type=float, default=None)
    p_cmp.add_argument("--evidence", action="store_true", help="add Laplace log-evidence")
    p_cmp.add_argument("--evidence-seeds", type=int, default=5)
    p_cmp.add_argument("--out", default=None)

    p_rep = sub.add_parser("replicate", help="replication study (selection fractions)")
    p_rep.add_argument("--config")
    p_rep.add_argument("--scenario", type=int, choices=(1, 2), default=None)
    p_rep.add_argument("--r", type=int, default=None, help="replications per data size")
    p_rep.add_argument("--n", default=None, help="comma-separated data sizes")
    p_rep.add_argument("--n-particles", type=int, default=None)
    p_rep.add_argument("--seed", type=int, default=None)
    p_rep.add_argument("--out-dir", default=None)
    p_rep.add_argument("--workers", type=int, default=None)
    p_rep.add_argument("--timings-out", default=None)

    p_path = sub.add_parser("path", help="AIC/BIC difference path study (scenario 2)")
    p_path.add_argument("--config")
    p_path.add_argument("--checkpoints", default=None, help="comma-separated sample sizes")
    p_path.add_argument("--n-particles", type=int, default=None)
    p_path.add_argument("--seed", type=int, default=None)
    p_path.add_argument("--out-dir", default=None)

    return parser


def _cmd_simulate(args, cfg_values) -> int:
    model = get_model(_pick(args, cfg_values, "model", "model", "sv"))
    n = int(_pick(args, cfg_values, "n", "n", 100))
    seed = int(_pick(args, cfg_values, "seed", "seed", 0))
    theta = _theta_from_args(model, args)
    traj = model.simulate(theta, n, seed)
    write_trajectory_csv(traj, args.out)
    print(f"wrote {args.out} ({n} rows, model={model.name}, seed={seed})")
    return 0


def _cmd_fit(args, cfg_values) -> int:
    model = get_model(_pick(args, cfg_values, "model", "model", "sv"))
    _, ys = read_trajectory_csv(args.data)
    schedule = StepSchedule(
        float(_pick(args, cfg_values, "schedule_c", "schedule_c", 1.0)),
        float(_pick(args, cfg_values, "schedule_a", "schedule_a", 2.0 / 3.0)),
    )
    report = fit_online(
        model,
        ys,
        int(_pick(args, cfg_values, "n_particles", "N", 200)),
        schedule,
        default_init_theta(model),
        int(_pick(args, cfg_values, "seed", "seed", 0)),
        trace_path=args.trace_out,
    )
    for name, value in report.theta_hat.as_dict().items():
        print("%s,%.17g" % (name, value))
    print("loglik,%.17g" % report.loglik_hat)
    return 0


def _cmd_oracle(args, cfg_values) -> int:
    model = get_model("lg")
    _, ys = read_trajectory_csv(args.data)
    theta = _theta_from_args(model, args)
    loglik, score = kalman_loglik_and_score(theta, ys)
    print("loglik,%.17g" % loglik)
    for name, value in zip(model.param_names, score):
        print("score_%s,%.17g" % (name, value))
    return 0


def _cmd_compare(args, cfg_values) -> int:
    _, ys = read_trajectory_csv(args.data)
    n = len(ys)
    seed = int(_pick(args, cfg_values, "seed", "seed", 0))
    n_particles = int(_pick(args, cfg_values, "n_particles", "N", 200))
    schedule = StepSchedule(
        float(_pick(args, cfg_values, "schedule_c", "schedule_c", 1.0)),
        float(_pick(args, cfg_values, "schedule_a", "schedule_a", 2.0 / 3.0)),
    )
    rows = [IC_RESULT_CSV_HEADER]
    for idx, name in enumerate(tok for tok in args.models.split(",") if tok):
        model = get_model(name)
        report = fit_online(
            model, ys, n_particles, schedule, default_init_theta(model), derive_seed(seed, idx)
        )
        log_evidence = None
        if args.evidence:
            log_evidence = laplace_log_evidence(
                report.loglik_hat,
                report.theta_hat,
                ys,
                model,
                default_prior_log_density(model),
                n_particles,
                derive_seed(seed, 1000 + idx),
                n_seeds=args.evidence_seeds,
            )
        result = make_ic_result(name, model.d, n, report.loglik_hat, log_evidence=log_evidence)
        rows.append(ic_result_csv_row(result))
    text = "\n".join(rows) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def _cmd_replicate(args, cfg_values) -> int:
    merged = dict(cfg_values)
    for attr, key in (
        ("scenario", "scenario"),
        ("r", "R"),
        ("n", "n"),
        ("n_particles", "N"),
        ("seed", "seed"),
        ("out_dir", "out_dir"),
        ("workers", "workers"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            merged[key] = value
    config = config_from_values(merged)
    result = run_replication_study(config, timings_path=args.timings_out)
    with open(result.fractions_path) as fh:
        sys.stdout.write(fh.read())
    return 0


def _cmd_path(args, cfg_values) -> int:
    merged = dict(cfg_values)
    merged["scenario"] = 2
    for attr, key in (("n_particles", "N"), ("seed", "seed"), ("out_dir", "out_dir")):
        value = getattr(args, attr, None)
        if value is not None:
            merged[key] = value
    config = config_from_values(merged)
    checkpoints = DEFAULT_CHECKPOINTS
    if args.checkpoints:
        checkpoints = tuple(int(tok) for tok in args.checkpoints.split(",") if tok)
    result = run_path_study(config, checkpoints)
    print(f"wrote {result.csv_path} and {result.plot_path}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "oracle": _cmd_oracle,
    "compare": _cmd_compare,
    "replicate": _cmd_replicate,
    "path": _cmd_path,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg_values = _config_values(args)
        return _COMMANDS[args.command](args, cfg_values)
    except (ParameterError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateFilterError, EvidenceUnavailableError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
