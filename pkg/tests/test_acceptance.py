"""End-to-end acceptance gate.

One test per criterion; each prints a PASS line with the measured quantities
so a full run doubles as a verification report (run with ``pytest -s`` to see
the lines live).  Statistical reproduction bounds are checked at fixed master
seeds; the distributional targets and tolerances are stated inline.
"""

import filecmp
import math
from multiprocessing import get_context

import numpy as np

from hmmselect.cli import main as cli_main
from hmmselect.criteria import (
    PenaltyFn,
    classify_penalty,
    default_prior_log_density,
    laplace_from_parts,
    laplace_log_evidence,
    make_ic_result,
    select,
)
from hmmselect.fit import StepSchedule, default_init_theta, fit_online
from hmmselect.harness import ExperimentConfig, run_path_study, run_replication_study
from hmmselect.kalman import kalman_loglik, kalman_mle, kalman_score
from hmmselect.models import Theta, get_model
from hmmselect.seeding import derive_seed, make_rng
from hmmselect.smc import bootstrap_step, init_filter, run_filter, score_step

from test_kalman import dense_joint_loglik
from test_models import assert_gradients_match, random_interior_theta
from test_smc import FlatObsModel, naive_score_step


def _pool_starmap(fn, argument_tuples):
    """Run independent seeded jobs across two spawned workers."""
    ctx = get_context("spawn")
    with ctx.Pool(2, initializer=_single_threaded_kernels) as pool:
        return pool.starmap(fn, argument_tuples)


def _single_threaded_kernels():
    import numba

    numba.set_num_threads(1)


# -- 1. oracle likelihood equivalence ---------------------------------------------


def test_acceptance_1_oracle_likelihood_equivalence(lg, lg_theta, lg_data_200):
    ys = lg_data_200.observations
    exact = kalman_loglik(lg_theta, ys)
    dense = dense_joint_loglik(lg_theta.natural, ys[:5])
    short = kalman_loglik(lg_theta, ys[:5])
    assert abs(short - dense) < 1e-10

    estimates = np.array([run_filter(lg, lg_theta, ys, 2000, seed).loglik for seed in range(50)])
    se = estimates.std(ddof=1) / math.sqrt(len(estimates))
    gap = abs(estimates.mean() - exact)
    assert gap < 3 * se
    print(
        f"\nACCEPTANCE 1 PASS: particle loglik mean {estimates.mean():.3f} vs exact {exact:.3f} "
        f"(|gap| {gap:.3f} < 3 SE = {3 * se:.3f}); dense-joint check {abs(short - dense):.2e} < 1e-10"
    )


# -- 2. score correctness chain ------------------------------------------------------


def test_acceptance_2_score_chain(lg, lg_theta, lg_data_200):
    # (a) analytic model gradients vs finite differences at 50 random points
    rng = np.random.default_rng(1202)
    for name in ("sv", "svj", "lg"):
        model = get_model(name)
        for _ in range(50):
            theta = random_interior_theta(model, rng)
            x_prev, x, y = rng.normal(size=3) * 1.4

            def fd(fn):
                grad = np.empty(model.d)
                for i in range(model.d):
                    e = np.zeros(model.d)
                    e[i] = 1e-6
                    up = Theta(theta.natural + e, theta.names)
                    dn = Theta(theta.natural - e, theta.names)
                    grad[i] = (fn(up) - fn(dn)) / 2e-6
                return grad

            assert_gradients_match(model.grad_log_g(theta, y, x), fd(lambda t: float(model.log_g(t, y, x))))
            assert_gradients_match(model.grad_log_q(theta, x_prev, x), fd(lambda t: float(model.log_q(t, x_prev, x))))

    # (b) exact filter score vs finite differences of the exact log-likelihood
    ys = lg_data_200.observations
    worst_rel = 0.0
    for _ in range(50):
        theta = np.array([rng.uniform(-0.9, 0.9), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5)])
        grad = kalman_score(theta, ys)
        fd = np.empty(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1e-6
            fd[i] = (kalman_loglik(theta + e, ys) - kalman_loglik(theta - e, ys)) / 2e-6
        worst_rel = max(worst_rel, float(np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-4))))
    assert worst_rel < 1e-6

    # (c) particle score vs exact score, 20 seeds, N=2000
    exact_score = kalman_score(lg_theta, ys)
    outputs = _pool_starmap(run_filter, [(lg, lg_theta, ys, 2000, seed, True) for seed in range(20)])
    scores = np.array([out.score for out in outputs])
    se = scores.std(axis=0, ddof=1) / math.sqrt(len(scores))
    z = np.abs(scores.mean(axis=0) - exact_score) / se
    assert np.all(z < 3.0)

    # (d) pairwise score update vs the literal double-loop reference
    rng_f = make_rng(77)
    state = init_filter(lg, lg_theta, ys[0], 50, rng_f, track_score=True)
    state = bootstrap_step(state, ys[1], lg, lg_theta, rng_f)
    x_new = np.asarray(lg.sample_transition(lg_theta, state.particles, rng_f))
    fast = score_step(state, x_new, ys[2], lg, lg_theta)
    ref = naive_score_step(state, x_new, ys[2], lg, lg_theta)
    gap_d = float(np.abs(fast - ref).max())
    assert gap_d < 1e-12

    print(
        f"\nACCEPTANCE 2 PASS: (a) model gradients rel err < 1e-5 at 150 points; "
        f"(b) kalman score worst rel err {worst_rel:.2e} < 1e-6; "
        f"(c) particle-vs-exact score |z| = {np.array2string(z, precision=2)} all < 3; "
        f"(d) O(N^2) update vs naive reference {gap_d:.2e} < 1e-12"
    )


# -- 3. exactness under state-independent observations --------------------------------


def test_acceptance_3_state_independent_exactness():
    model = FlatObsModel()
    theta = model.theta(0.8, 0.7)
    ys = make_rng(3).standard_normal(80)
    expected = float(np.sum(-0.5 * math.log(2 * math.pi) - 0.5 * ys**2))
    worst = 0.0
    for n_particles in (1, 7, 100):
        for scheme in ("systematic", "multinomial"):
            for threshold in (0.5, 1.1):
                out = run_filter(model, theta, ys, n_particles, 9, resample_threshold=threshold, resample_scheme=scheme)
                worst = max(worst, abs(out.loglik - expected))
    assert worst < 1e-10
    print(f"\nACCEPTANCE 3 PASS: worst |loglik - sum log g| = {worst:.2e} < 1e-10 over N in (1,7,100), both schemes")


# -- 4. nested dominance and slow growth ----------------------------------------------


def test_acceptance_4_nested_dominance_and_growth(lg):
    truth = lg.theta(0.9, math.sqrt(0.3), 1.0)

    def lambda_n(ys):
        full = kalman_mle(ys, lg.theta(0.8, 0.7, 1.1))
        small = kalman_mle(ys, lg.theta(0.9, 0.7, 1.1), frozen=("phi",))
        return full.loglik - small.loglik

    lams = []
    for seed in range(20):
        ys = lg.simulate(truth, 1000, 4000 + seed).observations
        lams.append(lambda_n(ys))
    lams = np.array(lams)
    assert np.all(lams >= -1e-6)

    # slow-growth probe along prefixes of single realisations
    growth_lines = []
    for seed in (1000, 1001):
        data = lg.simulate(truth, 100_000, seed).observations
        ratios = []
        for n in (1000, 10_000, 100_000):
            ratios.append(lambda_n(data[:n]) / math.log(math.log(n)))
        bound = 10.0 * ratios[0]
        assert all(r <= bound for r in ratios)
        growth_lines.append(f"seed {seed}: lambda/loglog = {np.array2string(np.array(ratios), precision=3)} <= {bound:.3f}")

    print(
        f"\nACCEPTANCE 4 PASS: min lambda over 20 nested fits = {lams.min():.3e} >= -1e-6; "
        + "; ".join(growth_lines)
    )


# -- 5. desk-scale selection-fraction reproduction --------------------------------------


def test_acceptance_5_table_reproduction(tmp_path):
    # scenario 1: jump model true; both criteria should recover it almost always
    cfg1 = ExperimentConfig(
        scenario=1, n_values=(5000,), n_particles=200, replications=20,
        master_seed=1, out_dir=str(tmp_path / "s1"), workers=2,
    )
    res1 = run_replication_study(cfg1)
    aic_svj = res1.count("aic", "svj", 5000)
    bic_svj = res1.count("bic", "svj", 5000)
    assert res1.failures[5000] == 0
    assert aic_svj >= 18
    assert bic_svj >= 18

    # scenario 2: plain model true; BIC must dominate AIC and clear 15/20
    cfg2 = ExperimentConfig(
        scenario=2, n_values=(5000,), n_particles=200, replications=20,
        master_seed=1, out_dir=str(tmp_path / "s2"), workers=2,
    )
    res2 = run_replication_study(cfg2)
    aic_sv = res2.count("aic", "sv", 5000)
    bic_sv = res2.count("bic", "sv", 5000)
    assert res2.failures[5000] == 0
    assert bic_sv >= 15
    assert bic_sv >= aic_sv

    print(
        f"\nACCEPTANCE 5 PASS: scenario 1 (R=20, n=5000): AIC->svj {aic_svj}/20, BIC->svj {bic_svj}/20 (both >= 18); "
        f"scenario 2: BIC->sv {bic_sv}/20 >= 15 and >= AIC->sv {aic_sv}/20"
    )


# -- 6. IC difference paths --------------------------------------------------------------


def test_acceptance_6_difference_paths(tmp_path):
    masters = (11, 12, 13, 14, 15)
    final_bic_negative = 0
    seeds_with_flip = 0
    for master in masters:
        cfg = ExperimentConfig(
            scenario=2, n_particles=200, master_seed=master,
            out_dir=str(tmp_path / f"m{master}"), workers=1,
        )
        res = run_path_study(cfg)
        aic = np.array([row[1] for row in res.rows])
        bic = np.array([row[2] for row in res.rows])
        final_bic_negative += bic[-1] < 0
        signs = np.sign(aic)
        seeds_with_flip += np.any(signs[1:] != signs[:-1])
    assert final_bic_negative >= 4
    assert seeds_with_flip >= 1
    print(
        f"\nACCEPTANCE 6 PASS: final BIC difference negative for {final_bic_negative}/5 master seeds (>= 4); "
        f"AIC difference changes sign in {seeds_with_flip}/5 seeds (>= 1)"
    )


# -- 7. penalty classifier regression ------------------------------------------------------


def test_acceptance_7_penalty_classifier():
    dims = (2, 4)
    got = (
        classify_penalty(PenaltyFn.bic_style(dims), 0, 1),
        classify_penalty(PenaltyFn.aic_style(dims), 0, 1),
        classify_penalty(PenaltyFn(lambda k, n: 0.5 * (k + 1) * math.log(math.log(n))), 0, 1),
    )
    assert got == ("strong", "inconsistent", "weak")
    print(f"\nACCEPTANCE 7 PASS: (bic-style, aic-style, half-loglog) -> {got}")


# -- 8. evidence vs BIC --------------------------------------------------------------------


def test_acceptance_8_evidence_agrees_with_bic():
    # the cancellation case is exact: d=1, J=1, n=2*pi, flat prior
    assert laplace_from_parts(-123.25, 1, 2 * math.pi, 1.0, 0.0) == -123.25

    sv, svj = get_model("sv"), get_model("svj")
    master = 202
    data = sv.simulate(sv.theta(0.9, math.sqrt(0.3)), 10_000, derive_seed(master, 0)).observations
    results = []
    for idx, model in enumerate((sv, svj)):
        report = fit_online(
            model, data, 200, StepSchedule(1.0, 2.0 / 3.0), default_init_theta(model), derive_seed(master, 1 + idx)
        )
        evidence = laplace_log_evidence(
            report.loglik_hat, report.theta_hat, data, model,
            default_prior_log_density(model), 200, derive_seed(master, 10 + idx), n_seeds=2,
        )
        results.append(make_ic_result(model.name, model.d, len(data), report.loglik_hat, log_evidence=evidence))
    by_bic = select(results, "bic")
    by_evidence = select(results, "evidence")
    assert by_evidence == by_bic
    print(
        f"\nACCEPTANCE 8 PASS: cancellation case exact; scenario-2 n=1e4 selections agree "
        f"(bic -> {results[by_bic].model_name}, evidence -> {results[by_evidence].model_name}; "
        f"log-evidence gap {results[0].log_evidence - results[1].log_evidence:+.2f})"
    )


# -- 9. CLI determinism ----------------------------------------------------------------------


def test_acceptance_9_cli_byte_determinism(tmp_path, capsys):
    def run(argv):
        assert cli_main(argv) == 0
        return capsys.readouterr().out

    sims = []
    for tag in ("a", "b"):
        out = tmp_path / f"sim_{tag}.csv"
        run(["simulate", "--model", "svj", "--n", "200", "--seed", "5", "--out", str(out)])
        sims.append(out)
    assert filecmp.cmp(*sims, shallow=False)
    data = sims[0]

    outs = [run(["oracle", "--data", str(data), "--phi", "0.5", "--sigma-x", "0.8", "--sigma-v", "1.0"]) for _ in range(2)]
    assert outs[0] == outs[1]

    fits = [run(["fit", "--model", "sv", "--data", str(data), "--n-particles", "50", "--seed", "9"]) for _ in range(2)]
    assert fits[0] == fits[1]

    compares = []
    for tag in ("a", "b"):
        out = tmp_path / f"ic_{tag}.csv"
        compares.append(run(["compare", "--data", str(data), "--models", "sv,svj", "--n-particles", "50", "--seed", "3", "--out", str(out)]))
    assert compares[0] == compares[1]
    assert filecmp.cmp(tmp_path / "ic_a.csv", tmp_path / "ic_b.csv", shallow=False)

    rep_files = []
    for tag in ("a", "b"):
        out_dir = tmp_path / f"study_{tag}"
        run(["replicate", "--scenario", "2", "--r", "2", "--n", "150", "--n-particles", "40",
             "--seed", "3", "--out-dir", str(out_dir), "--workers", "2"])
        rep_files.append(out_dir)
    for name in ("replications_scenario2.csv", "fractions_scenario2.csv"):
        assert filecmp.cmp(rep_files[0] / name, rep_files[1] / name, shallow=False)

    path_files = []
    for tag in ("a", "b"):
        out_dir = tmp_path / f"path_{tag}"
        run(["path", "--checkpoints", "80,160", "--n-particles", "40", "--seed", "4", "--out-dir", str(out_dir)])
        path_files.append(out_dir)
    for name in ("path_scenario2.csv", "path_scenario2.gp"):
        assert filecmp.cmp(path_files[0] / name, path_files[1] / name, shallow=False)

    print("\nACCEPTANCE 9 PASS: simulate/oracle/fit/compare/replicate/path byte-identical across reruns")
