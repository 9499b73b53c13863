import math

import numpy as np
import pytest

from hmmselect.fit import (
    FitReport,
    OnlineFitState,
    StepSchedule,
    default_init_theta,
    fit_online,
    online_gradient_step,
    step_size,
)
from hmmselect.kalman import kalman_mle
from hmmselect.seeding import derive_seed, make_rng
from hmmselect.smc import run_filter


def test_step_size_examples():
    assert step_size(StepSchedule(1.0, 2.0 / 3.0), 1) == pytest.approx(1.0)
    assert step_size(StepSchedule(1.0, 2.0 / 3.0), 8) == pytest.approx(0.25)
    assert step_size(StepSchedule(2.0, 1.0), 4) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        step_size(StepSchedule(), 0)


def test_schedule_summability_window():
    StepSchedule(1.0, 1.0)
    StepSchedule(1.0, 0.51)
    for bad in (0.5, 0.3, 1.01, 2.0):
        with pytest.raises(ValueError):
            StepSchedule(1.0, bad)
    with pytest.raises(ValueError):
        StepSchedule(-1.0, 0.75)


def test_step_sizes_strictly_decreasing_up_to_1e6():
    sched = StepSchedule(1.0, 2.0 / 3.0)
    ks = np.unique(np.geomspace(1, 10**6, 200).astype(int))
    vals = np.array([sched(int(k)) for k in ks])
    assert np.all(np.diff(vals) < 0)


def test_zero_schedule_advances_filter_but_not_theta(sv):
    theta0 = sv.theta(0.6, 0.9)
    ys = sv.simulate(sv.theta(0.9, math.sqrt(0.3)), 40, 12).observations
    rng = make_rng(3)
    state = OnlineFitState.initial(sv, StepSchedule(0.0, 2.0 / 3.0), theta0)
    for y in ys:
        state = online_gradient_step(state, y, sv, rng, n_particles=32)
    np.testing.assert_array_equal(state.theta.natural, theta0.natural)
    assert state.k == 40
    assert state.particle.t == 39
    assert len(state.trace) == 40


def test_zero_schedule_telescopes_to_filter_score(lg, lg_theta):
    ys = lg.simulate(lg_theta, 300, 21).observations
    seed = 55
    rng = make_rng(derive_seed(seed, 0))
    state = OnlineFitState.initial(lg, StepSchedule(0.0, 2.0 / 3.0), lg_theta)
    for y in ys:
        state = online_gradient_step(state, y, lg, rng, n_particles=64)
    out = run_filter(lg, lg_theta, ys, 64, derive_seed(seed, 0), track_score=True)
    np.testing.assert_allclose(state.score_telescope, out.score, rtol=0, atol=1e-10)
    np.testing.assert_array_equal(state.prev_score, out.score)
    assert state.particle.loglik_accum == out.loglik


def test_fit_online_minimal_data(sv):
    report = fit_online(
        sv, [0.3, -0.8], 16, StepSchedule(), default_init_theta(sv), 9
    )
    assert isinstance(report, FitReport)
    assert np.isfinite(report.loglik_hat)
    assert report.n_obs == 2
    with pytest.raises(ValueError):
        fit_online(sv, [0.3], 16, StepSchedule(), default_init_theta(sv), 9)


def test_fit_online_trace_csv(tmp_path, sv):
    ys = sv.simulate(sv.theta(0.9, math.sqrt(0.3)), 25, 4).observations
    trace_path = tmp_path / "trace.csv"
    report = fit_online(sv, ys, 32, StepSchedule(), default_init_theta(sv), 5, trace_path=trace_path)
    lines = trace_path.read_text().splitlines()
    assert lines[0] == "k,phi,sigma_x"
    assert len(lines) == 26
    assert lines[1].startswith("1,")
    assert report.trace_path == str(trace_path)


def test_fit_online_is_deterministic(sv):
    ys = sv.simulate(sv.theta(0.9, math.sqrt(0.3)), 200, 6).observations
    a = fit_online(sv, ys, 64, StepSchedule(), default_init_theta(sv), 17)
    b = fit_online(sv, ys, 64, StepSchedule(), default_init_theta(sv), 17)
    np.testing.assert_array_equal(a.theta_hat.natural, b.theta_hat.natural)
    assert a.loglik_hat == b.loglik_hat


def test_iterates_stay_in_constraint_interior(svj):
    ys = svj.simulate(svj.theta(0.9, math.sqrt(0.3), math.sqrt(0.6), 0.6), 300, 8).observations
    rng = make_rng(2)
    state = OnlineFitState.initial(svj, StepSchedule(), default_init_theta(svj))
    for y in ys:
        state = online_gradient_step(state, y, svj, rng, n_particles=64)
        svj.validate(state.theta, interior=True)


def test_extreme_start_survives_via_clipping(svj):
    # near-degenerate start: gradients explode early, the clip keeps steps bounded
    ys = svj.simulate(svj.theta(0.9, math.sqrt(0.3), math.sqrt(0.6), 0.6), 400, 10).observations
    start = svj.theta(0.0, 3.0, 3.0, 0.98)
    report = fit_online(svj, ys, 64, StepSchedule(), start, 3)
    assert np.isfinite(report.loglik_hat)
    svj.validate(report.theta_hat, interior=True)


def test_sv_fit_approaches_truth(sv):
    truth = sv.theta(0.9, math.sqrt(0.3))
    ys = sv.simulate(truth, 10_000, 2024).observations
    report = fit_online(sv, ys, 200, StepSchedule(1.0, 2.0 / 3.0), default_init_theta(sv), 7)
    assert 0.8 < report.theta_hat.get("phi") < 1.0


def test_online_fit_tracks_exact_mle(lg, lg_theta):
    ys = lg.simulate(lg_theta, 100_000, 31).observations
    report = fit_online(
        lg, ys, 200, StepSchedule(1.0, 2.0 / 3.0), lg.theta(0.7, 0.8, 1.2), 13
    )
    exact = kalman_mle(ys, lg.theta(0.8, 0.7, 1.1))
    assert exact.converged
    assert abs(report.theta_hat.get("phi") - exact.theta.get("phi")) < 0.05
    # a particle log-likelihood cannot exceed the exact maximum by more than noise
    reruns = np.array(
        [run_filter(lg, report.theta_hat, ys, 200, s).loglik for s in range(6)]
    )
    se = reruns.std(ddof=1) / math.sqrt(len(reruns))
    assert report.loglik_hat <= exact.loglik + 3 * se
