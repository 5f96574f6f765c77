"""Core loop: accept/reject law, stop rules, estimators, determinism."""

from __future__ import annotations

import math

import numpy as np
import pytest

from osstar import engine
from osstar.engine import (
    EmptyHistory, History, Metrics, Mode, RatioOutOfRange, RefinementExhausted,
    StopConfig, TrialRecord, accept_or_reject, metrics, run, should_stop,
)

from conftest import SnapToTargetRefiner, TableProposal, TableTarget, two_point


def frozen_run(trials: int, seed: int = 0):
    target, proposal = two_point()
    stop = StopConfig(ar_threshold=1.1, max_trials=trials)
    return run(Mode.SAMPLING, target, proposal, None, stop, seed)


def test_two_point_long_run_acceptance_rate():
    # P(X)/Q(X) = (1+3)/(2+4) = 2/3; cumulative AR converges there.
    result = frozen_run(100_000, seed=7)
    ar = result.history.ar_cumulative()
    assert abs(ar - 4.0 / 6.0) < 0.02


def test_two_point_accepted_sample_law():
    # Accepted configs are exact draws from p-bar = (1/4, 3/4).
    result = frozen_run(50_000, seed=3)
    n_b = sum(1 for s in result.samples if s == ("b",))
    assert abs(n_b / len(result.samples) - 0.75) < 0.02


def test_uniform_equal_target_stops_immediately():
    # p = q = (1, 1): first trial accepts; window of 1 stops the run.
    target = TableTarget({("a",): 0.0, ("b",): 0.0})
    proposal = TableProposal({("a",): 0.0, ("b",): 0.0})
    stop = StopConfig(ar_window=1, ar_threshold=0.5)
    result = run(Mode.SAMPLING, target, proposal, None, stop, seed=0)
    assert result.history.trial_count == 1
    assert result.history.records[0].accepted
    assert result.history.ar_cumulative() == 1.0


def test_optimization_snap_refiner_certificate():
    # argmax q is b (4); rejected once (3/4 < 1), then q(b) = 3 certifies b.
    target, proposal = two_point()
    refiner = SnapToTargetRefiner(target)
    result = run(Mode.OPTIMIZATION, target, proposal, refiner,
                 StopConfig(), seed=0)
    assert result.argmax == ("b",)
    assert result.certificate_gap_log == 0.0
    assert result.history.trial_count == 2
    assert result.history.refine_count == 1
    # only the final record is accepted
    assert [r.accepted for r in result.history.records] == [False, True]


def test_optimization_accept_requires_ratio_one_by_default():
    rng = np.random.default_rng(0)
    assert not accept_or_reject(Mode.OPTIMIZATION, 0.999999, rng)
    assert accept_or_reject(Mode.OPTIMIZATION, 1.0, rng)
    assert accept_or_reject(Mode.OPTIMIZATION, 0.95, rng, tolerance=0.1)


def test_ratio_out_of_range():
    rng = np.random.default_rng(0)
    with pytest.raises(RatioOutOfRange):
        accept_or_reject(Mode.SAMPLING, 1.001, rng)
    # tolerance just above 1 is allowed (float fuzz)
    assert accept_or_reject(Mode.OPTIMIZATION, 1.0 + 5e-10, rng)


def test_sampling_accept_probability_matches_ratio():
    rng = np.random.default_rng(42)
    n = 200_000
    hits = sum(accept_or_reject(Mode.SAMPLING, 0.3, rng) for _ in range(n))
    assert abs(hits / n - 0.3) < 0.01


def test_domination_violation_detected():
    target = TableTarget({("a",): 0.0})
    proposal = TableProposal({("a",): -1.0})
    with pytest.raises(engine.DominationViolated):
        run(Mode.SAMPLING, target, proposal, None,
            StopConfig(max_trials=10), seed=0)


def test_refinement_budget_error():
    target, proposal = two_point()
    refiner = SnapToTargetRefiner(target)
    stop = StopConfig(ar_window=1, ar_threshold=1.0, max_refinements=0,
                      max_trials=50)
    with pytest.raises(RefinementExhausted):
        # seed chosen so the first trial rejects
        run(Mode.SAMPLING, target, proposal, refiner, stop, seed=1)


def test_should_stop_windowed_rule():
    stop = StopConfig(ar_window=4, ar_threshold=0.5)
    h = History()
    for accepted in [True, True, False]:
        h.append(TrialRecord(("x",), 0.0, 0.0, accepted, 0.0, 1.0))
    # only 3 trials exist: window not yet full
    assert not should_stop(h, Mode.SAMPLING, stop)
    h.append(TrialRecord(("x",), 0.0, 0.0, False, 0.0, 1.0))
    # window AR = 2/4 >= 0.5
    assert should_stop(h, Mode.SAMPLING, stop)
    h.append(TrialRecord(("x",), 0.0, 0.0, False, 0.0, 1.0))
    # window AR = 1/4 < 0.5
    assert not should_stop(h, Mode.SAMPLING, stop)


def test_accepts_never_trigger_refinement():
    calls = []

    class CountingRefiner:
        def refine(self, proposal, config, log_p, log_q):
            calls.append(config)
            return proposal

    target = TableTarget({("a",): 0.0})
    proposal = TableProposal({("a",): 0.0})
    run(Mode.SAMPLING, target, proposal, CountingRefiner(),
        StopConfig(ar_threshold=1.1, max_trials=100), seed=0)
    assert calls == []


def test_single_trial_z_hat():
    # One trial with r = 0.5 and Q(X) = 4 gives Z_hat = 2.
    h = History()
    h.append(TrialRecord(("x",), math.log(0.5), 0.0, True,
                         math.log(4.0), 1.0))
    m = metrics(h, math.log(4.0))
    assert math.isclose(math.exp(m.z_hat_log), 2.0, rel_tol=1e-12)
    assert math.isclose(m.pi_hat, 0.5, rel_tol=1e-12)


def test_tau_tot_arithmetic():
    # n=1, tau_samp=0.001, pi_hat=0.1, tau_ref=3 -> 3.01 s.
    h = History()
    # one trial with ratio 0.1 against mass 1.0 => pi_hat = 0.1
    h.append(TrialRecord(("x",), math.log(0.1), 0.0, False, 0.0, 0.001))
    h.add_refinement(3.0)
    m = metrics(h, 0.0, n=1)
    assert math.isclose(m.pi_hat, 0.1, rel_tol=1e-12)
    assert math.isclose(m.tau_tot_est, 3.01, rel_tol=1e-12)


def test_metrics_empty_history_raises():
    with pytest.raises(EmptyHistory):
        metrics(History(), 0.0)


def test_z_hat_unbiased_on_toy():
    # Frozen two-point proposal: E[Z_hat] = P(X) = 4.
    target, proposal = two_point()
    z_vals = []
    for seed in range(50):
        result = run(Mode.SAMPLING, target, proposal, None,
                     StopConfig(ar_threshold=1.1, max_trials=400), seed=seed)
        m = metrics(result.history, proposal.mass_log())
        z_vals.append(math.exp(m.z_hat_log))
    assert abs(np.mean(z_vals) - 4.0) < 0.1


def test_history_bit_identical_across_reruns():
    a = frozen_run(500, seed=11).history
    b = frozen_run(500, seed=11).history
    assert len(a.records) == len(b.records)
    for ra, rb in zip(a.records, b.records):
        assert ra == rb


def test_trial_csv_deterministic(tmp_path):
    result = frozen_run(200, seed=5)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    engine.write_trial_csv(result.history, p1)
    engine.write_trial_csv(result.history, p2)
    assert p1.read_bytes() == p2.read_bytes()
    header = p1.read_text().splitlines()[0]
    assert header == ("trial,accepted,log_p,log_q,q_mass_log,ar_cum,"
                      "ar_window,z_hat_log,pi_hat,tau_tot_est")
    assert len(p1.read_text().splitlines()) == 201
